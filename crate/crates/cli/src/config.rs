//! TOML configuration files. Every field has a default except the ones that
//! name inputs; `btv print-config` prints the defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use btv_core::btv::GenConfig;
use btv_core::campaign::{CampaignConfig, DropBand};
use btv_core::estimate::SamplePolicy;
use btv_core::inject::{InjectionKind, InjectionSpec};
use btv_core::nn::{Architecture, SyntheticBlobs, TrainConfig};
use btv_core::reference::ReferenceSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Parses a TOML document, naming `what` in errors.
pub fn parse<T: DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    toml::from_str(text).map_err(|e| CliError::config(format!("{what}: {e}")))
}

pub fn render<T: Serialize>(cfg: &T) -> String {
    toml::to_string_pretty(cfg).expect("configs serialize to TOML")
}

// ---- train ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default = "default_model_name")]
    pub name: String,
    /// Weight-initialization seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: Architecture,
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_model_name() -> String {
    "model".into()
}

fn default_train_size() -> usize {
    2000
}

fn default_test_size() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated Gaussian class blobs.
    Synthetic {
        #[serde(default)]
        blobs: SyntheticBlobs,
        #[serde(default = "default_train_size")]
        train_size: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
    /// Dataset files written by an earlier `train` run.
    Files { train: PathBuf, test: PathBuf },
}

impl TrainFile {
    pub fn from_reference(spec: &ReferenceSpec) -> Self {
        TrainFile {
            name: spec.name.clone(),
            seed: Some(spec.init_seed),
            model: spec.arch.clone(),
            data: DataSource::Synthetic {
                blobs: spec.data.clone(),
                train_size: spec.train_size,
                test_size: spec.test_size,
            },
            train: spec.train.clone(),
        }
    }
}

// ---- genbtv ----

fn default_offset() -> f64 {
    0.05
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `t = clean σ_y + offset`.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Search `generator.alpha_grid` instead of using `generator.alpha` alone.
    #[serde(default = "yes")]
    pub search_alpha: bool,
    /// Samples per calibration estimate; defaults to the sample-count policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_samples: Option<usize>,
    #[serde(default)]
    pub generator: GenConfig,
}

impl Default for GenFile {
    fn default() -> Self {
        GenFile {
            seed: None,
            offset: default_offset(),
            search_alpha: true,
            calibration_samples: None,
            generator: GenConfig::default(),
        }
    }
}

// ---- campaign ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    /// Master seed of every experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub subjects: BTreeMap<String, Subject>,
    pub experiments: Vec<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_spread: Option<LogitSpreadRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceName {
    Mlp,
    Cnn,
}

impl ReferenceName {
    pub fn spec(self) -> ReferenceSpec {
        match self {
            ReferenceName::Mlp => ReferenceSpec::mlp(),
            ReferenceName::Cnn => ReferenceSpec::cnn(),
        }
    }
}

fn default_random_inputs() -> usize {
    100
}

/// A model under test with its test vector and optional labelled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum Subject {
    /// Files from earlier `train` / `quantize` / `genbtv` runs. Paths are
    /// relative to the config file. A float model is quantized on load.
    Files {
        model: PathBuf,
        btv: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dataset: Option<PathBuf>,
        #[serde(default)]
        false_positive_repeats: usize,
        #[serde(default)]
        random_inputs: usize,
    },
    /// A built-in reference model trained, quantized and given a test vector in process.
    Reference {
        reference: ReferenceName,
        #[serde(default)]
        generator: GenConfig,
        #[serde(default = "default_offset")]
        offset: f64,
        #[serde(default)]
        false_positive_repeats: usize,
        /// Standard-normal inputs averaged for the random-input spread.
        #[serde(default = "default_random_inputs")]
        random_inputs: usize,
    },
}

fn default_mode() -> String {
    "coverage".into()
}

fn default_runs() -> usize {
    1000
}

/// One campaign over one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub subject: String,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Cells with fixed magnitudes.
    #[serde(default)]
    pub grid: Vec<InjectionSpec>,
    /// Cells whose magnitude is chosen by accuracy-drop pre-scan; appended after `grid`.
    #[serde(default)]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default)]
    pub sweep_cell: usize,
    #[serde(default)]
    pub layer_fractions: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub sample_policy: SamplePolicy,
}

fn default_fraction() -> f64 {
    1.0
}

/// The smallest candidate magnitude whose mean accuracy drop lies in
/// `[min_drop, max_drop)` percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub kind: InjectionKind,
    pub candidates: Vec<f64>,
    pub min_drop: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_drop: Option<f64>,
    #[serde(default = "default_fraction")]
    pub layer_fraction: f64,
    /// Runs per candidate; defaults to the experiment's `runs`, which makes the
    /// pre-scan drop equal the campaign's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prescan_runs: Option<usize>,
}

impl Target {
    pub fn band(&self) -> DropBand {
        match self.max_drop {
            Some(hi) => DropBand::new(self.min_drop, hi),
            None => DropBand::at_least(self.min_drop),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.candidates.is_empty() {
            return Err(CliError::config(format!("{} target has no candidates", self.kind)));
        }
        if self.max_drop.is_some_and(|hi| !(hi > self.min_drop)) {
            return Err(CliError::config(format!("{} target has an empty drop band", self.kind)));
        }
        Ok(())
    }
}

impl Experiment {
    /// The core campaign configuration with `grid` as the full cell list.
    pub fn campaign(&self, grid: Vec<InjectionSpec>, seed: u64) -> CampaignConfig {
        CampaignConfig {
            mode: self.mode.clone(),
            grid,
            runs: self.runs,
            seed,
            offsets: self.offsets.clone(),
            sweep_cell: self.sweep_cell,
            layer_fractions: self.layer_fractions.clone(),
            n_samples: self.n_samples,
            sample_policy: self.sample_policy,
        }
    }
}

fn default_spread_samples() -> usize {
    8
}

/// Per-class logits of the clean model and of perturbed copies on the same samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitSpreadRequest {
    pub subject: String,
    #[serde(default = "default_spread_samples")]
    pub samples: usize,
    #[serde(default)]
    pub scenarios: Vec<InjectionSpec>,
}

impl CampaignFile {
    pub fn validate(&self) -> CliResult<()> {
        if self.experiments.is_empty() {
            return Err(CliError::config("campaign config has no experiments"));
        }
        let mut names = std::collections::BTreeSet::new();
        for e in &self.experiments {
            if !self.subjects.contains_key(&e.subject) {
                return Err(CliError::config(format!(
                    "experiment `{}`: unknown subject `{}`",
                    e.name, e.subject
                )));
            }
            if !names.insert(&e.name) {
                return Err(CliError::config(format!("duplicate experiment name `{}`", e.name)));
            }
            for t in &e.targets {
                t.validate()?;
            }
        }
        if let Some(ls) = &self.logit_spread {
            if !self.subjects.contains_key(&ls.subject) {
                return Err(CliError::config(format!("logit_spread: unknown subject `{}`", ls.subject)));
            }
        }
        Ok(())
    }

    /// A small file-based template.
    pub fn template() -> Self {
        let mut subjects = BTreeMap::new();
        subjects.insert(
            "mut".to_string(),
            Subject::Files {
                model: "model.qmodel".into(),
                btv: "model.btv".into(),
                dataset: Some("test.data".into()),
                false_positive_repeats: 0,
                random_inputs: 0,
            },
        );
        CampaignFile {
            seed: Some(1),
            subjects,
            experiments: vec![Experiment {
                name: "coverage".into(),
                subject: "mut".into(),
                mode: default_mode(),
                runs: default_runs(),
                grid: InjectionKind::ALL
                    .iter()
                    .map(|&k| InjectionSpec::with_magnitude(k, if k.is_fault() { 0.005 } else { 0.1 }, 0))
                    .collect(),
                targets: Vec::new(),
                offsets: Vec::new(),
                sweep_cell: 0,
                layer_fractions: Vec::new(),
                n_samples: None,
                sample_policy: SamplePolicy::default(),
            }],
            logit_spread: None,
        }
    }
}

/// Bundled configuration files.
pub mod bundled {
    pub const TRAIN_MLP: &str = include_str!("../configs/train-mlp.toml");
    pub const TRAIN_CNN: &str = include_str!("../configs/train-cnn.toml");
    pub const GENBTV: &str = include_str!("../configs/genbtv.toml");
    pub const REPRODUCE: &str = include_str!("../configs/reproduce.toml");
}

/// Loads and parses a config file through the session (recording its digest).
pub fn load<T: DeserializeOwned>(session: &mut crate::session::Session<'_>, path: &Path, what: &str) -> CliResult<T> {
    let bytes = session.read(path, what)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::config(format!("{what} `{}` is not UTF-8", path.display())))?;
    parse(&text, &format!("{what} `{}`", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_dataset_path_names_the_field() {
        let err = parse::<TrainFile>("[data]\nsource = \"files\"\ntest = \"t.data\"\n", "train config")
            .unwrap_err()
            .to_string();
        assert!(err.contains("train"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse::<GenFile>("ofset = 0.1", "gen").is_err());
        assert!(parse::<TrainFile>("[data]\nsource = \"synthetic\"\nbogus = 1\n", "train").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let g = GenFile::default();
        assert_eq!(parse::<GenFile>(&render(&g), "gen").unwrap(), g);
        let t = TrainFile::from_reference(&ReferenceSpec::cnn());
        assert_eq!(parse::<TrainFile>(&render(&t), "train").unwrap(), t);
        let c = CampaignFile::template();
        assert_eq!(parse::<CampaignFile>(&render(&c), "campaign").unwrap(), c);
    }

    #[test]
    fn bundled_configs_parse_and_validate() {
        let mlp: TrainFile = parse(bundled::TRAIN_MLP, "mlp").unwrap();
        assert_eq!(mlp, TrainFile::from_reference(&ReferenceSpec::mlp()));
        let cnn: TrainFile = parse(bundled::TRAIN_CNN, "cnn").unwrap();
        assert_eq!(cnn, TrainFile::from_reference(&ReferenceSpec::cnn()));
        assert_eq!(parse::<GenFile>(bundled::GENBTV, "gen").unwrap(), GenFile::default());
        parse::<CampaignFile>(bundled::REPRODUCE, "reproduce").unwrap().validate().unwrap();
    }

    #[test]
    fn target_band_is_half_open() {
        let t: Target = parse("kind = \"bit_flip\"\ncandidates = [0.01]\nmin_drop = 1.0\nmax_drop = 2.0", "t").unwrap();
        assert!(t.band().contains(1.0) && !t.band().contains(2.0));
        let open: Target = parse("kind = \"additive\"\ncandidates = [0.1]\nmin_drop = 5.0", "t").unwrap();
        assert!(open.band().contains(1e9));
    }
}
