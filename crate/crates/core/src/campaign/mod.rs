//! Monte-Carlo fault campaigns.
//!
//! A campaign perturbs the clean model `M` times per grid cell, estimates σ_y
//! of every perturbed copy with the stored test vector, and reports how often
//! the spread reaches the threshold (coverage). Verifiable coverage also
//! requires the perturbed model to lose accuracy on a dataset.
//!
//! Run `i` of every cell uses the seed `mix(master_seed, i)`: cells share
//! their random streams (common random numbers), so differences between
//! cells come from the cell parameters and not from sampling noise. Runs are
//! evaluated in parallel and collected in run order, and all reductions are
//! sequential, so results are bit-identical for any thread count.

mod modes;
mod prescan;
mod report;

pub use modes::{CampaignMode, Coverage, Layerwise, ModeRegistry, OffsetSweep, Verifiable};
pub use prescan::{pick_in_band, prescan, DropBand, PrescanPoint};
pub use report::{logit_spread, logit_spread_csv, records_csv, summary_json, LogitSpreadRow};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::btv::BayesianTestVector;
use crate::error::{Error, Result};
use crate::estimate::{estimate_seeded, SamplePolicy};
use crate::inject::{InjectionKind, InjectionSpec, InjectorRegistry};
use crate::nn::{evaluate_accuracy, Dataset, Network};
use crate::quant::QuantizedModel;
use crate::rng::{mix, stream};

fn default_runs() -> usize {
    1000
}

/// What to run. Model, test vector and dataset are supplied separately as
/// [`CampaignInputs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Registered mode name: `coverage`, `verifiable`, `layerwise` or `offset_sweep`.
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Injection templates, one per grid cell. Their `seed` is ignored.
    pub grid: Vec<InjectionSpec>,
    /// Runs `M` per cell.
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Threshold offsets for `offset_sweep`, ascending.
    #[serde(default)]
    pub offsets: Vec<f64>,
    /// Grid cell rerun by `offset_sweep`.
    #[serde(default)]
    pub sweep_cell: usize,
    /// Layer fractions for `layerwise`; each is crossed with every template.
    #[serde(default)]
    pub layer_fractions: Vec<f64>,
    /// Samples per estimate; defaults to the sample-count policy.
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub sample_policy: SamplePolicy,
}

fn default_mode() -> String {
    "coverage".into()
}

impl CampaignConfig {
    pub fn new(grid: Vec<InjectionSpec>, runs: usize, seed: u64) -> Self {
        CampaignConfig {
            mode: default_mode(),
            grid,
            runs,
            seed,
            offsets: Vec::new(),
            sweep_cell: 0,
            layer_fractions: Vec::new(),
            n_samples: None,
            sample_policy: SamplePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be ≥ 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("injection grid is empty".into()));
        }
        for spec in &self.grid {
            spec.validate()?;
        }
        if self.n_samples == Some(0) {
            return Err(Error::Config("n_samples must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Seed of run `run`, shared by every cell.
    pub fn run_seed(&self, run: usize) -> u64 {
        mix(self.seed, run as u64)
    }
}

/// Models and data a campaign operates on.
#[derive(Clone, Copy)]
pub struct CampaignInputs<'a> {
    pub clean: &'a QuantizedModel,
    pub btv: &'a BayesianTestVector,
    pub dataset: Option<&'a Dataset>,
}

/// One perturbed model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub cell: usize,
    pub kind: InjectionKind,
    pub magnitude: f64,
    pub layer_fraction: f64,
    pub offset: Option<f64>,
    pub run: usize,
    pub seed: u64,
    pub sigma_y: f64,
    pub threshold: f64,
    /// `None` for invalid (non-finite) runs.
    pub detected: Option<bool>,
    pub accuracy: Option<f64>,
}

impl RunRecord {
    pub fn is_valid(&self) -> bool {
        self.detected.is_some()
    }

    /// Detected and, with a dataset, measurably less accurate than the clean model.
    pub fn verified(&self, baseline: f64) -> Option<bool> {
        Some(self.detected? && self.accuracy? < baseline)
    }
}

/// Aggregates of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub kind: InjectionKind,
    pub magnitude: f64,
    pub layer_fraction: f64,
    pub offset: Option<f64>,
    pub threshold: f64,
    pub runs: usize,
    pub invalid: usize,
    pub detected: usize,
    /// `100 · detected / valid runs`.
    pub coverage: f64,
    pub verified: Option<usize>,
    pub verifiable_coverage: Option<f64>,
    pub mean_sigma: f64,
    pub std_sigma: f64,
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignResult {
    pub mode: String,
    pub seed: u64,
    pub runs: usize,
    pub n_samples: usize,
    pub clean_sigma: f64,
    pub baseline_accuracy: Option<f64>,
    pub cells: Vec<CellSummary>,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl CampaignResult {
    pub fn invalid_runs(&self) -> usize {
        self.cells.iter().map(|c| c.invalid).sum()
    }
}

/// A concrete cell: an injection template plus the threshold it is judged against.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cell {
    pub spec: InjectionSpec,
    pub threshold: f64,
    pub offset: Option<f64>,
}

/// σ_y and optional accuracy of one perturbed model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Measurement {
    pub sigma_y: f64,
    pub accuracy: Option<f64>,
}

pub(crate) struct Engine<'a> {
    pub cfg: &'a CampaignConfig,
    pub inputs: CampaignInputs<'a>,
    pub injectors: &'a InjectorRegistry,
    pub n_samples: usize,
}

impl<'a> Engine<'a> {
    pub fn new(
        cfg: &'a CampaignConfig,
        inputs: CampaignInputs<'a>,
        injectors: &'a InjectorRegistry,
    ) -> Result<Self> {
        cfg.validate()?;
        if inputs.clean.input_shape() != inputs.btv.shape() {
            return Err(Error::dim(format!(
                "test vector shape {:?} does not match model input {:?}",
                inputs.btv.shape(),
                inputs.clean.input_shape()
            )));
        }
        let n_samples = match cfg.n_samples {
            Some(n) => n,
            None => cfg.sample_policy.sample_count(inputs.clean.num_classes())?,
        };
        Ok(Engine {
            cfg,
            inputs,
            injectors,
            n_samples,
        })
    }

    pub fn dataset(&self) -> Result<&'a Dataset> {
        self.inputs
            .dataset
            .ok_or_else(|| Error::Config(format!("mode `{}` needs a dataset", self.cfg.mode)))
    }

    pub fn baseline_accuracy(&self) -> Result<Option<f64>> {
        self.inputs
            .dataset
            .map(|d| evaluate_accuracy(self.inputs.clean, d))
            .transpose()
    }

    /// Perturbs and measures every run of `spec`, in run order.
    pub fn measure(&self, spec: &InjectionSpec, with_accuracy: bool) -> Result<Vec<Measurement>> {
        let injector = self.injectors.for_spec(spec)?;
        let dataset = if with_accuracy {
            Some(self.dataset()?)
        } else {
            None
        };
        (0..self.cfg.runs)
            .into_par_iter()
            .map(|run| {
                let seed = self.cfg.run_seed(run);
                let perturbed = injector.perturb(self.inputs.clean, &spec.clone().with_seed(seed))?;
                let est = estimate_seeded(
                    &perturbed,
                    self.inputs.btv,
                    self.n_samples,
                    mix(seed, stream::ESTIMATE),
                )?;
                let accuracy = dataset.map(|d| evaluate_accuracy(&perturbed, d)).transpose()?;
                Ok(Measurement {
                    sigma_y: est.sigma_y,
                    accuracy,
                })
            })
            .collect()
    }

    pub fn records(&self, index: usize, cell: &Cell, ms: &[Measurement]) -> Vec<RunRecord> {
        ms.iter()
            .enumerate()
            .map(|(run, m)| RunRecord {
                cell: index,
                kind: cell.spec.kind,
                magnitude: cell.spec.magnitude(),
                layer_fraction: cell.spec.layer_fraction,
                offset: cell.offset,
                run,
                seed: self.cfg.run_seed(run),
                sigma_y: m.sigma_y,
                threshold: cell.threshold,
                detected: m.sigma_y.is_finite().then_some(m.sigma_y >= cell.threshold),
                accuracy: m.accuracy,
            })
            .collect()
    }

    pub fn finish(
        &self,
        baseline_accuracy: Option<f64>,
        cells: Vec<(Cell, Vec<RunRecord>)>,
    ) -> CampaignResult {
        let mut summaries = Vec::with_capacity(cells.len());
        let mut records = Vec::new();
        for (index, (cell, recs)) in cells.into_iter().enumerate() {
            summaries.push(summarize(index, &cell, &recs, baseline_accuracy));
            records.extend(recs);
        }
        CampaignResult {
            mode: self.cfg.mode.clone(),
            seed: self.cfg.seed,
            runs: self.cfg.runs,
            n_samples: self.n_samples,
            clean_sigma: self.inputs.btv.clean_sigma(),
            baseline_accuracy,
            cells: summaries,
            records,
        }
    }
}

fn percent(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

fn summarize(index: usize, cell: &Cell, recs: &[RunRecord], baseline: Option<f64>) -> CellSummary {
    let valid: Vec<&RunRecord> = recs.iter().filter(|r| r.is_valid()).collect();
    let detected = valid.iter().filter(|r| r.detected == Some(true)).count();
    let sigmas: Vec<f64> = valid.iter().map(|r| r.sigma_y).collect();
    let (mean_sigma, std_sigma) = if sigmas.is_empty() {
        (0.0, 0.0)
    } else {
        let n = sigmas.len() as f64;
        let mean = sigmas.iter().sum::<f64>() / n;
        let var = sigmas.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let accuracies: Option<Vec<f64>> = valid.iter().map(|r| r.accuracy).collect();
    let mean_accuracy = accuracies
        .filter(|a| !a.is_empty())
        .map(|a| a.iter().sum::<f64>() / a.len() as f64);
    let verified = baseline.filter(|_| mean_accuracy.is_some()).map(|b| {
        valid
            .iter()
            .filter(|r| r.verified(b) == Some(true))
            .count()
    });
    CellSummary {
        cell: index,
        kind: cell.spec.kind,
        magnitude: cell.spec.magnitude(),
        layer_fraction: cell.spec.layer_fraction,
        offset: cell.offset,
        threshold: cell.threshold,
        runs: recs.len(),
        invalid: recs.len() - valid.len(),
        detected,
        coverage: percent(detected, valid.len()),
        verified,
        verifiable_coverage: verified.map(|v| percent(v, valid.len())),
        mean_sigma,
        std_sigma,
        mean_accuracy,
    }
}

/// Coverage of every grid cell at the stored threshold.
pub fn run_campaign(cfg: &CampaignConfig, inputs: CampaignInputs<'_>) -> Result<CampaignResult> {
    Coverage.run(cfg, inputs, &InjectorRegistry::builtin())
}

/// Coverage plus verifiable coverage against the clean model's accuracy.
pub fn run_verifiable_campaign(
    cfg: &CampaignConfig,
    inputs: CampaignInputs<'_>,
) -> Result<CampaignResult> {
    Verifiable.run(cfg, inputs, &InjectorRegistry::builtin())
}

/// Coverage of each template restricted to each fraction of layers.
pub fn layerwise_campaign(
    cfg: &CampaignConfig,
    inputs: CampaignInputs<'_>,
) -> Result<CampaignResult> {
    Layerwise.run(cfg, inputs, &InjectorRegistry::builtin())
}

/// Coverage of one cell for thresholds `clean_sigma + offset`.
pub fn offset_sweep(cfg: &CampaignConfig, inputs: CampaignInputs<'_>) -> Result<CampaignResult> {
    OffsetSweep.run(cfg, inputs, &InjectorRegistry::builtin())
}

/// Clean-model false positives over fresh sampling seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsePositiveReport {
    pub repeats: usize,
    pub flagged: usize,
    pub rate: f64,
}

/// Re-estimates the clean model `repeats` times with seeds `mix(seed, i)` and
/// counts how often it is flagged as uncertain.
pub fn false_positive_rate<N: Network + ?Sized>(
    clean: &N,
    btv: &BayesianTestVector,
    n_samples: usize,
    repeats: usize,
    seed: u64,
) -> Result<FalsePositiveReport> {
    if btv.threshold().is_none() {
        return Err(Error::contract("the test vector has no calibrated threshold"));
    }
    let verdicts: Vec<bool> = (0..repeats)
        .into_par_iter()
        .map(|i| estimate_seeded(clean, btv, n_samples, mix(seed, i as u64))?.verdict())
        .collect::<Result<_>>()?;
    let flagged = verdicts.iter().filter(|&&v| v).count();
    Ok(FalsePositiveReport {
        repeats,
        flagged,
        rate: percent(flagged, repeats) / 100.0,
    })
}

#[cfg(test)]
mod tests;
