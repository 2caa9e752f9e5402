use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use btv_core::btv::{optimize_grid, read_btv, AlphaTrial, BayesianTestVector};
use btv_core::campaign::{
    false_positive_rate, logit_spread, logit_spread_csv, pick_in_band, prescan, records_csv,
    CampaignInputs, CampaignResult, FalsePositiveReport, ModeRegistry, PrescanPoint,
};
use btv_core::estimate::{calibrate_threshold, choose_sample_count, random_input_sigma};
use btv_core::inject::{InjectionKind, InjectionSpec, InjectorRegistry};
use btv_core::nn::{evaluate_accuracy, read_dataset, Dataset, Network};
use btv_core::quant::{quantize, QuantizedModel};
use btv_core::rng::{mix, stream};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, CampaignFile, Experiment, Subject};
use crate::error::{CliError, CliResult};
use crate::session::{relative_to, Context, ModelFile, Outcome, Session};

/// Stream tag of the clean-model false-positive re-estimates.
const FALSE_POSITIVE_STREAM: u64 = 0xF0;

/// A prepared model under test.
#[derive(Debug, Clone, Serialize)]
pub struct SubjectReport {
    pub name: String,
    pub model: String,
    pub classes: usize,
    pub float_accuracy: Option<f64>,
    pub quantized_accuracy: Option<f64>,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_trials: Option<Vec<AlphaTrial>>,
    pub clean_sigma: f64,
    pub threshold: f64,
    /// Mean σ_y over standard-normal inputs, when requested.
    pub random_input_sigma: Option<f64>,
    /// `clean_sigma / random_input_sigma`.
    pub sigma_ratio: Option<f64>,
    pub false_positive: Option<FalsePositiveReport>,
    /// Wall time of training (reference subjects), optimization and calibration.
    pub prepare_secs: f64,
    #[serde(skip)]
    pub quantized: QuantizedModel,
    #[serde(skip)]
    pub btv: BayesianTestVector,
    #[serde(skip)]
    pub dataset: Option<Dataset>,
}

/// How a pre-scanned cell got its magnitude.
#[derive(Debug, Clone, Serialize)]
pub struct TargetReport {
    pub cell: usize,
    pub kind: InjectionKind,
    pub min_drop: f64,
    pub max_drop: Option<f64>,
    pub layer_fraction: f64,
    pub prescan_runs: usize,
    pub points: Vec<PrescanPoint>,
    pub chosen: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub subject: String,
    pub records_file: String,
    pub targets: Vec<TargetReport>,
    pub result: CampaignResult,
}

/// Everything a campaign run produced; serialized as the summary file.
#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub config_hash: String,
    pub subjects: BTreeMap<String, SubjectReport>,
    pub experiments: Vec<ExperimentReport>,
    pub logit_spread_file: Option<String>,
}

impl CampaignReport {
    pub fn experiment(&self, name: &str) -> Option<&ExperimentReport> {
        self.experiments.iter().find(|e| e.name == name)
    }
}

fn prepare_subject(
    s: &mut Session<'_>,
    config_path: &Path,
    name: &str,
    subject: &Subject,
    seed: u64,
) -> CliResult<SubjectReport> {
    let started = Instant::now();
    let (model_name, float_accuracy, q, btv, dataset, trials, fp_repeats, random_inputs) = match subject {
        Subject::Reference {
            reference,
            generator,
            offset,
            false_positive_repeats,
            random_inputs,
        } => {
            s.info(format!("subject {name}: training reference {reference:?}"));
            let r = reference.spec().build()?;
            let q = quantize(&r.model)?;
            s.info(format!("subject {name}: optimizing the test vector"));
            let (outcome, trials) = optimize_grid(q.as_model(), generator)?;
            let mut btv = outcome.btv;
            let n = choose_sample_count(q.as_model().num_classes())?;
            calibrate_threshold(q.as_model(), &mut btv, *offset, n, generator.calibration_seed())?;
            (
                r.model.name.clone(),
                Some(r.test_accuracy),
                q,
                btv,
                Some(r.test),
                Some(trials),
                *false_positive_repeats,
                *random_inputs,
            )
        }
        Subject::Files {
            model,
            btv,
            dataset,
            false_positive_repeats,
            random_inputs,
        } => {
            let mp = relative_to(config_path, model);
            let mf = ModelFile::read(s, &mp)?;
            let bp = relative_to(config_path, btv);
            let bytes = s.read(&bp, &format!("subjects.{name}.btv"))?;
            let v = read_btv(&bytes).map_err(|e| CliError::input(&bp, e))?;
            if v.threshold().is_none() {
                return Err(CliError::config(format!("`{}` has no calibrated threshold", bp.display())));
            }
            let data = match dataset {
                Some(d) => {
                    let dp = relative_to(config_path, d);
                    let bytes = s.read(&dp, &format!("subjects.{name}.dataset"))?;
                    Some(read_dataset(&bytes).map_err(|e| CliError::input(&dp, e))?)
                }
                None => None,
            };
            let float_accuracy = match (&mf, &data) {
                (ModelFile::Float(m), Some(d)) => Some(evaluate_accuracy(m, d)?),
                _ => None,
            };
            let name = mf.model().name.clone();
            (name, float_accuracy, mf.into_quantized()?, v, data, None, *false_positive_repeats, *random_inputs)
        }
    };
    let prepare_secs = started.elapsed().as_secs_f64();
    let quantized_accuracy = match &dataset {
        Some(d) => Some(evaluate_accuracy(q.as_model(), d)?),
        None => None,
    };
    let random = if random_inputs > 0 {
        Some(random_input_sigma(q.as_model(), random_inputs, mix(seed, stream::DATA))?)
    } else {
        None
    };
    let false_positive = if fp_repeats > 0 {
        let n = choose_sample_count(q.as_model().num_classes())?;
        Some(false_positive_rate(
            q.as_model(),
            &btv,
            n,
            fp_repeats,
            mix(seed, FALSE_POSITIVE_STREAM),
        )?)
    } else {
        None
    };
    Ok(SubjectReport {
        name: name.to_string(),
        model: model_name,
        classes: q.as_model().num_classes(),
        float_accuracy,
        quantized_accuracy,
        alpha: btv.alpha(),
        alpha_trials: trials,
        clean_sigma: btv.clean_sigma(),
        threshold: btv.threshold().expect("calibrated above"),
        random_input_sigma: random,
        sigma_ratio: random.map(|r| btv.clean_sigma() / r),
        false_positive,
        prepare_secs,
        quantized: q,
        btv,
        dataset,
    })
}

fn run_experiment(
    s: &mut Session<'_>,
    exp: &Experiment,
    subject: &SubjectReport,
    seed: u64,
    modes: &ModeRegistry,
    injectors: &InjectorRegistry,
) -> CliResult<ExperimentReport> {
    let mut grid = exp.grid.clone();
    let mut targets = Vec::new();
    for t in &exp.targets {
        let data = subject.dataset.as_ref().ok_or_else(|| {
            CliError::config(format!(
                "experiment `{}`: drop targets need a subject with a dataset",
                exp.name
            ))
        })?;
        let runs = t.prescan_runs.unwrap_or(exp.runs);
        let template = InjectionSpec::with_magnitude(t.kind, t.candidates[0], 0).layer_fraction(t.layer_fraction);
        s.info(format!("{}: pre-scanning {} candidates of {}", exp.name, t.candidates.len(), t.kind));
        let points = prescan(&subject.quantized, data, &template, &t.candidates, runs, seed, injectors)?;
        let chosen = pick_in_band(&points, t.band())
            .ok_or_else(|| {
                let drops: Vec<String> = points
                    .iter()
                    .map(|p| format!("{}→{:.2}", p.magnitude, p.drop_points))
                    .collect();
                CliError::config(format!(
                    "experiment `{}`: no {} candidate drops accuracy into [{}, {}) points ({})",
                    exp.name,
                    t.kind,
                    t.min_drop,
                    t.max_drop.unwrap_or(f64::INFINITY),
                    drops.join(", ")
                ))
            })?
            .magnitude;
        targets.push(TargetReport {
            cell: grid.len(),
            kind: t.kind,
            min_drop: t.min_drop,
            max_drop: t.max_drop,
            layer_fraction: t.layer_fraction,
            prescan_runs: runs,
            points,
            chosen,
        });
        grid.push(template_with(t.kind, chosen, t.layer_fraction));
    }
    let cfg = exp.campaign(grid, seed);
    cfg.validate()?;
    let mode = modes.get(&cfg.mode)?;
    if mode.needs_dataset() && subject.dataset.is_none() {
        return Err(CliError::config(format!(
            "experiment `{}`: mode `{}` needs a subject with a dataset",
            exp.name, cfg.mode
        )));
    }
    s.info(format!("{}: {} mode, {} runs per cell", exp.name, cfg.mode, cfg.runs));
    let inputs = CampaignInputs {
        clean: &subject.quantized,
        btv: &subject.btv,
        dataset: subject.dataset.as_ref(),
    };
    let result = mode.run(&cfg, inputs, injectors)?;
    let records_file = format!("{}-s{seed}.csv", exp.name);
    s.write(&records_file, records_csv(&result)?.as_bytes())?;
    Ok(ExperimentReport {
        name: exp.name.clone(),
        subject: exp.subject.clone(),
        records_file,
        targets,
        result,
    })
}

fn template_with(kind: InjectionKind, magnitude: f64, fraction: f64) -> InjectionSpec {
    InjectionSpec::with_magnitude(kind, magnitude, 0).layer_fraction(fraction)
}

fn cell_line(exp: &ExperimentReport) -> Vec<String> {
    let base = exp.result.baseline_accuracy;
    exp.result
        .cells
        .iter()
        .map(|c| {
            let drop = match (base, c.mean_accuracy) {
                (Some(b), Some(a)) => format!("{:.2}", 100.0 * (b - a)),
                _ => "-".into(),
            };
            let vc = c.verifiable_coverage.map_or("-".to_string(), |v| format!("{v:.1}"));
            format!(
                "{} cell {} {} {} fraction {} t {:.4} coverage {:.1} verifiable {vc} drop {drop} mean_sigma {:.4}",
                exp.name, c.cell, c.kind, c.magnitude, c.layer_fraction, c.threshold, c.coverage, c.mean_sigma
            )
        })
        .collect()
}

/// Runs every experiment of a campaign config. Writes one records CSV per
/// experiment, `campaign-s<seed>-summary.json` and, on request, a logit-spread CSV.
pub fn campaign(ctx: &Context, config_path: &Path) -> CliResult<(Outcome, CampaignReport)> {
    let mut s = Session::new(ctx, "campaign");
    let mut file: CampaignFile = config::load(&mut s, config_path, "campaign config")?;
    file.validate()?;
    let (seed, source) = ctx.resolve_seed(file.seed)?;
    file.seed = Some(seed);
    s.set_seed(seed);
    s.set_config(&file)?;
    let hash = crate::manifest::config_hash(&file)?;

    let used: BTreeSet<&String> = file
        .experiments
        .iter()
        .map(|e| &e.subject)
        .chain(file.logit_spread.iter().map(|l| &l.subject))
        .collect();
    let mut subjects = BTreeMap::new();
    for name in used {
        let report = prepare_subject(&mut s, config_path, name, &file.subjects[name], seed)?;
        subjects.insert(name.clone(), report);
    }

    let modes = ModeRegistry::builtin();
    let injectors = InjectorRegistry::builtin();
    let mut experiments = Vec::new();
    for exp in &file.experiments {
        let report = run_experiment(&mut s, exp, &subjects[&exp.subject], seed, &modes, &injectors)?;
        for line in cell_line(&report) {
            s.print(line);
        }
        experiments.push(report);
    }

    let logit_spread_file = match &file.logit_spread {
        Some(req) => {
            let subj = &subjects[&req.subject];
            let mut models = Vec::new();
            for (i, spec) in req.scenarios.iter().enumerate() {
                spec.validate()?;
                let spec = spec.clone().with_seed(mix(seed, i as u64));
                let m = injectors.for_spec(&spec)?.perturb(&subj.quantized, &spec)?;
                models.push((format!("{}-{}", spec.kind, spec.magnitude()), m));
            }
            let mut nets: Vec<(&str, &dyn Network)> = vec![("clean", subj.quantized.as_model())];
            nets.extend(models.iter().map(|(n, m)| (n.as_str(), m as &dyn Network)));
            let rows = logit_spread(&nets, &subj.btv, req.samples, mix(seed, stream::ESTIMATE))?;
            let name = format!("logit-spread-s{seed}.csv");
            s.write(&name, logit_spread_csv(&rows)?.as_bytes())?;
            Some(name)
        }
        None => None,
    };

    let report = CampaignReport {
        seed,
        config_hash: hash,
        subjects,
        experiments,
        logit_spread_file,
    };
    let summary = serde_json::to_string_pretty(&report).expect("report serializes");
    let summary_name = format!("campaign-s{seed}-summary.json");
    s.write(&summary_name, summary.as_bytes())?;
    let invalid: usize = report.experiments.iter().map(|e| e.result.invalid_runs()).sum();
    if invalid > 0 {
        s.warn(format!("warning: {invalid} runs produced non-finite σ_y and were excluded"));
    }
    let outcome = s.ok(json!({ "seed_source": source, "summary": summary_name, "invalid_runs": invalid }))?;
    Ok((outcome, report))
}

