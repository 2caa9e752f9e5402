use std::path::Path;

use btv_core::btv::{read_btv, read_presampled};
use btv_core::estimate::{choose_sample_count, estimate_presampled, estimate_seeded, UncertaintyEstimate};
use btv_core::nn::{CountingNetwork, Network};
use serde::Serialize;
use serde_json::json;

use crate::error::{exit, CliError, CliResult};
use crate::session::{stem, Context, ModelFile, Outcome, Session};

/// The machine-readable result of one check. Printed as the CSV row
/// `model,seed,n_samples,sigma_y,t,uncertain`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub model: String,
    pub seed: u64,
    pub n_samples: usize,
    pub sigma_y: f64,
    pub t: f64,
    pub uncertain: bool,
    /// Forward passes of the model under test spent on the check.
    pub forward_passes: usize,
}

impl EstimateRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.model, self.seed, self.n_samples, self.sigma_y, self.t, self.uncertain
        )
    }
}

/// Estimates σ_y of the model with a stored test vector (or pre-drawn sample)
/// and compares it with the stored threshold. Exit 10 when uncertain.
pub fn estimate(
    ctx: &Context,
    model_path: &Path,
    btv_path: &Path,
    n_samples: Option<usize>,
) -> CliResult<(Outcome, EstimateRow)> {
    let mut s = Session::new(ctx, "estimate");
    let (seed, source) = ctx.resolve_seed(None)?;
    s.set_seed(seed);
    s.set_config(&json!({
        "model": model_path,
        "btv": btv_path,
        "n_samples": n_samples,
        "seed": seed,
    }))?;
    let mf = ModelFile::read(&mut s, model_path)?;
    let bytes = s.read(btv_path, "test vector")?;
    let counted = CountingNetwork::new(mf.model());

    let est: UncertaintyEstimate = if bytes.starts_with(b"BTVS") {
        if n_samples.is_some_and(|n| n != 1) {
            return Err(CliError::config("a pre-drawn sample supports exactly one pass"));
        }
        let v = read_presampled(&bytes).map_err(|e| CliError::input(btv_path, e))?;
        estimate_presampled(&counted, &v)?
    } else {
        let btv = read_btv(&bytes).map_err(|e| CliError::input(btv_path, e))?;
        let n = match n_samples {
            Some(0) => return Err(CliError::config("--n-samples must be ≥ 1")),
            Some(n) => n,
            None => choose_sample_count(counted.num_classes())?,
        };
        estimate_seeded(&counted, &btv, n, seed)?
    };
    if !est.sigma_y.is_finite() {
        return Err(CliError::Numeric(format!("sigma_y is {}", est.sigma_y)));
    }
    let uncertain = est.verdict().map_err(|_| {
        CliError::config(format!("`{}` has no calibrated threshold", btv_path.display()))
    })?;
    let row = EstimateRow {
        model: stem(model_path),
        seed,
        n_samples: est.n_samples,
        sigma_y: est.sigma_y,
        t: est.threshold.expect("verdict implies a threshold"),
        uncertain,
        forward_passes: counted.passes(),
    };
    s.print(if uncertain {
        format!("UNCERTAIN sigma_y {} >= t {}", row.sigma_y, row.t)
    } else {
        format!("CERTAIN sigma_y {} < t {}", row.sigma_y, row.t)
    });
    s.print(row.csv());
    let code = if uncertain { exit::UNCERTAIN } else { exit::OK };
    let outcome = s.finish(code, json!({ "seed_source": source, "estimate": &row }))?;
    Ok((outcome, row))
}
