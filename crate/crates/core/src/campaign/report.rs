use serde::Serialize;

use super::CampaignResult;
use crate::btv::{sample, BayesianTestVector};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::rng_from;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// One row per run.
pub fn records_csv(result: &CampaignResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell",
        "kind",
        "rate",
        "noise_scale",
        "layer_fraction",
        "offset",
        "run",
        "seed",
        "sigma_y",
        "t",
        "detected",
        "a_test",
        "valid",
    ])
    .map_err(csv_err)?;
    for r in &result.records {
        let (rate, noise) = if r.kind.is_fault() {
            (r.magnitude.to_string(), String::new())
        } else {
            (String::new(), r.magnitude.to_string())
        };
        w.write_record([
            r.cell.to_string(),
            r.kind.to_string(),
            rate,
            noise,
            r.layer_fraction.to_string(),
            opt(r.offset),
            r.run.to_string(),
            r.seed.to_string(),
            r.sigma_y.to_string(),
            r.threshold.to_string(),
            opt(r.detected),
            opt(r.accuracy),
            r.is_valid().to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Per-cell summary as pretty JSON.
pub fn summary_json(result: &CampaignResult) -> Result<String> {
    serde_json::to_string_pretty(result).map_err(|e| Error::Io(e.into()))
}

/// Logit of one class for one test-vector sample under one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitSpreadRow {
    pub scenario: String,
    pub sample: usize,
    pub class: usize,
    pub logit: f64,
}

/// Logits of every model on the same `samples` draws of `btv`.
pub fn logit_spread(
    models: &[(&str, &dyn Network)],
    btv: &BayesianTestVector,
    samples: usize,
    seed: u64,
) -> Result<Vec<LogitSpreadRow>> {
    let mut rng = rng_from(seed);
    let draws: Vec<_> = (0..samples).map(|_| sample(btv, &mut rng)).collect();
    let mut rows = Vec::new();
    for (name, net) in models {
        for (s, x) in draws.iter().enumerate() {
            for (class, &logit) in net.logits(x)?.data().iter().enumerate() {
                rows.push(LogitSpreadRow {
                    scenario: name.to_string(),
                    sample: s,
                    class,
                    logit,
                });
            }
        }
    }
    Ok(rows)
}

pub fn logit_spread_csv(rows: &[LogitSpreadRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    finish_csv(w)
}
