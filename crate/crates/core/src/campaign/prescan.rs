use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inject::{InjectionSpec, InjectorRegistry};
use crate::nn::{evaluate_accuracy, Dataset};
use crate::quant::QuantizedModel;
use crate::rng::mix;

/// Mean accuracy of the perturbed model at one magnitude.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrescanPoint {
    pub magnitude: f64,
    pub mean_accuracy: f64,
    /// `100 · (clean − mean perturbed accuracy)`, in percentage points.
    pub drop_points: f64,
}

/// A band of accuracy drop in percentage points, `lo ≤ drop < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropBand {
    pub lo: f64,
    pub hi: f64,
}

impl DropBand {
    pub fn new(lo: f64, hi: f64) -> Self {
        DropBand { lo, hi }
    }

    /// At least `lo` points.
    pub fn at_least(lo: f64) -> Self {
        DropBand {
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, drop: f64) -> bool {
        drop >= self.lo && drop < self.hi
    }
}

/// Mean accuracy drop of `template` at each magnitude over `runs` seeded
/// perturbations. Run `i` uses seed `mix(seed, i)`, as in a campaign with the
/// same master seed.
pub fn prescan(
    clean: &QuantizedModel,
    dataset: &Dataset,
    template: &InjectionSpec,
    magnitudes: &[f64],
    runs: usize,
    seed: u64,
    injectors: &InjectorRegistry,
) -> Result<Vec<PrescanPoint>> {
    if runs == 0 {
        return Err(Error::Config("prescan needs at least one run".into()));
    }
    let injector = injectors.for_spec(template)?;
    let baseline = evaluate_accuracy(clean, dataset)?;
    magnitudes
        .iter()
        .map(|&m| {
            let spec = InjectionSpec::with_magnitude(template.kind, m, 0)
                .layer_fraction(template.layer_fraction);
            spec.validate()?;
            let accs: Vec<f64> = (0..runs)
                .into_par_iter()
                .map(|i| {
                    let perturbed = injector.perturb(clean, &spec.clone().with_seed(mix(seed, i as u64)))?;
                    evaluate_accuracy(&perturbed, dataset)
                })
                .collect::<Result<_>>()?;
            let mean = accs.iter().sum::<f64>() / runs as f64;
            Ok(PrescanPoint {
                magnitude: m,
                mean_accuracy: mean,
                drop_points: 100.0 * (baseline - mean),
            })
        })
        .collect()
}

/// Smallest magnitude whose mean drop falls in `band`.
pub fn pick_in_band(points: &[PrescanPoint], band: DropBand) -> Option<&PrescanPoint> {
    points
        .iter()
        .filter(|p| band.contains(p.drop_points))
        .min_by(|a, b| a.magnitude.total_cmp(&b.magnitude))
}
