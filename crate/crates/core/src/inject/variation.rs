use rand::Rng;
use rand_distr::StandardNormal;

use super::{InjectionKind, InjectionSpec};
use crate::error::Result;
use crate::nn::Model;
use crate::rng::child_rng;

/// Gaussian weight variation on a float model.
///
/// * multiplicative: `w' = w · (1 + η0·ε)`
/// * additive: `w' = w + η0 · s_L · ε`, where `s_L = max|w|` over layer `L`
///
/// with `ε ~ N(0, 1)` drawn independently per weight and per call.
pub fn inject_variation(m: &Model, spec: &InjectionSpec) -> Result<Model> {
    spec.expect_kind(&[InjectionKind::Additive, InjectionKind::Multiplicative])?;
    let eta = spec.noise_scale.expect("validated variation spec");
    let mut out = m.clone();
    if eta == 0.0 {
        return Ok(out);
    }
    let eligible = spec.eligible_layers(m.param_layers().len());
    let mut pos = 0usize;
    out.for_each_param_mut(|_, w, _| {
        let this = pos;
        pos += 1;
        if !eligible.contains(&this) {
            return;
        }
        let mut rng = child_rng(spec.inject_seed(), this as u64);
        match spec.kind {
            InjectionKind::Multiplicative => {
                for v in w.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v *= 1.0 + eta * e;
                }
            }
            _ => {
                let s = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for v in w.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v += eta * s * e;
                }
            }
        }
    });
    Ok(out)
}
