//! Central finite-difference checks of tape gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Norm-wise relative error per input and their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares reverse-mode gradients of the scalar built by `build` with central
/// differences of step `h`, for every input.
pub fn gradcheck<'m, F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'m>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let out = build(&mut tape, &vars)?;
        scalar(&tape, out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    scalar(&tape, out)?;
    tape.backward(out)?;
    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).expect("leaf requires grad").to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut xs = inputs.to_vec();
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        per_input.push(relative_error(&analytic, &numeric));
    }
    let max_rel_error = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheck {
        per_input,
        max_rel_error,
    })
}

fn scalar(tape: &Tape<'_>, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(Error::contract(format!("gradcheck needs a scalar, got {:?}", t.shape())));
    }
    Ok(t.data()[0])
}

/// Reduces `y` to the scalar `Σ r ⊙ y` with fixed Gaussian weights `r`, so that
/// every output element contributes to the checked gradient.
pub fn project(tape: &mut Tape<'_>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n = tape.value(y).len();
    let mut rng = rng_from(seed);
    let r = Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())?;
    let r = tape.leaf(r, false);
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}
