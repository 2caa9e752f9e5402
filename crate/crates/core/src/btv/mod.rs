//! The Bayesian test vector: per-element Gaussian parameters `(mu, logvar)`
//! optimized so that samples drawn from them give the clean model a nearly
//! constant logit vector.
//!
//! Training minimizes
//!
//! ```text
//! loss = std(logits(s)) + alpha · KL(N(mu, exp(logvar)) ‖ N(0, 1)),
//! s    = mu + ε · sqrt(exp(logvar)),  ε ~ N(0, 1)
//! ```
//!
//! with plain SGD on `(mu, logvar)`; the model's parameters are never touched.

mod io;

pub use io::{
    btv_payload_bytes, load_btv, load_presampled, presampled_payload_bytes, read_btv,
    read_presampled, save_btv, save_presampled, write_btv, write_presampled, MEGABYTE,
};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{choose_sample_count, estimate_seeded};
use crate::nn::Model;
use crate::rng::{mix, rng_from, stream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gaussian test vector with optional calibrated threshold.
///
/// `mu` and `logvar` are held at `f32` precision, the storage width of the
/// file format, so a saved vector reloads bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianTestVector {
    shape: Vec<usize>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
    alpha: f64,
    threshold: Option<f64>,
    clean_sigma: f64,
}

fn to_f32_precision(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

impl BayesianTestVector {
    pub fn new(shape: Vec<usize>, mut mu: Vec<f64>, mut logvar: Vec<f64>, alpha: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || n == 0 {
            return Err(Error::dim(format!("invalid test vector shape {shape:?}")));
        }
        if mu.len() != n || logvar.len() != n {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got mu {} / logvar {}",
                mu.len(),
                logvar.len()
            )));
        }
        to_f32_precision(&mut mu);
        to_f32_precision(&mut logvar);
        if let Some(i) = mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::Domain(format!("mu[{i}] is not finite")));
        }
        if let Some(i) = logvar.iter().position(|&lv| {
            let var = lv.exp();
            !(var.is_finite() && var > 0.0)
        }) {
            return Err(Error::Domain(format!(
                "exp(logvar[{i}]) = exp({}) is not a positive finite variance",
                logvar[i]
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha {alpha} must be finite and ≥ 0")));
        }
        Ok(BayesianTestVector {
            shape,
            mu,
            logvar,
            alpha,
            threshold: None,
            clean_sigma: 0.0,
        })
    }

    /// `mu = 0` and a uniform `logvar` over `shape`.
    pub fn init(shape: Vec<usize>, alpha: f64, logvar: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n], vec![logvar; n], alpha).expect("valid initialization")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn logvar(&self) -> &[f64] {
        &self.logvar
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    /// σ_y of the clean model measured at calibration.
    pub fn clean_sigma(&self) -> f64 {
        self.clean_sigma
    }

    /// Per-element standard deviation `sqrt(exp(logvar))`.
    pub fn std(&self) -> Vec<f64> {
        self.logvar.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    pub fn kl(&self) -> f64 {
        kl_to_standard_normal(&self.mu, &self.logvar)
    }

    /// Records the clean model's spread. A stored threshold that would fall
    /// below it is discarded.
    pub fn set_clean_sigma(&mut self, sigma: f64) {
        self.clean_sigma = sigma;
        if self.threshold.is_some_and(|t| t < sigma) {
            self.threshold = None;
        }
    }

    /// Stores threshold `t`; it may not lie below the clean spread.
    pub fn set_threshold(&mut self, t: f64) -> Result<()> {
        if !(t >= self.clean_sigma) || !t.is_finite() {
            return Err(Error::contract(format!(
                "threshold {t} is below the clean model's spread {}",
                self.clean_sigma
            )));
        }
        self.threshold = Some(t);
        Ok(())
    }

    pub fn clear_threshold(&mut self) {
        self.threshold = None;
    }
}

/// One Monte-Carlo sample `mu + ε · sqrt(exp(logvar))`.
pub fn sample<R: Rng + ?Sized>(btv: &BayesianTestVector, rng: &mut R) -> Tensor {
    let eps: Vec<f64> = (0..btv.len()).map(|_| rng.sample(StandardNormal)).collect();
    sample_with_noise(btv, &eps)
}

/// The sample for a fixed noise vector `eps`.
pub fn sample_with_noise(btv: &BayesianTestVector, eps: &[f64]) -> Tensor {
    assert_eq!(eps.len(), btv.len(), "noise length");
    let data = btv
        .mu
        .iter()
        .zip(&btv.logvar)
        .zip(eps)
        .map(|((m, lv), e)| e * (0.5 * lv).exp() + m)
        .collect();
    Tensor::new(btv.shape.clone(), data).expect("shape checked at construction")
}

/// `Σ 0.5 · (exp(logvar) + mu² − 1 − logvar)`.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mu.len(), logvar.len(), "parameter lengths");
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

/// `std(logits) + alpha · KL`.
pub fn loss(logits: &[f64], mu: &[f64], logvar: &[f64], alpha: f64) -> Result<f64> {
    Ok(crate::tensor::population_std(logits)? + alpha * kl_to_standard_normal(mu, logvar))
}

/// Differentiable sample of `mu + eps · exp(0.5 · logvar)`.
pub fn sample_on(tape: &mut Tape<'_>, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(eps, std)?;
    tape.add(noise, mu)
}

/// Differentiable KL divergence to the standard normal.
pub fn kl_on(tape: &mut Tape<'_>, mu: Var, logvar: Var) -> Result<Var> {
    let var = tape.exp(logvar);
    let sq = tape.mul(mu, mu)?;
    let a = tape.add(var, sq)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5))
}

/// Differentiable training loss for already-computed logits.
pub fn loss_on(tape: &mut Tape<'_>, logits: Var, mu: Var, logvar: Var, alpha: f64) -> Result<Var> {
    let spread = tape.population_std(logits)?;
    let kl = kl_on(tape, mu, logvar)?;
    let reg = tape.scale(kl, alpha);
    tape.add(spread, reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitMu {
    Zeros,
    Uniform { a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    StandardNormal,
}

/// Optimization settings for [`optimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// KL weight.
    pub alpha: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Multiplies the learning rate after every step.
    pub lr_decay: f64,
    pub init_mu: InitMu,
    pub init_logvar: f64,
    pub prior: Prior,
    /// Reparameterized samples averaged per step.
    pub mc_samples: usize,
    /// Optional `[lo, hi]` range `mu` is projected into after each step.
    pub clip: Option<[f64; 2]>,
    /// Candidate alphas for [`optimize_grid`].
    pub alpha_grid: Vec<f64>,
    /// Largest KL a grid candidate may end with.
    pub kl_budget: Option<f64>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        // Start from a unit-variance point: a vector near the origin also has
        // nearly constant logits, but weight faults cannot move them.
        GenConfig {
            alpha: 1e-3,
            steps: 2000,
            learning_rate: 0.05,
            lr_decay: 0.998,
            init_mu: InitMu::Uniform { a: 3f64.sqrt() },
            init_logvar: -8.0,
            prior: Prior::StandardNormal,
            mc_samples: 1,
            clip: None,
            alpha_grid: vec![1e-3, 1e-4, 1e-5],
            kl_budget: None,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be finite and ≥ 0", self.alpha));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be ≥ 1".into());
        }
        if let InitMu::Uniform { a } = self.init_mu {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("init_mu uniform bound {a} must be > 0"));
            }
        }
        if let Some([lo, hi]) = self.clip {
            if !(lo < hi) {
                return bad(format!("clip range [{lo}, {hi}] is empty"));
            }
        }
        if self.alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("alpha_grid entries must be finite and ≥ 0".into());
        }
        Ok(())
    }

    /// Seed of the sampling stream used to measure the clean spread.
    pub fn calibration_seed(&self) -> u64 {
        mix(self.seed, stream::ESTIMATE)
    }
}

/// An optimized vector with its loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GenOutcome {
    pub btv: BayesianTestVector,
    /// Loss before each update.
    pub losses: Vec<f64>,
}

impl GenOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

fn initial(model: &Model, cfg: &GenConfig) -> Result<BayesianTestVector> {
    let shape = model.input_shape().to_vec();
    let n: usize = shape.iter().product();
    let mu = match cfg.init_mu {
        InitMu::Zeros => vec![0.0; n],
        InitMu::Uniform { a } => {
            let mut rng = rng_from(mix(cfg.seed, stream::INIT));
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        }
    };
    BayesianTestVector::new(shape, mu, vec![cfg.init_logvar; n], cfg.alpha)
}

/// Loss and gradients for one step with the given noise draws.
fn step_grad(
    model: &Model,
    btv_shape: &[usize],
    mu: &Tensor,
    logvar: &Tensor,
    eps: Vec<Tensor>,
    alpha: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let m = tape.param(mu);
    let lv = tape.param(logvar);
    let k = eps.len();
    let mut spread = None;
    for e in eps {
        let e = tape.leaf(e, false);
        let s = sample_on(&mut tape, m, lv, e)?;
        let s = tape.reshape(s, btv_shape)?;
        let logits = model.forward_on(&mut tape, s, false)?.logits;
        let sd = tape.population_std(logits)?;
        spread = Some(match spread {
            None => sd,
            Some(acc) => tape.add(acc, sd)?,
        });
    }
    let spread = tape.scale(spread.expect("at least one sample"), 1.0 / k as f64);
    let kl = kl_on(&mut tape, m, lv)?;
    let reg = tape.scale(kl, alpha);
    let total = tape.add(spread, reg)?;
    let value = tape.value(total).data()[0];
    tape.backward(total)?;
    let gm = tape.grad(m).expect("mu is a parameter").to_vec();
    let gl = tape.grad(lv).expect("logvar is a parameter").to_vec();
    Ok((value, gm, gl))
}

/// Optimizes a test vector for the clean `model` and measures its clean spread.
pub fn optimize(model: &Model, cfg: &GenConfig) -> Result<GenOutcome> {
    cfg.validate()?;
    let init = initial(model, cfg)?;
    let shape = init.shape.clone();
    let n = init.len();
    let mut mu = Tensor::from_vec(init.mu.clone());
    let mut logvar = Tensor::from_vec(init.logvar.clone());
    let mut rng = rng_from(mix(cfg.seed, stream::OPTIMIZE));
    let mut lr = cfg.learning_rate;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let eps: Vec<Tensor> = (0..cfg.mc_samples)
            .map(|_| Tensor::from_vec((0..n).map(|_| rng.sample(StandardNormal)).collect()))
            .collect();
        let (value, gm, gl) = step_grad(model, &shape, &mu, &logvar, eps, cfg.alpha)?;
        if !value.is_finite() {
            return Err(Error::Optimization {
                step,
                message: format!("loss became {value}"),
            });
        }
        losses.push(value);
        for (p, g) in mu.data_mut().iter_mut().zip(&gm) {
            *p -= lr * g;
        }
        for (p, g) in logvar.data_mut().iter_mut().zip(&gl) {
            *p -= lr * g;
        }
        if let Some([lo, hi]) = cfg.clip {
            for p in mu.data_mut() {
                *p = p.clamp(lo, hi);
            }
        }
        if !(mu.is_finite() && logvar.is_finite()) {
            return Err(Error::Optimization {
                step,
                message: "parameters became non-finite".into(),
            });
        }
        lr *= cfg.lr_decay;
    }
    let mut btv = BayesianTestVector::new(shape, mu.into_data(), logvar.into_data(), cfg.alpha)
        .map_err(|e| Error::Optimization {
            step: cfg.steps,
            message: e.to_string(),
        })?;
    let n_samples = choose_sample_count(model.num_classes())?;
    let clean = estimate_seeded(model, &btv, n_samples, cfg.calibration_seed())?;
    if !clean.sigma_y.is_finite() {
        return Err(Error::Optimization {
            step: cfg.steps,
            message: format!("clean spread is {}", clean.sigma_y),
        });
    }
    btv.set_clean_sigma(clean.sigma_y);
    Ok(GenOutcome { btv, losses })
}

/// One candidate of an alpha grid search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaTrial {
    pub alpha: f64,
    pub clean_sigma: f64,
    pub kl: f64,
    pub final_loss: Option<f64>,
    pub within_budget: bool,
}

/// Runs [`optimize`] for every alpha of `cfg.alpha_grid` and keeps the vector
/// with the lowest clean spread among those within the KL budget.
pub fn optimize_grid(model: &Model, cfg: &GenConfig) -> Result<(GenOutcome, Vec<AlphaTrial>)> {
    cfg.validate()?;
    if cfg.alpha_grid.is_empty() {
        return Err(Error::Config("alpha_grid is empty".into()));
    }
    let outcomes: Vec<Result<GenOutcome>> = cfg
        .alpha_grid
        .par_iter()
        .map(|&alpha| {
            optimize(
                model,
                &GenConfig {
                    alpha,
                    ..cfg.clone()
                },
            )
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let trials: Vec<AlphaTrial> = outcomes
        .iter()
        .map(|o| AlphaTrial {
            alpha: o.btv.alpha(),
            clean_sigma: o.btv.clean_sigma(),
            kl: o.btv.kl(),
            final_loss: o.final_loss(),
            within_budget: cfg.kl_budget.is_none_or(|b| o.btv.kl() <= b),
        })
        .collect();
    let best = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.within_budget)
        .min_by(|a, b| a.1.clean_sigma.total_cmp(&b.1.clean_sigma))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::Config(format!(
                "no alpha in {:?} ends within the KL budget {:?}",
                cfg.alpha_grid, cfg.kl_budget
            ))
        })?;
    let chosen = outcomes.into_iter().nth(best).expect("index in range");
    Ok((chosen, trials))
}
