//! Independent statistical oracles. Shared with the acceptance suite.
#![allow(dead_code)]

use btv_core::btv::{kl_to_standard_normal, sample, BayesianTestVector};
use btv_core::inject::{inject_bit_flip, inject_level_flip, inject_variation, InjectionKind, InjectionSpec};
use btv_core::nn::{Layer, Model};
use btv_core::quant::{quantize, QuantizedModel};
use btv_core::rng::rng_from;
use btv_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Binomial, DiscreteCDF};

/// `(closed form, Monte-Carlo estimate)` of KL(q‖N(0, I)).
#[derive(Debug, Clone, Copy)]
pub struct KlCase {
    pub exact: f64,
    pub monte_carlo: f64,
}

impl KlCase {
    pub fn rel_error(&self) -> f64 {
        (self.exact - self.monte_carlo).abs() / self.exact
    }
}

/// Estimates `E_q[log q(x) − log p(x)]` from `draws` samples of `q`.
pub fn kl_monte_carlo(mu: &[f64], logvar: &[f64], draws: usize, seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let mut acc = 0.0;
    for _ in 0..draws {
        let mut s = 0.0;
        for (&m, &lv) in mu.iter().zip(logvar) {
            let e: f64 = rng.sample(StandardNormal);
            let x = m + (0.5 * lv).exp() * e;
            // log N(x; m, σ²) − log N(x; 0, 1); the 2π terms cancel.
            s += -0.5 * lv - 0.5 * e * e + 0.5 * x * x;
        }
        acc += s;
    }
    acc / draws as f64
}

/// Ten random 6-element parameter sets checked at 10^6 draws.
pub fn kl_cases() -> Vec<KlCase> {
    let mut rng = rng_from(11);
    (0..10)
        .map(|i| {
            let mu: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lv: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.0)).collect();
            KlCase {
                exact: kl_to_standard_normal(&mu, &lv),
                monte_carlo: kl_monte_carlo(&mu, &lv, 1_000_000, 100 + i),
            }
        })
        .collect()
}

/// Per-element sample mean and std of `draws` samples against the targets.
#[derive(Debug, Clone, Copy)]
pub struct MomentCase {
    pub mu: f64,
    pub std: f64,
    pub mean_hat: f64,
    pub std_hat: f64,
}

impl MomentCase {
    /// Mean error relative to the larger of |mu| and std; std error relative to std.
    pub fn errors(&self) -> (f64, f64) {
        (
            (self.mean_hat - self.mu).abs() / self.mu.abs().max(self.std),
            (self.std_hat - self.std).abs() / self.std,
        )
    }
}

pub fn sampler_moments(mu: Vec<f64>, logvar: Vec<f64>, draws: usize, seed: u64) -> Vec<MomentCase> {
    let n = mu.len();
    let btv = BayesianTestVector::new(vec![n], mu, logvar, 0.0).unwrap();
    let mut rng = rng_from(seed);
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for _ in 0..draws {
        for (j, v) in sample(&btv, &mut rng).data().iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    let d = draws as f64;
    (0..n)
        .map(|j| {
            let mean = sum[j] / d;
            MomentCase {
                mu: btv.mu()[j],
                std: btv.std()[j],
                mean_hat: mean,
                std_hat: (sq[j] / d - mean * mean).sqrt(),
            }
        })
        .collect()
}

/// Five element-wise parameter sets, the first being mu = 2, logvar = ln 4.
pub fn sampler_cases() -> Vec<MomentCase> {
    sampler_moments(
        vec![2.0, -1.5, 0.8, 3.0, -0.5],
        vec![4f64.ln(), 0.0, -1.0, 1.2, -2.0],
        100_000,
        5,
    )
}

/// Single dense layer `1×n` holding `weights`, quantized.
pub fn flat_model(weights: Vec<f64>) -> Model {
    let n = weights.len();
    Model::new(
        "flat",
        vec![n],
        1,
        vec![Layer::Dense {
            weight: Tensor::new(vec![1, n], weights).unwrap(),
            bias: Tensor::zeros(&[1]),
        }],
    )
    .unwrap()
}

pub fn flat_quantized(n: usize, seed: u64) -> QuantizedModel {
    let mut rng = rng_from(seed);
    quantize(&flat_model((0..n).map(|_| rng.sample(StandardNormal)).collect())).unwrap()
}

/// Observed count with the central 99.9% binomial interval.
#[derive(Debug, Clone, Copy)]
pub struct CountCase {
    pub observed: u64,
    pub lo: u64,
    pub hi: u64,
}

impl CountCase {
    pub fn inside(&self) -> bool {
        (self.lo..=self.hi).contains(&self.observed)
    }
}

pub fn binomial_interval(p: f64, n: u64) -> (u64, u64) {
    let b = Binomial::new(p, n).unwrap();
    (b.inverse_cdf(0.0005), b.inverse_cdf(0.9995))
}

fn levels(q: &QuantizedModel) -> &[i8] {
    &q.quant_layers()[0].levels
}

/// Flipped bits after bit-flip injection at `p` over `bits` weight bits.
pub fn bit_flip_count(p: f64, bits: u64, seed: u64) -> CountCase {
    let q = flat_quantized((bits / 8) as usize, 3);
    let spec = InjectionSpec::fault(InjectionKind::BitFlip, p, seed);
    let f = inject_bit_flip(&q, &spec).unwrap();
    let observed = levels(&q)
        .iter()
        .zip(levels(&f))
        .map(|(&a, &b)| u64::from((a as u8 ^ b as u8).count_ones()))
        .sum();
    let (lo, hi) = binomial_interval(p, bits);
    CountCase { observed, lo, hi }
}

/// Changed weights after level-flip injection at `p` over `weights` weights.
pub fn level_flip_count(p: f64, weights: u64, seed: u64) -> CountCase {
    let q = flat_quantized(weights as usize, 4);
    let spec = InjectionSpec::fault(InjectionKind::LevelFlip, p, seed);
    let f = inject_level_flip(&q, &spec).unwrap();
    let observed = levels(&q).iter().zip(levels(&f)).filter(|(a, b)| a != b).count() as u64;
    let (lo, hi) = binomial_interval(p, weights);
    CountCase { observed, lo, hi }
}

fn sample_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `(sample std of w' − w, target)` for a variation kind on 10^5 unit weights.
/// For additive noise the layer maximum is 1, so the target is `eta` in both cases.
pub fn variation_std(kind: InjectionKind, eta: f64, seed: u64) -> (f64, f64) {
    let m = flat_model(vec![1.0; 100_000]);
    let p = inject_variation(&m, &InjectionSpec::variation(kind, eta, seed)).unwrap();
    let w = m.layers()[0].weight().unwrap().data();
    let wp = p.layers()[0].weight().unwrap().data();
    let d: Vec<f64> = w.iter().zip(wp).map(|(a, b)| b - a).collect();
    (sample_std(&d), eta)
}
