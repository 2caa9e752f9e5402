//! Uncertainty estimation of a model under test with a stored test vector.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::btv::{sample, BayesianTestVector};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::rng_from;
use crate::tensor::{population_std, Tensor};

/// How many Monte-Carlo samples to draw for a model with `C` output logits.
///
/// Models with at least `cutoff` logits get one sample; smaller heads draw
/// `ceil(pool_target / C)` samples so the pooled logit set has about
/// `pool_target` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplePolicy {
    pub cutoff: usize,
    pub pool_target: usize,
}

impl Default for SamplePolicy {
    fn default() -> Self {
        SamplePolicy {
            cutoff: 10,
            pool_target: 32,
        }
    }
}

impl SamplePolicy {
    pub fn sample_count(&self, classes: usize) -> Result<usize> {
        if classes == 0 {
            return Err(Error::contract("sample count for a model without outputs"));
        }
        if classes >= self.cutoff {
            Ok(1)
        } else {
            Ok(self.pool_target.div_ceil(classes).max(1))
        }
    }
}

/// [`SamplePolicy::sample_count`] with the default policy.
pub fn choose_sample_count(classes: usize) -> Result<usize> {
    SamplePolicy::default().sample_count(classes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyEstimate {
    /// Population std of all pooled logits.
    pub sigma_y: f64,
    pub n_samples: usize,
    pub logit_pool_size: usize,
    pub threshold: Option<f64>,
    /// `sigma_y ≥ threshold`, when a threshold was available.
    pub uncertain: Option<bool>,
}

impl UncertaintyEstimate {
    fn new(sigma_y: f64, n_samples: usize, pool: usize, threshold: Option<f64>) -> Self {
        UncertaintyEstimate {
            sigma_y,
            n_samples,
            logit_pool_size: pool,
            threshold,
            uncertain: threshold.map(|t| sigma_y >= t),
        }
    }

    /// The uncertain/certain verdict; requires a calibrated threshold.
    pub fn verdict(&self) -> Result<bool> {
        self.uncertain
            .ok_or_else(|| Error::contract("no threshold calibrated for this test vector"))
    }
}

fn check_shape<N: Network + ?Sized>(mut_: &N, shape: &[usize]) -> Result<()> {
    if mut_.input_shape() != shape {
        return Err(Error::dim(format!(
            "test vector shape {shape:?} does not match model input {:?}",
            mut_.input_shape()
        )));
    }
    Ok(())
}

/// Draws `n` samples from `btv`, forwards each once, and pools the logits.
pub fn estimate<N: Network + ?Sized, R: Rng + ?Sized>(
    mut_: &N,
    btv: &BayesianTestVector,
    n: usize,
    rng: &mut R,
) -> Result<UncertaintyEstimate> {
    check_shape(mut_, btv.shape())?;
    if n == 0 {
        return Err(Error::contract("estimation needs at least one sample"));
    }
    let mut pool = Vec::with_capacity(n * mut_.num_classes());
    for _ in 0..n {
        let x = sample(btv, rng);
        pool.extend_from_slice(mut_.logits(&x)?.data());
    }
    let sigma = population_std(&pool)?;
    Ok(UncertaintyEstimate::new(sigma, n, pool.len(), btv.threshold()))
}

/// [`estimate`] with a generator seeded from `seed`.
pub fn estimate_seeded<N: Network + ?Sized>(
    mut_: &N,
    btv: &BayesianTestVector,
    n: usize,
    seed: u64,
) -> Result<UncertaintyEstimate> {
    estimate(mut_, btv, n, &mut rng_from(seed))
}

/// A single sample drawn once before deployment, with its own calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PresampledVector {
    pub input: Tensor,
    /// σ_y of the clean model on `input`.
    pub clean_sigma: f64,
    pub threshold: Option<f64>,
}

/// Draws one sample of `btv` (stored at `f32` precision) and calibrates
/// `t = clean σ_y + offset` on it.
pub fn presample<N: Network + ?Sized>(
    clean: &N,
    btv: &BayesianTestVector,
    offset: f64,
    seed: u64,
) -> Result<PresampledVector> {
    check_shape(clean, btv.shape())?;
    if !(offset >= 0.0) || !offset.is_finite() {
        return Err(Error::contract(format!("threshold offset {offset} must be ≥ 0")));
    }
    let mut input = sample(btv, &mut rng_from(seed));
    for x in input.data_mut() {
        *x = *x as f32 as f64;
    }
    let clean_sigma = population_std(clean.logits(&input)?.data())?;
    Ok(PresampledVector {
        input,
        clean_sigma,
        threshold: Some(clean_sigma + offset),
    })
}

/// One forward pass of a pre-drawn sample.
pub fn estimate_presampled<N: Network + ?Sized>(
    mut_: &N,
    v: &PresampledVector,
) -> Result<UncertaintyEstimate> {
    check_shape(mut_, v.input.shape())?;
    let logits = mut_.logits(&v.input)?;
    let sigma = population_std(logits.data())?;
    Ok(UncertaintyEstimate::new(sigma, 1, logits.len(), v.threshold))
}

/// Measures the clean model's spread and stores `t = sigma_y + offset` in `btv`.
///
/// The measured spread also replaces `btv.clean_sigma`, so `t ≥ clean_sigma`
/// always holds afterwards.
pub fn calibrate_threshold<N: Network + ?Sized>(
    clean: &N,
    btv: &mut BayesianTestVector,
    offset: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if !(offset >= 0.0) || !offset.is_finite() {
        return Err(Error::contract(format!(
            "threshold offset {offset} would place t below the clean model's spread"
        )));
    }
    let est = estimate_seeded(clean, btv, n, seed)?;
    btv.set_clean_sigma(est.sigma_y);
    let t = est.sigma_y + offset;
    btv.set_threshold(t)?;
    Ok(t)
}

/// Mean σ_y of the logits over `count` standard-normal inputs: the spread of
/// an uninformed probe, against which an optimized vector is compared.
pub fn random_input_sigma<N: Network + ?Sized>(net: &N, count: usize, seed: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::contract("random-input spread needs at least one input"));
    }
    let shape = net.input_shape().to_vec();
    let n: usize = shape.iter().product();
    let mut rng = rng_from(seed);
    let mut total = 0.0;
    for _ in 0..count {
        let x = Tensor::new(shape.clone(), (0..n).map(|_| rng.sample(StandardNormal)).collect())?;
        total += population_std(net.logits(&x)?.data())?;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Model};

    struct Constant(Vec<f64>, Vec<usize>);

    impl Network for Constant {
        fn input_shape(&self) -> &[usize] {
            &self.1
        }
        fn num_classes(&self) -> usize {
            self.0.len()
        }
        fn logits(&self, _: &Tensor) -> Result<Tensor> {
            Ok(Tensor::from_vec(self.0.clone()))
        }
    }

    fn identity(n: usize) -> Model {
        Model::new(
            "id",
            vec![n],
            n,
            vec![Layer::Dense {
                weight: Tensor::eye(n),
                bias: Tensor::zeros(&[n]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn sample_count_rule() {
        assert_eq!(choose_sample_count(1000).unwrap(), 1);
        assert_eq!(choose_sample_count(10).unwrap(), 1);
        assert_eq!(choose_sample_count(1).unwrap(), 32);
        assert_eq!(choose_sample_count(3).unwrap(), 11);
        assert!(choose_sample_count(0).is_err());
        let strict = SamplePolicy {
            cutoff: 100,
            ..SamplePolicy::default()
        };
        assert_eq!(strict.sample_count(10).unwrap(), 4);
    }

    #[test]
    fn deterministic_constant_vector_has_zero_spread() {
        let m = identity(5);
        let mut btv = BayesianTestVector::new(vec![5], vec![0.7; 5], vec![-300.0; 5], 1.0).unwrap();
        btv.set_clean_sigma(0.0);
        btv.set_threshold(1e-3).unwrap();
        let e = estimate_seeded(&m, &btv, 1, 3).unwrap();
        assert_eq!(e.sigma_y, 0.0);
        assert_eq!(e.verdict().unwrap(), false);
    }

    #[test]
    fn fixed_logits_give_their_std() {
        let m = Constant(vec![0.0, 2.0], vec![4]);
        let btv = BayesianTestVector::init(vec![4], 1.0, 0.0);
        for seed in 0..5 {
            let e = estimate_seeded(&m, &btv, 16, seed).unwrap();
            assert_eq!(e.sigma_y, 1.0);
            assert_eq!(e.logit_pool_size, 32);
        }
        assert_eq!(random_input_sigma(&m, 10, 1).unwrap(), 1.0);
        assert!(random_input_sigma(&m, 0, 1).is_err());
    }

    #[test]
    fn verdict_requires_threshold() {
        let m = Constant(vec![0.0, 2.0], vec![4]);
        let btv = BayesianTestVector::init(vec![4], 1.0, 0.0);
        let e = estimate_seeded(&m, &btv, 1, 0).unwrap();
        assert!(matches!(e.verdict(), Err(Error::Contract(_))));
    }

    #[test]
    fn verdict_detects_on_equality() {
        let m = Constant(vec![0.0, 2.0], vec![4]);
        let mut btv = BayesianTestVector::init(vec![4], 1.0, 0.0);
        btv.set_clean_sigma(1.0);
        btv.set_threshold(1.0).unwrap();
        assert_eq!(estimate_seeded(&m, &btv, 1, 0).unwrap().verdict().unwrap(), true);
    }

    #[test]
    fn calibration_offsets() {
        let m = identity(4);
        let mut btv = BayesianTestVector::init(vec![4], 1.0, -2.0);
        let t0 = calibrate_threshold(&m, &mut btv, 0.0, 1, 11).unwrap();
        assert_eq!(t0, btv.clean_sigma());
        let t3 = calibrate_threshold(&m, &mut btv, 0.3, 1, 11).unwrap();
        assert_eq!(t3, btv.clean_sigma() + 0.3);
        assert!(matches!(
            calibrate_threshold(&m, &mut btv, -0.1, 1, 11),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = identity(4);
        let btv = BayesianTestVector::init(vec![3], 1.0, 0.0);
        assert!(matches!(estimate_seeded(&m, &btv, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn presampled_is_one_pass() {
        let m = identity(4);
        let c = crate::nn::CountingNetwork::new(&m);
        let v = PresampledVector {
            input: Tensor::from_vec(vec![1.0, 3.0, 1.0, 3.0]),
            clean_sigma: 1.0,
            threshold: Some(1.5),
        };
        let e = estimate_presampled(&c, &v).unwrap();
        assert_eq!(e.sigma_y, 1.0);
        assert_eq!(e.uncertain, Some(false));
        assert_eq!(c.passes(), 1);
    }
}
