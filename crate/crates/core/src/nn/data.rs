use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_rng, mix, stream};
use crate::tensor::Tensor;

/// Labelled inputs of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_shape: Vec<usize>,
    num_classes: usize,
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        input_shape: Vec<usize>,
        num_classes: usize,
        inputs: Vec<Tensor>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::contract(format!(
                "dataset needs equal, non-zero numbers of inputs and labels ({} vs {})",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(bad) = inputs.iter().position(|x| x.shape() != input_shape.as_slice()) {
            return Err(Error::dim(format!(
                "sample {bad} has shape {:?}, expected {input_shape:?}",
                inputs[bad].shape()
            )));
        }
        if let Some(bad) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::contract(format!(
                "label {} of sample {bad} outside [0, {num_classes})",
                labels[bad]
            )));
        }
        Ok(Dataset {
            input_shape,
            num_classes,
            inputs,
            labels,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Gaussian blobs rendered as small images.
///
/// Each class owns a prototype image with i.i.d. `N(0, 1)` pixels; a sample is
/// its class prototype plus i.i.d. `N(0, noise²)` pixel noise. Labels cycle
/// through the classes so every split is balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBlobs {
    pub shape: Vec<usize>,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticBlobs {
    fn default() -> Self {
        SyntheticBlobs {
            shape: vec![3, 8, 8],
            classes: 10,
            noise: 3.0,
            seed: 2024,
        }
    }
}

impl SyntheticBlobs {
    fn prototypes(&self) -> Vec<Vec<f64>> {
        let n: usize = self.shape.iter().product();
        let mut rng = child_rng(self.seed, stream::INIT);
        (0..self.classes)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    /// Draws `count` samples. Different `split` values give disjoint sample streams
    /// over the same prototypes.
    pub fn generate(&self, count: usize, split: u64) -> Result<Dataset> {
        if self.classes == 0 || count == 0 {
            return Err(Error::contract("synthetic dataset needs classes and samples"));
        }
        let protos = self.prototypes();
        let mut rng = child_rng(mix(self.seed, stream::DATA), split);
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % self.classes;
            let data = protos[label]
                .iter()
                .map(|p| p + self.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            inputs.push(Tensor::new(self.shape.clone(), data)?);
            labels.push(label);
        }
        Dataset::new(self.shape.clone(), self.classes, inputs, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let spec = SyntheticBlobs::default();
        let a = spec.generate(50, 0).unwrap();
        let b = spec.generate(50, 0).unwrap();
        let c = spec.generate(50, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.inputs()[0], c.inputs()[0]);
        for k in 0..10 {
            assert_eq!(a.labels().iter().filter(|&&l| l == k).count(), 5);
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let r = Dataset::new(vec![1], 2, vec![Tensor::scalar(1.0)], vec![0, 1]);
        assert!(r.is_err());
        let r = Dataset::new(vec![1], 2, vec![], vec![]);
        assert!(r.is_err());
        let r = Dataset::new(vec![1], 2, vec![Tensor::scalar(1.0)], vec![2]);
        assert!(r.is_err());
    }
}
