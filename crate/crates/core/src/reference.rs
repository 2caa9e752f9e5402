//! The two reference setups used as models under test: a small MLP and a
//! small CNN, each trained on synthetic Gaussian class blobs.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{evaluate_accuracy, train_reference, Architecture, Dataset, Model, SyntheticBlobs, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub name: String,
    pub arch: Architecture,
    pub data: SyntheticBlobs,
    pub train: TrainConfig,
    pub train_size: usize,
    pub test_size: usize,
    /// Seed of the weight initialization.
    pub init_seed: u64,
}

/// A trained reference model with its data splits.
#[derive(Debug, Clone)]
pub struct Reference {
    pub model: Model,
    pub train: Dataset,
    pub test: Dataset,
    pub test_accuracy: f64,
}

impl ReferenceSpec {
    /// flatten → 64 → relu → 10 on 3×8×8 blobs with noise 3.
    pub fn mlp() -> Self {
        ReferenceSpec {
            name: "reference-mlp".into(),
            arch: Architecture::Mlp { hidden: vec![64] },
            data: SyntheticBlobs::default(),
            train: TrainConfig::default(),
            train_size: 2000,
            test_size: 1000,
            init_seed: 1,
        }
    }

    /// Two conv blocks (8, 16 channels) → 32 → 10 on 3×8×8 blobs with noise 2.
    pub fn cnn() -> Self {
        ReferenceSpec {
            name: "reference-cnn".into(),
            arch: Architecture::Cnn {
                channels: [8, 16],
                hidden: 32,
            },
            data: SyntheticBlobs {
                noise: 2.0,
                ..SyntheticBlobs::default()
            },
            train: TrainConfig {
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
            train_size: 2000,
            test_size: 1000,
            init_seed: 1,
        }
    }

    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            self.data.generate(self.train_size, 0)?,
            self.data.generate(self.test_size, 1)?,
        ))
    }

    pub fn untrained(&self) -> Result<Model> {
        self.arch
            .build(&self.name, &self.data.shape, self.data.classes, self.init_seed)
    }

    pub fn build(&self) -> Result<Reference> {
        let (train, test) = self.datasets()?;
        let (model, _) = train_reference(&train, &self.untrained()?, &self.train)?;
        let test_accuracy = evaluate_accuracy(&model, &test)?;
        Ok(Reference {
            model,
            train,
            test,
            test_accuracy,
        })
    }
}
