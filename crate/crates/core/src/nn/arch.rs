use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Layer, Model};
use crate::error::{Error, Result};
use crate::rng::{child_rng, stream, ChaCha8Rng};
use crate::tensor::Tensor;

/// Reference architectures used as models under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// flatten → (dense → relu)* → dense
    Mlp { hidden: Vec<usize> },
    /// (conv3×3 pad 1 → relu → avgpool)×2 → flatten → dense → relu → dense
    Cnn { channels: [usize; 2], hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Mlp { hidden: vec![64] }
    }
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

fn dense(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Layer {
    Layer::Dense {
        weight: he_normal(rng, &[n_out, n_in], n_in),
        bias: Tensor::zeros(&[n_out]),
    }
}

impl Architecture {
    /// Instantiates the architecture with He-normal weights and zero biases.
    pub fn build(&self, name: &str, input_shape: &[usize], classes: usize, seed: u64) -> Result<Model> {
        let mut rng = child_rng(seed, stream::INIT);
        let mut layers = Vec::new();
        match self {
            Architecture::Mlp { hidden } => {
                layers.push(Layer::Flatten);
                let mut width: usize = input_shape.iter().product();
                for &h in hidden {
                    layers.push(dense(&mut rng, width, h));
                    layers.push(Layer::Relu);
                    width = h;
                }
                layers.push(dense(&mut rng, width, classes));
            }
            Architecture::Cnn { channels, hidden } => {
                if input_shape.len() != 3 {
                    return Err(Error::dim(format!(
                        "cnn needs a C×H×W input, got {input_shape:?}"
                    )));
                }
                let (mut c, mut h, mut w) = (input_shape[0], input_shape[1], input_shape[2]);
                for &out in channels {
                    layers.push(Layer::Conv2d {
                        kernels: he_normal(&mut rng, &[out, c, 3, 3], c * 9),
                        bias: Tensor::zeros(&[out]),
                        stride: 1,
                        padding: 1,
                    });
                    layers.push(Layer::Relu);
                    layers.push(Layer::AvgPool2x2);
                    c = out;
                    h /= 2;
                    w /= 2;
                }
                layers.push(Layer::Flatten);
                layers.push(dense(&mut rng, c * h * w, *hidden));
                layers.push(Layer::Relu);
                layers.push(dense(&mut rng, *hidden, classes));
            }
        }
        Model::new(name, input_shape.to_vec(), classes, layers)
    }
}
