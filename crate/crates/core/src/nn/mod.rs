//! Layers, models and forward evaluation.

mod arch;
mod data;
pub(crate) mod io;
mod train;

pub use arch::Architecture;
pub use data::{Dataset, SyntheticBlobs};
pub use io::{load_dataset, load_model, read_dataset, read_model, save_dataset, save_model, write_dataset, write_model};
pub use train::{train_reference, TrainConfig, TrainReport};

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ConvGeom, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = W·x + b` with `W: out×in`.
    Dense { weight: Tensor, bias: Tensor },
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    Flatten,
    AvgPool2x2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Flatten,
    Avgpool2x2,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
            Layer::AvgPool2x2 => LayerKind::Avgpool2x2,
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { weight, .. } => Some(weight),
            Layer::Conv2d { kernels, .. } => Some(kernels),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense { weight, .. } => Some(weight),
            Layer::Conv2d { kernels, .. } => Some(kernels),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&Tensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => Some(bias),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 2 {
                    return Err(Error::dim(format!("dense weight must be out×in, got {ws:?}")));
                }
                if bias.shape() != [ws[0]] {
                    return Err(Error::dim(format!(
                        "dense bias {:?} does not match {} outputs",
                        bias.shape(),
                        ws[0]
                    )));
                }
                if input != [ws[1]] {
                    return Err(Error::dim(format!(
                        "dense layer expects [{}] input, got {input:?}",
                        ws[1]
                    )));
                }
                Ok(vec![ws[0]])
            }
            Layer::Conv2d {
                kernels,
                bias,
                stride,
                padding,
            } => {
                let g = ConvGeom::new(input, kernels.shape(), *stride, *padding)?;
                if bias.shape() != [g.c_out] {
                    return Err(Error::dim(format!(
                        "conv bias {:?} does not match {} channels",
                        bias.shape(),
                        g.c_out
                    )));
                }
                Ok(vec![g.c_out, g.h_out, g.w_out])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::AvgPool2x2 => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(Error::dim(format!("avgpool2x2 on {input:?}")));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
        }
    }
}

/// An ordered stack of layers mapping an input tensor to raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<Layer>,
}

/// Tape handles produced by [`Model::forward_on`].
#[derive(Debug, Clone)]
pub struct Traced {
    pub logits: Var,
    /// `(weight, bias)` per parameterized layer, when parameters were tracked.
    pub params: Vec<(Var, Var)>,
}

impl Model {
    /// Builds a model and checks that layer shapes chain into `num_classes` logits.
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        num_classes: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::contract("a model needs at least one output class"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::dim(format!("bad input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::dim(format!("layer {i}: {e}")))?;
        }
        if shape != [num_classes] {
            return Err(Error::dim(format!(
                "model emits {shape:?}, expected [{num_classes}] logits"
            )));
        }
        Ok(Model {
            name: name.into(),
            input_shape,
            num_classes,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Indices (into [`Model::layers`]) of layers that carry weights.
    pub fn param_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.weight().is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Mutable access to weight and bias values; shapes stay fixed.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut [f64], &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::Dense { weight, bias } | Layer::Conv2d { kernels: weight, bias, .. } = layer {
                f(i, weight.data_mut(), bias.data_mut());
            }
        }
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().filter_map(|l| l.weight()).map(|w| w.len()).sum()
    }

    /// Records the forward pass of `x` on `tape`.
    ///
    /// With `track_params` the weights and biases become gradient-carrying leaves.
    pub fn forward_on<'a>(&'a self, tape: &mut Tape<'a>, x: Var, track_params: bool) -> Result<Traced> {
        if tape.shape(x) != self.input_shape.as_slice() {
            return Err(Error::dim(format!(
                "model {} expects input {:?}, got {:?}",
                self.name,
                self.input_shape,
                tape.shape(x)
            )));
        }
        let leaf = |tape: &mut Tape<'a>, t: &'a Tensor| {
            if track_params {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        let mut params = Vec::new();
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { weight, bias } => {
                    let w = leaf(tape, weight);
                    let b = leaf(tape, bias);
                    params.push((w, b));
                    let n_in = weight.shape()[1];
                    let col = tape.reshape(h, &[n_in, 1])?;
                    let y = tape.matmul(w, col)?;
                    let y = tape.reshape(y, &[weight.shape()[0]])?;
                    tape.add(y, b)?
                }
                Layer::Conv2d {
                    kernels,
                    bias,
                    stride,
                    padding,
                } => {
                    let k = leaf(tape, kernels);
                    let b = leaf(tape, bias);
                    params.push((k, b));
                    let y = tape.conv2d(h, k, *stride, *padding)?;
                    tape.channel_bias(y, b)?
                }
                Layer::Relu => tape.relu(h),
                Layer::Flatten => {
                    let n = tape.value(h).len();
                    tape.reshape(h, &[n])?
                }
                Layer::AvgPool2x2 => tape.avgpool2x2(h)?,
            };
        }
        Ok(Traced { logits: h, params })
    }

    /// Logits for one input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let out = self.forward_on(&mut tape, x, false)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Anything that maps an input tensor to a logit vector.
pub trait Network: Sync {
    fn input_shape(&self) -> &[usize];
    fn num_classes(&self) -> usize;
    fn logits(&self, input: &Tensor) -> Result<Tensor>;
}

impl Network for Model {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input)
    }
}

/// Wraps a network and counts forward passes.
#[derive(Debug)]
pub struct CountingNetwork<'n, N: ?Sized> {
    inner: &'n N,
    passes: AtomicUsize,
}

impl<'n, N: Network + ?Sized> CountingNetwork<'n, N> {
    pub fn new(inner: &'n N) -> Self {
        CountingNetwork {
            inner,
            passes: AtomicUsize::new(0),
        }
    }

    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }
}

impl<N: Network + ?Sized> Network for CountingNetwork<'_, N> {
    fn input_shape(&self) -> &[usize] {
        self.inner.input_shape()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        self.inner.logits(input)
    }
}

/// Fraction of samples whose argmax logit equals the label (ties to the lowest class).
pub fn evaluate_accuracy<N: Network + ?Sized>(net: &N, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::contract("accuracy of an empty dataset"));
    }
    let mut correct = 0usize;
    for (x, &y) in dataset.inputs().iter().zip(dataset.labels()) {
        if net.logits(x)?.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
