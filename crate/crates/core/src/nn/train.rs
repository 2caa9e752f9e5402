use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_accuracy, Dataset, Model};
use crate::error::{Error, Result};
use crate::rng::{child_rng, mix, stream};
use crate::tape::Tape;

/// Mini-batch SGD on softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    pub train_accuracy: f64,
}

struct SampleGrad {
    loss: f64,
    grads: Vec<(Vec<f64>, Vec<f64>)>,
}

fn sample_grad(model: &Model, x: &crate::tensor::Tensor, label: usize) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let traced = model.forward_on(&mut tape, xv, true)?;
    let loss = tape.cross_entropy(traced.logits, label)?;
    let loss_value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    let grads = traced
        .params
        .iter()
        .map(|&(w, b)| {
            (
                tape.grad(w).expect("weight leaf").to_vec(),
                tape.grad(b).expect("bias leaf").to_vec(),
            )
        })
        .collect();
    Ok(SampleGrad {
        loss: loss_value,
        grads,
    })
}

/// Trains a copy of `arch` (an initialized model) on `dataset`.
///
/// Per-sample gradients inside a batch are computed in parallel and summed in
/// sample order, so the result is bit-identical for a given seed regardless of
/// the thread count.
pub fn train_reference(dataset: &Dataset, arch: &Model, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    if dataset.num_classes() != arch.num_classes() {
        return Err(Error::contract(format!(
            "dataset has {} classes, model emits {}",
            dataset.num_classes(),
            arch.num_classes()
        )));
    }
    if dataset.input_shape() != arch.input_shape() {
        return Err(Error::dim(format!(
            "dataset inputs {:?} do not fit model input {:?}",
            dataset.input_shape(),
            arch.input_shape()
        )));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(
            "train: batch_size and learning_rate must be positive".into(),
        ));
    }

    let mut model = arch.clone();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = child_rng(mix(cfg.seed, stream::SHUFFLE), epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<SampleGrad>> = batch
                .par_iter()
                .map(|&i| sample_grad(&model, &dataset.inputs()[i], dataset.labels()[i]))
                .collect();

            let mut acc: Option<Vec<(Vec<f64>, Vec<f64>)>> = None;
            for (j, r) in results.into_iter().enumerate() {
                let sg = r?;
                if !sg.loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        sample: batch_idx * cfg.batch_size + j,
                        message: format!("non-finite loss {} (learning rate {})", sg.loss, cfg.learning_rate),
                    });
                }
                total += sg.loss;
                match &mut acc {
                    None => acc = Some(sg.grads),
                    Some(a) => {
                        for ((aw, ab), (gw, gb)) in a.iter_mut().zip(sg.grads) {
                            aw.iter_mut().zip(gw).for_each(|(x, y)| *x += y);
                            ab.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }

            let step = cfg.learning_rate / batch.len() as f64;
            let acc = acc.expect("non-empty batch");
            let mut k = 0;
            let mut finite = true;
            model.for_each_param_mut(|_, w, b| {
                let (gw, gb) = &acc[k];
                w.iter_mut().zip(gw).for_each(|(x, g)| *x -= step * g);
                b.iter_mut().zip(gb).for_each(|(x, g)| *x -= step * g);
                finite &= w.iter().chain(b.iter()).all(|v| v.is_finite());
                k += 1;
            });
            if !finite {
                return Err(Error::Training {
                    epoch,
                    sample: batch_idx * cfg.batch_size,
                    message: format!("non-finite weights after update (learning rate {})", cfg.learning_rate),
                });
            }
        }
        epoch_loss.push(total / dataset.len() as f64);
    }

    let train_accuracy = evaluate_accuracy(&model, dataset)?;
    Ok((
        model,
        TrainReport {
            epoch_loss,
            train_accuracy,
        },
    ))
}
