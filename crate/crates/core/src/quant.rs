//! Symmetric per-tensor 8-bit post-training quantization of weights.
//!
//! `scale = max|w| / 127` and `level = round_ties_even(w / scale)`, so levels
//! stay in `[-127, 127]` and `-128` is never produced by quantization. Biases
//! stay in full precision. For fault injection a level is stored as its 8-bit
//! two's-complement pattern: bit 7 is the sign bit, bits 0–6 the magnitude
//! bits of the usual encoding.
//!
//! `BTVQ` files reuse the `BTVM` header; the payload holds, per parameterized
//! layer, the `i8` levels, one `f64` scale and the `f64` biases.

use std::path::Path;

use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::io::{LayerHeader, ModelHeader};
use crate::nn::{Model, Network};
use crate::tensor::Tensor;

pub const LEVEL_MAX: i8 = 127;
const QMODEL_MAGIC: &[u8; 4] = b"BTVQ";
const QMODEL_VERSION: u32 = 1;

/// Quantized weights of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLayer {
    /// Index into [`Model::layers`].
    pub layer_index: usize,
    pub levels: Vec<i8>,
    pub scale: f64,
}

impl QuantLayer {
    pub fn dequantized(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.iter().map(move |&l| f64::from(l) * self.scale)
    }
}

/// A model whose weights live on the 8-bit lattice `level × scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    layers: Vec<QuantLayer>,
    // Structure, biases, and weights equal to `level × scale`.
    dequantized: Model,
}

/// Layers that needed special handling during quantization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuantReport {
    /// Parameterized layers whose weights were all zero (scale forced to 1).
    pub zero_layers: Vec<usize>,
}

fn quantize_weights(w: &[f64]) -> (Vec<i8>, f64) {
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return (vec![0; w.len()], 1.0);
    }
    let scale = max / f64::from(LEVEL_MAX);
    let levels = w
        .iter()
        .map(|&v| (v / scale).round_ties_even().clamp(-127.0, 127.0) as i8)
        .collect();
    (levels, scale)
}

pub fn quantize_with_report(model: &Model) -> Result<(QuantizedModel, QuantReport)> {
    let mut layers = Vec::new();
    let mut report = QuantReport::default();
    for idx in model.param_layers() {
        let w = model.layers()[idx].weight().expect("param layer");
        if !w.is_finite() {
            return Err(Error::Domain(format!("layer {idx} has non-finite weights")));
        }
        let (levels, scale) = quantize_weights(w.data());
        if w.data().iter().all(|&v| v == 0.0) {
            report.zero_layers.push(idx);
        }
        layers.push(QuantLayer {
            layer_index: idx,
            levels,
            scale,
        });
    }
    Ok((QuantizedModel::assemble(model, layers)?, report))
}

pub fn quantize(model: &Model) -> Result<QuantizedModel> {
    quantize_with_report(model).map(|(q, _)| q)
}

impl QuantizedModel {
    /// Combines the structure and biases of `base` with quantized weights.
    fn assemble(base: &Model, layers: Vec<QuantLayer>) -> Result<Self> {
        let mut dequantized = base.clone();
        let param_layers = base.param_layers();
        if param_layers.len() != layers.len() {
            return Err(Error::contract(format!(
                "{} quantized layers for {} parameterized layers",
                layers.len(),
                param_layers.len()
            )));
        }
        let mut k = 0;
        let mut err = None;
        dequantized.for_each_param_mut(|idx, w, _| {
            let ql = &layers[k];
            k += 1;
            if ql.layer_index != idx || ql.levels.len() != w.len() || !(ql.scale > 0.0) {
                err.get_or_insert(Error::contract(format!("quantized layer {idx} does not match model")));
                return;
            }
            for (dst, v) in w.iter_mut().zip(ql.dequantized()) {
                *dst = v;
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(QuantizedModel { layers, dequantized }),
        }
    }

    /// Same structure and biases with different levels (used by fault injectors).
    pub fn with_layers(&self, layers: Vec<QuantLayer>) -> Result<Self> {
        Self::assemble(&self.dequantized, layers)
    }

    pub fn quant_layers(&self) -> &[QuantLayer] {
        &self.layers
    }

    pub fn dequantize(&self) -> Model {
        self.dequantized.clone()
    }

    pub fn as_model(&self) -> &Model {
        &self.dequantized
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.levels.len()).sum()
    }
}

impl Network for QuantizedModel {
    fn input_shape(&self) -> &[usize] {
        self.dequantized.input_shape()
    }

    fn num_classes(&self) -> usize {
        self.dequantized.num_classes()
    }

    fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.dequantized.forward(input)
    }
}

pub fn write_quantized(q: &QuantizedModel) -> Result<Vec<u8>> {
    let m = &q.dequantized;
    let mut w = Writer::new(QMODEL_MAGIC);
    w.u32(QMODEL_VERSION);
    w.blob(&ModelHeader::describe(m).encode())?;
    for ql in &q.layers {
        let bias = m.layers()[ql.layer_index].bias().expect("param layer");
        w.i8s(&ql.levels).f64(ql.scale).f64s(bias.data());
    }
    Ok(w.finish())
}

pub fn read_quantized(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = Reader::open(bytes, QMODEL_MAGIC)?;
    r.version(QMODEL_VERSION)?;
    let header = ModelHeader::decode(&mut r)?;
    let mut layers = Vec::with_capacity(header.layers.len());
    let mut qlayers = Vec::new();
    for (idx, lh) in header.layers.iter().enumerate() {
        let at = r.offset();
        let params = match LayerHeader::param_shapes(lh, at)? {
            Some((ws, bs)) => {
                let levels = r.i8s(ws.iter().product(), "levels")?;
                let scale_at = r.offset();
                let scale = r.f64("scale")?;
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::parse(scale_at, format!("invalid scale {scale}")));
                }
                let bias = Tensor::new(bs.clone(), r.f64s(bs.iter().product(), "bias")?)?;
                let q = QuantLayer {
                    layer_index: idx,
                    levels,
                    scale,
                };
                let w = Tensor::new(ws, q.dequantized().collect())?;
                qlayers.push(q);
                Some((w, bias))
            }
            None => None,
        };
        layers.push(lh.build(params, at)?);
    }
    let end = r.offset();
    r.finish()?;
    let model = Model::new(header.name, header.input_shape, header.num_classes, layers)
        .map_err(|e| Error::parse(end, format!("inconsistent model: {e}")))?;
    QuantizedModel::assemble(&model, qlayers)
}

pub fn save_quantized(q: &QuantizedModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_quantized(q)?)
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedModel> {
    read_quantized(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Layer};
    use proptest::prelude::*;

    fn dense(weights: Vec<f64>) -> Model {
        let n = weights.len();
        Model::new(
            "d",
            vec![n],
            1,
            vec![Layer::Dense {
                weight: Tensor::new(vec![1, n], weights).unwrap(),
                bias: Tensor::from_vec(vec![0.25]),
            }],
        )
        .unwrap()
    }

    #[test]
    fn unit_range_maps_to_full_levels() {
        let q = quantize(&dense(vec![-1.0, 0.0, 1.0])).unwrap();
        let l = &q.quant_layers()[0];
        assert_eq!(l.levels, vec![-127, 0, 127]);
        assert_eq!(l.scale, 1.0 / 127.0);
    }

    #[test]
    fn all_zero_layer_gets_unit_scale_and_is_reported() {
        let (q, rep) = quantize_with_report(&dense(vec![0.0; 4])).unwrap();
        assert_eq!(q.quant_layers()[0].levels, vec![0; 4]);
        assert_eq!(q.quant_layers()[0].scale, 1.0);
        assert_eq!(rep.zero_layers, vec![0]);
        let w = q.dequantize();
        assert!(w.layers()[0].weight().unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lattice_points_are_fixed() {
        let scale = 0.5 / 127.0;
        let w: Vec<f64> = [-127, -3, 0, 64, 127].iter().map(|&k| k as f64 * scale).collect();
        let m = dense(w.clone());
        let q = quantize(&m).unwrap();
        assert_eq!(q.dequantize().layers()[0].weight().unwrap().data(), w.as_slice());
    }

    #[test]
    fn ties_round_to_even() {
        // max 127 → scale 1, so 2.5 → 2 and 3.5 → 4.
        let q = quantize(&dense(vec![2.5, 3.5, -2.5, 127.0])).unwrap();
        assert_eq!(q.quant_layers()[0].levels, vec![2, 4, -2, 127]);
    }

    #[test]
    fn biases_stay_full_precision() {
        let q = quantize(&dense(vec![0.3, -0.7])).unwrap();
        assert_eq!(q.as_model().layers()[0].bias().unwrap().data(), &[0.25]);
    }

    #[test]
    fn file_round_trip() {
        let m = Architecture::Cnn {
            channels: [2, 2],
            hidden: 4,
        }
        .build("c", &[1, 4, 4], 3, 1)
        .unwrap();
        let q = quantize(&m).unwrap();
        let bytes = write_quantized(&q).unwrap();
        assert_eq!(&bytes[..4], b"BTVQ");
        assert_eq!(read_quantized(&bytes).unwrap(), q);
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(read_quantized(&bad), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(
            read_quantized(&bytes[..bytes.len() / 2]),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn quantize_is_layer_local() {
        let base = Architecture::Mlp { hidden: vec![6] }.build("m", &[5], 3, 2).unwrap();
        let mut changed = base.clone();
        changed.for_each_param_mut(|idx, w, _| {
            if idx == 3 {
                w.iter_mut().for_each(|v| *v *= -3.0);
            }
        });
        let (qa, qb) = (quantize(&base).unwrap(), quantize(&changed).unwrap());
        assert_eq!(qa.quant_layers()[0], qb.quant_layers()[0]);
        assert_ne!(qa.quant_layers()[1], qb.quant_layers()[1]);
    }

    proptest! {
        #[test]
        fn error_bounded_by_half_scale(w in prop::collection::vec(-10.0f64..10.0, 1..64)) {
            let q = quantize(&dense(w.clone())).unwrap();
            let ql = &q.quant_layers()[0];
            prop_assert!(ql.levels.iter().all(|&l| l != -128));
            for (orig, deq) in w.iter().zip(ql.dequantized()) {
                prop_assert!((orig - deq).abs() <= ql.scale / 2.0 + 1e-12);
            }
        }

        #[test]
        fn requantizing_dequantized_is_idempotent(w in prop::collection::vec(-5.0f64..5.0, 1..64)) {
            let q = quantize(&dense(w)).unwrap();
            let d = q.dequantize();
            let q2 = quantize(&d).unwrap();
            prop_assert_eq!(&q.quant_layers()[0].levels, &q2.quant_layers()[0].levels);
            prop_assert_eq!(q2.dequantize(), d);
        }
    }
}
