//! `BTVM` model files and `BTVD` dataset files.
//!
//! Model: `"BTVM" | version u32 | header_len u32 | header (UTF-8 JSON) |
//! f64 payload | crc32`. The payload holds, for each parameterized layer in
//! header order, the weight values followed by the bias values.
//!
//! Dataset: `"BTVD" | version u32 | count u32 | classes u32 | rank u32 |
//! extents u32… | f64 inputs | u16 labels | crc32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Layer, LayerKind, Model};
use crate::codec::{to_u32, write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub(crate) const MODEL_MAGIC: &[u8; 4] = b"BTVM";
const MODEL_VERSION: u32 = 1;
const DATASET_MAGIC: &[u8; 4] = b"BTVD";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct LayerHeader {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ModelHeader {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerHeader>,
}

impl LayerHeader {
    pub fn describe(layer: &Layer) -> Self {
        let (stride, padding) = match layer {
            Layer::Conv2d { stride, padding, .. } => (Some(*stride), Some(*padding)),
            _ => (None, None),
        };
        LayerHeader {
            kind: layer.kind(),
            weight_shape: layer.weight().map(|w| w.shape().to_vec()),
            bias_shape: layer.bias().map(|b| b.shape().to_vec()),
            stride,
            padding,
        }
    }

    /// Weight and bias shapes of a parameterized layer.
    pub fn param_shapes(&self, at: usize) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
        match self.kind {
            LayerKind::Dense | LayerKind::Conv2d => {
                let w = self.weight_shape.clone();
                let b = self.bias_shape.clone();
                match (w, b) {
                    (Some(w), Some(b)) if !w.contains(&0) && !b.contains(&0) => Ok(Some((w, b))),
                    _ => Err(Error::parse(at, format!("{:?} layer without valid shapes", self.kind))),
                }
            }
            _ => Ok(None),
        }
    }

    /// Rebuilds a layer from its header and parameter tensors.
    pub fn build(&self, params: Option<(Tensor, Tensor)>, at: usize) -> Result<Layer> {
        Ok(match (self.kind, params) {
            (LayerKind::Dense, Some((weight, bias))) => Layer::Dense { weight, bias },
            (LayerKind::Conv2d, Some((kernels, bias))) => Layer::Conv2d {
                kernels,
                bias,
                stride: self.stride.ok_or_else(|| Error::parse(at, "conv2d layer without stride"))?,
                padding: self.padding.ok_or_else(|| Error::parse(at, "conv2d layer without padding"))?,
            },
            (LayerKind::Relu, None) => Layer::Relu,
            (LayerKind::Flatten, None) => Layer::Flatten,
            (LayerKind::Avgpool2x2, None) => Layer::AvgPool2x2,
            (kind, _) => return Err(Error::parse(at, format!("inconsistent {kind:?} layer"))),
        })
    }
}

impl ModelHeader {
    pub fn describe(model: &Model) -> Self {
        ModelHeader {
            name: model.name.clone(),
            input_shape: model.input_shape().to_vec(),
            num_classes: model.num_classes(),
            layers: model.layers().iter().map(LayerHeader::describe).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("header serializes")
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let raw = r.blob("header")?;
        let text = std::str::from_utf8(raw)
            .map_err(|e| Error::parse(at + 4 + e.valid_up_to(), "header is not UTF-8"))?;
        serde_json::from_str(text).map_err(|e| Error::parse(at + 4, format!("bad header: {e}")))
    }
}

pub fn write_model(model: &Model) -> Result<Vec<u8>> {
    let mut w = Writer::new(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.blob(&ModelHeader::describe(model).encode())?;
    for layer in model.layers() {
        if let (Some(wt), Some(b)) = (layer.weight(), layer.bias()) {
            w.f64s(wt.data()).f64s(b.data());
        }
    }
    Ok(w.finish())
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::open(bytes, MODEL_MAGIC)?;
    r.version(MODEL_VERSION)?;
    let header = ModelHeader::decode(&mut r)?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for lh in &header.layers {
        let at = r.offset();
        let params = match lh.param_shapes(at)? {
            Some((ws, bs)) => {
                let wn = ws.iter().product();
                let bn = bs.iter().product();
                let w = Tensor::new(ws, r.f64s(wn, "weights")?)?;
                let b = Tensor::new(bs, r.f64s(bn, "bias")?)?;
                Some((w, b))
            }
            None => None,
        };
        layers.push(lh.build(params, at)?);
    }
    let end = r.offset();
    r.finish()?;
    Model::new(header.name, header.input_shape, header.num_classes, layers)
        .map_err(|e| Error::parse(end, format!("inconsistent model: {e}")))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(&std::fs::read(path)?)
}

pub fn write_dataset(data: &Dataset) -> Result<Vec<u8>> {
    let mut w = Writer::new(DATASET_MAGIC);
    w.u32(DATASET_VERSION)
        .u32(to_u32(data.len())?)
        .u32(to_u32(data.num_classes())?);
    w.dims(data.input_shape())?;
    for x in data.inputs() {
        w.f64s(x.data());
    }
    for &l in data.labels() {
        let l = u16::try_from(l).map_err(|_| Error::contract("label exceeds u16"))?;
        w.u16(l);
    }
    Ok(w.finish())
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::open(bytes, DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let count = r.u32("sample count")? as usize;
    let classes = r.u32("class count")? as usize;
    let shape = r.dims("input shape")?;
    let per: usize = shape.iter().product();
    let mut inputs = Vec::with_capacity(count);
    for _ in 0..count {
        inputs.push(Tensor::new(shape.clone(), r.f64s(per, "inputs")?)?);
    }
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(r.u16("labels")? as usize);
    }
    let end = r.offset();
    r.finish()?;
    Dataset::new(shape, classes, inputs, labels)
        .map_err(|e| Error::parse(end, format!("inconsistent dataset: {e}")))
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_dataset(data)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(&std::fs::read(path)?)
}
