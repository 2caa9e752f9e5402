//! `BTVV` (optimized vector) and `BTVS` (one pre-drawn sample) files.
//!
//! ```text
//! BTVV: magic | u32 version | dims | f32 mu[n] | f32 logvar[n]
//!       | f64 clean_sigma | f64 alpha | u8 has_t | [f64 t] | u32 crc32
//! BTVS: magic | u32 version | dims | f32 input[n]
//!       | f64 clean_sigma | u8 has_t | [f64 t] | u32 crc32
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::BayesianTestVector;
use crate::codec::{write_atomic, Reader, Writer};
use crate::error::{Error, Result};
use crate::estimate::PresampledVector;
use crate::tensor::Tensor;

const BTV_MAGIC: &[u8; 4] = b"BTVV";
const SAMPLE_MAGIC: &[u8; 4] = b"BTVS";
const VERSION: u32 = 1;

/// Bytes per megabyte in storage figures.
pub const MEGABYTE: f64 = 1e6;

/// Parameter payload of a stored vector: two 32-bit values per element.
pub fn btv_payload_bytes(shape: &[usize]) -> usize {
    2 * shape.iter().product::<usize>() * 4
}

/// Payload of a stored pre-drawn sample: one 32-bit value per element.
pub fn presampled_payload_bytes(shape: &[usize]) -> usize {
    shape.iter().product::<usize>() * 4
}

fn f32s(w: &mut Writer, v: &[f64]) {
    for &x in v {
        w.f32(x as f32);
    }
}

fn threshold(w: &mut Writer, t: Option<f64>) {
    match t {
        Some(t) => {
            w.u8(1).f64(t);
        }
        None => {
            w.u8(0);
        }
    }
}

fn read_threshold(r: &mut Reader<'_>) -> Result<Option<f64>> {
    let at = r.offset();
    match r.u8("threshold flag")? {
        0 => Ok(None),
        1 => Ok(Some(r.f64("threshold")?)),
        f => Err(Error::parse(at, format!("invalid threshold flag {f}"))),
    }
}

fn widen(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

pub fn write_btv(btv: &BayesianTestVector) -> Result<Vec<u8>> {
    let mut w = Writer::new(BTV_MAGIC);
    w.u32(VERSION).dims(btv.shape())?;
    f32s(&mut w, btv.mu());
    f32s(&mut w, btv.logvar());
    w.f64(btv.clean_sigma()).f64(btv.alpha());
    threshold(&mut w, btv.threshold());
    Ok(w.finish())
}

pub fn read_btv(bytes: &[u8]) -> Result<BayesianTestVector> {
    let mut r = Reader::open(bytes, BTV_MAGIC)?;
    r.version(VERSION)?;
    let shape = r.dims("test vector shape")?;
    let n = shape.iter().product();
    let at = r.offset();
    let mu = widen(r.f32s(n, "mu")?);
    let logvar = widen(r.f32s(n, "logvar")?);
    let clean_sigma = r.f64("clean sigma")?;
    let alpha = r.f64("alpha")?;
    let t = read_threshold(&mut r)?;
    r.finish()?;
    let mut btv = BayesianTestVector::new(shape, mu, logvar, alpha)
        .map_err(|e| Error::parse(at, e.to_string()))?;
    btv.set_clean_sigma(clean_sigma);
    if let Some(t) = t {
        btv.set_threshold(t)
            .map_err(|e| Error::Integrity(e.to_string()))?;
    }
    Ok(btv)
}

pub fn save_btv(btv: &BayesianTestVector, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_btv(btv)?)
}

pub fn load_btv(path: impl AsRef<Path>) -> Result<BayesianTestVector> {
    read_btv(&std::fs::read(path)?)
}

pub fn write_presampled(v: &PresampledVector) -> Result<Vec<u8>> {
    let mut w = Writer::new(SAMPLE_MAGIC);
    w.u32(VERSION).dims(v.input.shape())?;
    f32s(&mut w, v.input.data());
    w.f64(v.clean_sigma);
    threshold(&mut w, v.threshold);
    Ok(w.finish())
}

pub fn read_presampled(bytes: &[u8]) -> Result<PresampledVector> {
    let mut r = Reader::open(bytes, SAMPLE_MAGIC)?;
    r.version(VERSION)?;
    let shape = r.dims("sample shape")?;
    let n = shape.iter().product();
    let data = widen(r.f32s(n, "sample")?);
    let clean_sigma = r.f64("clean sigma")?;
    let threshold = read_threshold(&mut r)?;
    r.finish()?;
    Ok(PresampledVector {
        input: Tensor::new(shape, data)?,
        clean_sigma,
        threshold,
    })
}

pub fn save_presampled(v: &PresampledVector, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_presampled(v)?)
}

pub fn load_presampled(path: impl AsRef<Path>) -> Result<PresampledVector> {
    read_presampled(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector() -> BayesianTestVector {
        let mut b = BayesianTestVector::new(
            vec![2, 3],
            vec![0.1, -0.2, 0.3, 1.7, -5.5, 0.0],
            vec![-5.0, -4.9, 0.25, -1.0, 2.0, -7.5],
            1e-4,
        )
        .unwrap();
        b.set_clean_sigma(0.0123456789);
        b
    }

    #[test]
    fn round_trip_with_and_without_threshold() {
        let mut b = vector();
        assert_eq!(read_btv(&write_btv(&b).unwrap()).unwrap(), b);
        b.set_threshold(0.2).unwrap();
        assert_eq!(read_btv(&write_btv(&b).unwrap()).unwrap(), b);
    }

    #[test]
    fn payload_is_two_floats_per_element() {
        let b = BayesianTestVector::init(vec![3, 32, 32], 1.0, -5.0);
        let bytes = write_btv(&b).unwrap();
        // magic, version, rank + 3 extents, clean sigma, alpha, flag, crc
        let overhead = 4 + 4 + 16 + 8 + 8 + 1 + 4;
        assert_eq!(bytes.len() - overhead, btv_payload_bytes(b.shape()));
        assert_eq!(btv_payload_bytes(b.shape()), 24_576);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = write_btv(&vector()).unwrap();
        bytes[30] ^= 0x40;
        assert!(matches!(read_btv(&bytes), Err(Error::Integrity(_))));
        assert!(matches!(read_btv(b"BTVQxxxxxxxx"), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn presampled_round_trip() {
        let v = PresampledVector {
            input: Tensor::new(vec![2, 2], vec![0.5, -0.25, 3.0, 1.0]).unwrap(),
            clean_sigma: 0.7,
            threshold: Some(0.9),
        };
        let bytes = write_presampled(&v).unwrap();
        assert_eq!(read_presampled(&bytes).unwrap(), v);
        assert!(read_btv(&bytes).is_err());
    }
}
