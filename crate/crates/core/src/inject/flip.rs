use rand::Rng;

use super::{InjectionKind, InjectionSpec};
use crate::error::Result;
use crate::quant::{QuantLayer, QuantizedModel, LEVEL_MAX};
use crate::rng::{child_rng, ChaCha8Rng};

fn flip_layers(
    q: &QuantizedModel,
    spec: &InjectionSpec,
    mut per_level: impl FnMut(i8, f64, &mut ChaCha8Rng) -> i8,
) -> Result<QuantizedModel> {
    let rate = spec.rate.expect("validated fault spec");
    let mut layers: Vec<QuantLayer> = q.quant_layers().to_vec();
    if rate == 0.0 {
        return q.with_layers(layers);
    }
    for pos in spec.eligible_layers(layers.len()) {
        let mut rng = child_rng(spec.inject_seed(), pos as u64);
        for level in &mut layers[pos].levels {
            *level = per_level(*level, rate, &mut rng);
        }
    }
    q.with_layers(layers)
}

/// Flips every bit of the two's-complement level of each eligible weight
/// independently with probability `rate`.
///
/// Complementing `127` yields `-128`, which is a legal fault outcome even though
/// quantization itself never produces it.
pub fn inject_bit_flip(q: &QuantizedModel, spec: &InjectionSpec) -> Result<QuantizedModel> {
    spec.expect_kind(&[InjectionKind::BitFlip])?;
    flip_layers(q, spec, |level, rate, rng| {
        let mut mask = 0u8;
        for bit in 0..8 {
            if rng.random_bool(rate) {
                mask |= 1 << bit;
            }
        }
        (level as u8 ^ mask) as i8
    })
}

/// With probability `rate` per eligible weight, replaces the level by a level
/// drawn uniformly from the other values of `[-127, 127]`.
pub fn inject_level_flip(q: &QuantizedModel, spec: &InjectionSpec) -> Result<QuantizedModel> {
    spec.expect_kind(&[InjectionKind::LevelFlip])?;
    flip_layers(q, spec, |level, rate, rng| {
        if !rng.random_bool(rate) {
            return level;
        }
        if level < -LEVEL_MAX {
            // -128 (left by an earlier bit flip) is outside the lattice; every level differs.
            return rng.random_range(-LEVEL_MAX..=LEVEL_MAX);
        }
        let r = rng.random_range(-LEVEL_MAX..LEVEL_MAX);
        if r >= level {
            r + 1
        } else {
            r
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Model};
    use crate::quant::quantize;
    use crate::tensor::Tensor;

    fn qmodel() -> QuantizedModel {
        let w: Vec<f64> = (0..60).map(|i| ((i * 37 % 101) as f64 - 50.0) / 50.0).collect();
        let m = Model::new(
            "m",
            vec![10],
            3,
            vec![
                Layer::Dense {
                    weight: Tensor::new(vec![3, 10], w[..30].to_vec()).unwrap(),
                    bias: Tensor::zeros(&[3]),
                },
                Layer::Relu,
                Layer::Dense {
                    weight: Tensor::new(vec![3, 3], w[30..39].to_vec()).unwrap(),
                    bias: Tensor::from_vec(vec![0.1, 0.2, 0.3]),
                },
            ],
        )
        .unwrap();
        quantize(&m).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let q = qmodel();
        let out = inject_bit_flip(&q, &InjectionSpec::fault(InjectionKind::BitFlip, 0.0, 5)).unwrap();
        assert_eq!(out, q);
        let out = inject_level_flip(&q, &InjectionSpec::fault(InjectionKind::LevelFlip, 0.0, 5)).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn unit_rate_bit_flip_complements_every_level() {
        let q = qmodel();
        let out = inject_bit_flip(&q, &InjectionSpec::fault(InjectionKind::BitFlip, 1.0, 5)).unwrap();
        for (a, b) in q.quant_layers().iter().zip(out.quant_layers()) {
            for (&x, &y) in a.levels.iter().zip(&b.levels) {
                assert_eq!(y, !x);
            }
        }
    }

    #[test]
    fn unit_rate_level_flip_changes_every_level() {
        let q = qmodel();
        let out = inject_level_flip(&q, &InjectionSpec::fault(InjectionKind::LevelFlip, 1.0, 5)).unwrap();
        for (a, b) in q.quant_layers().iter().zip(out.quant_layers()) {
            for (&x, &y) in a.levels.iter().zip(&b.levels) {
                assert_ne!(x, y);
                assert!((-127..=127).contains(&y));
            }
        }
    }

    #[test]
    fn deterministic_and_pure() {
        let q = qmodel();
        let before = q.clone();
        let spec = InjectionSpec::fault(InjectionKind::BitFlip, 0.2, 99);
        let a = inject_bit_flip(&q, &spec).unwrap();
        let b = inject_bit_flip(&q, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(q, before);
        assert_ne!(a, inject_bit_flip(&q, &spec.clone().with_seed(100)).unwrap());
    }

    #[test]
    fn masked_layers_are_untouched() {
        let q = qmodel();
        let spec = InjectionSpec::fault(InjectionKind::LevelFlip, 1.0, 3).layer_fraction(0.5);
        let eligible = spec.eligible_layers(2);
        assert_eq!(eligible.len(), 1);
        let out = inject_level_flip(&q, &spec).unwrap();
        for pos in 0..2 {
            let same = q.quant_layers()[pos] == out.quant_layers()[pos];
            assert_eq!(same, !eligible.contains(&pos));
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let q = qmodel();
        let spec = InjectionSpec::fault(InjectionKind::LevelFlip, 0.1, 0);
        assert!(inject_bit_flip(&q, &spec).is_err());
    }
}
