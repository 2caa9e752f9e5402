//! Seeded injection of weight faults and device variations.
//!
//! Four non-ideality classes are modelled, each behind the [`Injector`] trait
//! and looked up by name in an [`InjectorRegistry`]:
//!
//! | name             | acts on               | parameter      |
//! |------------------|-----------------------|----------------|
//! | `bit_flip`       | two's-complement bits | `rate`         |
//! | `level_flip`     | quantized levels      | `rate`         |
//! | `additive`       | dequantized weights   | `noise_scale`  |
//! | `multiplicative` | dequantized weights   | `noise_scale`  |
//!
//! All injectors are pure: they return a perturbed copy. Layer `L` of a model
//! draws from `child_rng(mix(seed, INJECT), L)`, so the perturbation of a layer
//! depends only on the seed and the layer index. Biases are never perturbed.

mod flip;
mod layers;
mod variation;

pub use flip::{inject_bit_flip, inject_level_flip};
pub use layers::select_layers;
pub use variation::inject_variation;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::quant::QuantizedModel;
use crate::rng::{mix, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    BitFlip,
    LevelFlip,
    Additive,
    Multiplicative,
}

impl InjectionKind {
    pub const ALL: [InjectionKind; 4] = [
        InjectionKind::BitFlip,
        InjectionKind::LevelFlip,
        InjectionKind::Additive,
        InjectionKind::Multiplicative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InjectionKind::BitFlip => "bit_flip",
            InjectionKind::LevelFlip => "level_flip",
            InjectionKind::Additive => "additive",
            InjectionKind::Multiplicative => "multiplicative",
        }
    }

    /// Fault kinds take a flip probability; variation kinds a noise scale.
    pub fn is_fault(self) -> bool {
        matches!(self, InjectionKind::BitFlip | InjectionKind::LevelFlip)
    }
}

impl fmt::Display for InjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InjectionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown injection kind `{s}`")))
    }
}

fn default_fraction() -> f64 {
    1.0
}

/// One perturbation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub kind: InjectionKind,
    /// Flip probability (per bit for `bit_flip`, per weight for `level_flip`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Relative noise strength η0 of the variation kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    /// Fraction of parameterized layers eligible for perturbation.
    #[serde(default = "default_fraction")]
    pub layer_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl InjectionSpec {
    pub fn fault(kind: InjectionKind, rate: f64, seed: u64) -> Self {
        InjectionSpec {
            kind,
            rate: Some(rate),
            noise_scale: None,
            layer_fraction: 1.0,
            seed,
        }
    }

    pub fn variation(kind: InjectionKind, noise_scale: f64, seed: u64) -> Self {
        InjectionSpec {
            kind,
            rate: None,
            noise_scale: Some(noise_scale),
            layer_fraction: 1.0,
            seed,
        }
    }

    /// Builds a spec of `kind` with the one meaningful magnitude set to `value`.
    pub fn with_magnitude(kind: InjectionKind, value: f64, seed: u64) -> Self {
        if kind.is_fault() {
            Self::fault(kind, value, seed)
        } else {
            Self::variation(kind, value, seed)
        }
    }

    pub fn layer_fraction(mut self, fraction: f64) -> Self {
        self.layer_fraction = fraction;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The rate or noise scale, whichever applies to the kind.
    pub fn magnitude(&self) -> f64 {
        if self.kind.is_fault() {
            self.rate.unwrap_or(0.0)
        } else {
            self.noise_scale.unwrap_or(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.layer_fraction > 0.0 && self.layer_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "layer_fraction {} outside (0, 1]",
                self.layer_fraction
            )));
        }
        match (self.kind.is_fault(), self.rate, self.noise_scale) {
            (true, Some(r), None) if (0.0..=1.0).contains(&r) => Ok(()),
            (true, Some(r), None) => Err(Error::Config(format!("rate {r} outside [0, 1]"))),
            (true, _, _) => Err(Error::Config(format!(
                "{} needs `rate` and no `noise_scale`",
                self.kind
            ))),
            (false, None, Some(s)) if s >= 0.0 && s.is_finite() => Ok(()),
            (false, None, Some(s)) => Err(Error::Config(format!("noise_scale {s} must be ≥ 0"))),
            (false, _, _) => Err(Error::Config(format!(
                "{} needs `noise_scale` and no `rate`",
                self.kind
            ))),
        }
    }

    fn expect_kind(&self, allowed: &[InjectionKind]) -> Result<()> {
        self.validate()?;
        if !allowed.contains(&self.kind) {
            return Err(Error::contract(format!(
                "{} spec passed to a {:?} injector",
                self.kind, allowed
            )));
        }
        Ok(())
    }

    /// Parameterized-layer positions (0-based among weight layers) eligible for injection.
    pub fn eligible_layers(&self, param_layer_count: usize) -> Vec<usize> {
        select_layers(
            param_layer_count,
            self.layer_fraction,
            mix(self.seed, stream::LAYERS),
        )
    }

    pub(crate) fn inject_seed(&self) -> u64 {
        mix(self.seed, stream::INJECT)
    }
}

/// One perturbation strategy.
pub trait Injector: Send + Sync {
    fn name(&self) -> &'static str;

    fn kind(&self) -> InjectionKind;

    /// Perturbed copy of `clean`, ready for float inference.
    fn perturb(&self, clean: &QuantizedModel, spec: &InjectionSpec) -> Result<Model>;
}

struct BitFlip;
struct LevelFlip;
struct Variation(InjectionKind);

impl Injector for BitFlip {
    fn name(&self) -> &'static str {
        InjectionKind::BitFlip.name()
    }
    fn kind(&self) -> InjectionKind {
        InjectionKind::BitFlip
    }
    fn perturb(&self, clean: &QuantizedModel, spec: &InjectionSpec) -> Result<Model> {
        Ok(inject_bit_flip(clean, spec)?.dequantize())
    }
}

impl Injector for LevelFlip {
    fn name(&self) -> &'static str {
        InjectionKind::LevelFlip.name()
    }
    fn kind(&self) -> InjectionKind {
        InjectionKind::LevelFlip
    }
    fn perturb(&self, clean: &QuantizedModel, spec: &InjectionSpec) -> Result<Model> {
        Ok(inject_level_flip(clean, spec)?.dequantize())
    }
}

impl Injector for Variation {
    fn name(&self) -> &'static str {
        self.0.name()
    }
    fn kind(&self) -> InjectionKind {
        self.0
    }
    fn perturb(&self, clean: &QuantizedModel, spec: &InjectionSpec) -> Result<Model> {
        inject_variation(clean.as_model(), spec)
    }
}

/// Injectors by name.
pub struct InjectorRegistry {
    entries: BTreeMap<&'static str, Box<dyn Injector>>,
}

impl InjectorRegistry {
    pub fn empty() -> Self {
        InjectorRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// Registry holding the four built-in kinds.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(BitFlip));
        r.register(Box::new(LevelFlip));
        r.register(Box::new(Variation(InjectionKind::Additive)));
        r.register(Box::new(Variation(InjectionKind::Multiplicative)));
        r
    }

    /// Adds or replaces the injector registered under its name.
    pub fn register(&mut self, injector: Box<dyn Injector>) -> Option<Box<dyn Injector>> {
        self.entries.insert(injector.name(), injector)
    }

    pub fn get(&self, name: &str) -> Result<&dyn Injector> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Config(format!("no injector registered as `{name}`")))
    }

    pub fn for_spec(&self, spec: &InjectionSpec) -> Result<&dyn Injector> {
        self.get(spec.kind.name())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

impl Default for InjectorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(InjectionSpec::fault(InjectionKind::BitFlip, 0.1, 0).validate().is_ok());
        assert!(InjectionSpec::fault(InjectionKind::BitFlip, 1.5, 0).validate().is_err());
        assert!(InjectionSpec::variation(InjectionKind::Additive, 0.1, 0).validate().is_ok());
        let mut mixed = InjectionSpec::variation(InjectionKind::Additive, 0.1, 0);
        mixed.rate = Some(0.1);
        assert!(mixed.validate().is_err());
        let swapped = InjectionSpec::variation(InjectionKind::LevelFlip, 0.1, 0);
        assert!(swapped.validate().is_err());
        assert!(InjectionSpec::fault(InjectionKind::LevelFlip, 0.1, 0)
            .layer_fraction(0.0)
            .validate()
            .is_err());
    }

    #[test]
    fn spec_parses_from_config_fields() {
        let spec: InjectionSpec = serde_json::from_str(
            r#"{"kind":"multiplicative","noise_scale":0.2,"layer_fraction":0.3,"seed":9}"#,
        )
        .unwrap();
        assert_eq!(
            spec,
            InjectionSpec::variation(InjectionKind::Multiplicative, 0.2, 9).layer_fraction(0.3)
        );
        assert!(serde_json::from_str::<InjectionSpec>(r#"{"kind":"x","rate":0.1}"#).is_err());
    }

    #[test]
    fn registry_knows_builtin_kinds() {
        let r = InjectorRegistry::builtin();
        let names: Vec<_> = r.names().collect();
        assert_eq!(names, ["additive", "bit_flip", "level_flip", "multiplicative"]);
        for k in InjectionKind::ALL {
            assert_eq!(r.get(k.name()).unwrap().kind(), k);
            assert_eq!(k.name().parse::<InjectionKind>().unwrap(), k);
        }
        assert!(r.get("stuck_at").is_err());
    }
}
