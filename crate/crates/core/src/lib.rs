//! Bayesian test vectors for estimating the uncertainty that weight faults and
//! device variations introduce into a quantized neural network.
//!
//! The pipeline: train a reference model ([`nn`]), quantize it to 8-bit
//! levels ([`quant`]), optimize a Gaussian test vector whose samples make the
//! clean model's logits nearly constant ([`btv`]), and flag a deployed model as
//! uncertain when the spread of its logits on that vector exceeds a calibrated
//! threshold ([`estimate`]). [`inject`] simulates faults and variations and
//! [`campaign`] measures how often they are caught.

pub mod btv;
pub mod campaign;
pub mod codec;
pub mod error;
pub mod estimate;
pub mod gradcheck;
pub mod inject;
pub mod nn;
pub mod quant;
pub mod reference;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
