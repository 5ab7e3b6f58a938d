//! Bit-exact emulation of MXInt (shared-exponent block integer) datapaths for
//! Vision Transformers.
//!
//! The crate covers the number format itself ([`mxint`]), integer-only linear
//! algebra ([`linear`]), LUT-based LayerNorm, GELU and Softmax
//! ([`nonlinear`]), a transformer block executor with a double-precision
//! reference path ([`vit`]), and a post-training-quantization design-space
//! harness ([`dse`]).

pub mod archive;
pub mod config;
pub mod dse;
pub mod error;
pub mod linear;
pub mod mxint;
pub mod nonlinear;
pub mod vit;

pub use config::{DatapathConfig, NonlinearConfig, QuantConfig, TensorClass};
pub use error::{Error, ErrorKind, Result};
pub use mxint::{BlockAxis, MxIntBlock, MxIntTensor};
