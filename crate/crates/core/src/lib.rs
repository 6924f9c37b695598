//! Cross-modal (colour ↔ infrared) person re-identification trained with an
//! entropy-weighted, multi-level domain-adversarial objective.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tensor`]), a dual-stream part-stripe network ([`model`]), the training
//! losses ([`losses`]), a synthetic two-modality dataset ([`data`]), the
//! alternating min-max trainer ([`trainer`]) and retrieval evaluation
//! ([`eval`]).

pub mod archive;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
