//! Differentially private SGD with randomized clipping.
//!
//! Per-sample gradient norms are estimated by sketching the factored gradient `AᵀG`
//! (Hutchinson or Hutch++). The random estimation error is absorbed into the privacy
//! analysis through an envelope distribution for the norm ratio, which feeds a
//! numerical privacy-loss-distribution accountant.

pub mod accountant;
pub mod costmodel;
pub mod envelope;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mixtures;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
