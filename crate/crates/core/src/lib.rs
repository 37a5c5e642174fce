//! Small-ball probabilities of random simple tensors, with exact laws, bound
//! evaluators, a reproducible Monte Carlo engine, smoothed Khatri–Rao
//! conditioning and tensor decomposition by simultaneous diagonalization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod decomposition;
pub mod distributions;
pub mod error;
pub mod exact_laws;
pub mod khatri_rao;
pub mod montecarlo;
pub mod rng;
pub mod subspaces;
pub mod tensor;

pub use error::{Error, Result};
