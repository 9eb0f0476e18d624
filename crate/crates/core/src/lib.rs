//! Exact maximum-likelihood estimation of detector error model priors and
//! exact maximum-likelihood decoding.
//!
//! Two likelihood backends are provided: a Kac–Ward planar Ising solver for
//! graphlike repetition-code models, and a Walsh–Hadamard factorized tensor
//! network with optimized contraction trees for arbitrary models.

pub mod backend;
pub mod codes;
pub mod contract;
pub mod decode;
pub mod dem;
pub mod error;
pub mod gf2;
pub mod mle;
pub mod oracle;
pub mod planar;
pub mod tnbuild;
pub mod verify;

pub use error::{Error, Result};
