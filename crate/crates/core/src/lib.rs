//! Numerical laboratory for couplings of compact groups: p-adic and unitary
//! matrix groups, random walks and spectral gaps, transportation polytopes,
//! approximate homomorphisms and their Lie-algebra projections.

pub mod approx_hom;
pub mod counterexample;
pub mod error;
pub mod groups;
pub mod numerics;
pub mod padic;
pub mod transport;
pub mod walks;

pub use error::{Error, Result};
