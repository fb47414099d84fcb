//! End-periodic Dirac operators on flat 2-torus models.
//!
//! The crate discretizes twisted Dirac operators by Fourier-Galerkin truncation and
//! provides the machinery around their Fourier-Laplace families: spectral sets,
//! eta invariants, regularized traces on truncated ends and the index bookkeeping
//! that ties them together.

pub mod cli;
pub mod dirac;
pub mod endsim;
pub mod error;
pub mod eta;
pub mod flt;
pub mod fourier;
pub mod geom;
pub mod linalg;
pub mod model;
pub mod quad;
pub mod spectral;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex vector.
pub type CVec = nalgebra::DVector<C64>;
