//! Score-based diffusion on graph spectra, with the numeric pieces it is
//! built from and a multimodal recovery model on top.
//!
//! The numeric core ([`linalg`], [`sde`], [`nn`]) is generic over [`Real`];
//! the aliases below fix the common precisions. The model, harness and run
//! layers work in `f64`.

pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod sde;

pub use error::{Error, Result};
pub use scalar::Real;

pub type DenseMatrixF64 = linalg::DenseMatrix<f64>;
pub type DenseMatrixF32 = linalg::DenseMatrix<f32>;
pub type SymmetricMatrixF64 = linalg::SymmetricMatrix<f64>;
pub type SymmetricMatrixF32 = linalg::SymmetricMatrix<f32>;
pub type SpectralDecompositionF64 = linalg::SpectralDecomposition<f64>;
pub type SpectralDecompositionF32 = linalg::SpectralDecomposition<f32>;
pub type DiffusionScheduleF64 = sde::DiffusionSchedule<f64>;
pub type DiffusionScheduleF32 = sde::DiffusionSchedule<f32>;
pub type ScoreNetF64 = nn::ScoreNet<f64>;
pub type ScoreNetF32 = nn::ScoreNet<f32>;
