//! Nonparametric density estimation with Gaussian-process-tilted densities.
//!
//! A density is modelled as `q(x) ∝ exp{θᵀφ(x)} N(x | μ, Σ)` where `φ` is a
//! random Fourier feature map. The learners here fit `θ` by score matching
//! (plain or noise-conditional), by a Gaussian variational posterior, or by
//! Monte-Carlo MAP. The closed-form learners need only one pass over the
//! data to build mergeable sufficient statistics and then one linear solve.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! `*F64` / `*F32` aliases below name the concrete types.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod learn;
pub mod model;
pub mod rff;
pub mod sampling;
pub mod scalar;
pub mod solvers;
pub mod suffstats;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use model::{Algorithm, BaseMeasure, Hyperparams, TgpModel};
pub use rff::{FrequencyCovariance, RffBasis};
pub use scalar::Real;
pub use suffstats::{NoiseGrid, SuffStats};

pub type DatasetF64 = Dataset<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type RffBasisF64 = RffBasis<f64>;
pub type RffBasisF32 = RffBasis<f32>;
pub type BaseMeasureF64 = BaseMeasure<f64>;
pub type BaseMeasureF32 = BaseMeasure<f32>;
pub type TgpModelF64 = TgpModel<f64>;
pub type TgpModelF32 = TgpModel<f32>;
pub type SuffStatsF64 = SuffStats<f64>;
pub type SuffStatsF32 = SuffStats<f32>;
