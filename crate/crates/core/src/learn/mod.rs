//! The four learners and the optional base-measure updates.
//!
//! Every closed-form learner reads only [`SuffStats`](crate::suffstats::SuffStats)
//! and solves one `S×S` SPD system.

mod base_update;
mod fd;
mod fvpd;
mod map;
mod ncfd;

pub use base_update::{coordinate_descent, update_base_mu, update_base_sigma, CoordinateDescent};
pub use fd::{fd_system, fit_fd, fit_fd_detailed};
pub use fvpd::{fit_fvpd, fvpd_posterior, mgf_moments, FvpdPosterior, MgfMoments};
pub use map::{fit_map, MapDiagnostics, MapFit, MapOptions, DEFAULT_MAP_SAMPLES};
pub use ncfd::{fit_ncfd, fit_ncfd_detailed, ncfd_system, noise_expectations, NoiseExpectations, NoiseKernels};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::BaseMeasure;
use crate::rff::RffBasis;
use crate::scalar::Real;
use crate::solvers::Solution;
use crate::suffstats::SuffStats;

/// A fitted model together with how its linear system was solved.
#[derive(Debug, Clone)]
pub struct Fitted<M, T: Real> {
    pub model: M,
    pub solution: Solution<T>,
}

/// `ZZᵀ`, the Gram matrix of the frequencies.
pub(crate) fn freq_gram<T: Real>(basis: &RffBasis<T>) -> DMatrix<T> {
    symmetrize(basis.freqs() * basis.freqs().transpose())
}

pub(crate) fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::of(0.5)
}

pub(crate) fn check_stats<T: Real>(stats: &SuffStats<T>, basis: &RffBasis<T>, base: &BaseMeasure<T>) -> Result<()> {
    stats.check_compatible(basis, base)?;
    if stats.n() == 0 {
        return Err(Error::DegenerateData("sufficient statistics are empty (N = 0)".into()));
    }
    Ok(())
}

pub(crate) fn check_positive<T: Real>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

/// `γψ' + ‖Z‖² ⊙ ψ` at the σ = 0 level.
pub(crate) fn fd_rhs<T: Real>(basis: &RffBasis<T>, psi_prime: &DVector<T>, psi: &DVector<T>) -> DVector<T> {
    psi_prime * basis.gamma() + basis.sq_norms().component_mul(psi)
}
