use crate::error::{Error, Result};
use crate::learn::{check_positive, check_stats, fd_rhs, freq_gram, Fitted};
use crate::model::{Algorithm, BaseMeasure, ModelMeta, Scoring, TgpModel};
use crate::rff::RffBasis;
use crate::scalar::Real;
use crate::solvers::{solve_spd_detailed, SolveOptions, SpdSystem};
use crate::suffstats::SuffStats;

/// The Fisher-divergence normal equations
/// `(λγ²I + ZZᵀ ⊙ Φ') θ = γψ' + ‖Z‖² ⊙ ψ`.
pub fn fd_system<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
) -> Result<SpdSystem<T>> {
    check_positive("lambda", lambda)?;
    check_stats(stats, basis, base)?;
    let level = stats.level(0);
    if level.sigma != T::zero() {
        return Err(Error::ConfigMismatch("statistics lack the σ = 0 level".into()));
    }
    let outer = level
        .phi_prime_outer
        .as_ref()
        .ok_or_else(|| Error::ConfigMismatch("statistics lack Φ' (first-order only)".into()))?;
    let matrix = freq_gram(basis).component_mul(&outer.to_full());
    let g = basis.gamma();
    SpdSystem::new(matrix, fd_rhs(basis, &level.psi_prime, &level.psi), lambda * g * g)
}

/// Closed-form Fisher-divergence fit at `σ = 0`.
pub fn fit_fd<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    opts: &SolveOptions<T>,
) -> Result<TgpModel<T>> {
    fit_fd_detailed(stats, basis, base, lambda, opts).map(|f| f.model)
}

pub fn fit_fd_detailed<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    opts: &SolveOptions<T>,
) -> Result<Fitted<TgpModel<T>, T>> {
    let system = fd_system(stats, basis, base, lambda)?;
    let solution = solve_spd_detailed(&system, opts)?;
    let meta = ModelMeta {
        algorithm: Algorithm::Fd,
        lambda,
        eta: None,
        sigma_max: None,
        noise_levels: vec![T::zero()],
        n_data: stats.n(),
        centering_offset: None,
    };
    let model = TgpModel::new(basis.clone(), base.clone(), Scoring::Theta(solution.x.clone()), meta)?;
    Ok(Fitted { model, solution })
}
