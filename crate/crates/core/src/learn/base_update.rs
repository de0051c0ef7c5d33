use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learn::fit_fd;
use crate::model::{empirical_base, BaseMeasure, TgpModel};
use crate::rff::RffBasis;
use crate::scalar::Real;
use crate::solvers::{solve_lyapunov, LyapunovSolution, SolveOptions};
use crate::suffstats::{NoiseGrid, SuffStats};

const ROW_BLOCK: usize = 8192;

/// Minimizer of the Fisher objective over `μ` for fixed `θ, Σ`:
/// `μ = x̄ − (1/γ) Σ Zᵀ(θ ⊙ mean φ')`.
pub fn update_base_mu<T: Real>(
    data_mean: &DVector<T>,
    mean_phi_prime: &DVector<T>,
    theta: &DVector<T>,
    sigma: &DMatrix<T>,
    basis: &RffBasis<T>,
) -> Result<DVector<T>> {
    let d = basis.dim();
    let s = basis.n_features();
    if data_mean.len() != d {
        return Err(Error::dims("data mean", d, data_mean.len()));
    }
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::dims("base covariance", d, sigma.nrows()));
    }
    if theta.len() != s || mean_phi_prime.len() != s {
        return Err(Error::dims("theta / mean φ'", s, theta.len().min(mean_phi_prime.len())));
    }
    let tilt = basis.freqs().tr_mul(&theta.component_mul(mean_phi_prime));
    Ok(data_mean - sigma * tilt / basis.gamma())
}

/// Minimizer over `Σ` for fixed `θ, μ`: `X = Σ⁻¹` solves
/// `Σ̄X + XΣ̄ = 2I + (ZᵀΥ + ΥᵀZ)/γ` with `Σ̄ = mean (x−μ)(x−μ)ᵀ` and
/// `Υ = mean (θ ⊙ φ'(x))(x−μ)ᵀ`.
pub fn update_base_sigma<T: Real>(
    data: &Dataset<T>,
    mu: &DVector<T>,
    theta: &DVector<T>,
    basis: &RffBasis<T>,
) -> Result<LyapunovSolution<T>> {
    let d = basis.dim();
    let s = basis.n_features();
    if data.dim() != d || mu.len() != d {
        return Err(Error::dims("base update input", d, data.dim()));
    }
    if theta.len() != s {
        return Err(Error::dims("theta", s, theta.len()));
    }
    let mut second = DMatrix::<T>::zeros(d, d);
    let mut upsilon = DMatrix::<T>::zeros(s, d);
    for block in data.batches(ROW_BLOCK) {
        let mut r = block.clone();
        for mut row in r.row_iter_mut() {
            row -= mu.transpose();
        }
        let mut weighted = basis.phi_prime_batch(&block, T::zero())?;
        for (k, mut col) in weighted.column_iter_mut().enumerate() {
            col *= theta[k];
        }
        second += r.tr_mul(&r);
        upsilon += weighted.tr_mul(&r);
    }
    let n = T::of_usize(data.len());
    second /= n;
    upsilon /= n;
    let second = (&second + second.transpose()) * T::of(0.5);
    let zu = basis.freqs().tr_mul(&upsilon);
    let q = DMatrix::identity(d, d) * T::of(2.0) + (&zu + zu.transpose()) / basis.gamma();
    solve_lyapunov(&second, &q)
}

/// Result of alternating `θ`, `μ`, `Σ` updates.
#[derive(Debug, Clone)]
pub struct CoordinateDescent<T: Real> {
    pub model: TgpModel<T>,
    /// Lyapunov residual of each `Σ` update.
    pub residuals: Vec<T>,
}

/// Alternates the Fisher-divergence fit with the closed-form `μ` and `Σ`
/// updates for `iters` rounds (5 is a reasonable default), starting from the
/// empirical base, and refits `θ` for the final base.
pub fn coordinate_descent<T: Real>(
    data: &Dataset<T>,
    basis: &RffBasis<T>,
    lambda: T,
    iters: usize,
    opts: &SolveOptions<T>,
) -> Result<CoordinateDescent<T>> {
    let mut base = empirical_base(data)?;
    let mean = data.mean();
    let mut mean_dphi = DVector::zeros(basis.n_features());
    for block in data.batches(ROW_BLOCK) {
        let dphi = basis.phi_prime_batch(&block, T::zero())?;
        for (k, col) in dphi.column_iter().enumerate() {
            mean_dphi[k] += col.sum();
        }
    }
    mean_dphi /= T::of_usize(data.len());
    let mut residuals = Vec::with_capacity(iters);
    for _ in 0..iters {
        let stats = SuffStats::collect(data, basis, &base, NoiseGrid::zero())?;
        let model = fit_fd(&stats, basis, &base, lambda, opts)?;
        let theta = model.theta().expect("fd models carry θ");
        let mu = update_base_mu(&mean, &mean_dphi, theta, base.cov(), basis)?;
        let sol = update_base_sigma(data, &mu, theta, basis)?;
        residuals.push(sol.relative_residual);
        base = BaseMeasure::new(mu, sol.covariance)?;
    }
    let stats = SuffStats::collect(data, basis, &base, NoiseGrid::zero())?;
    let model = fit_fd(&stats, basis, &base, lambda, opts)?;
    Ok(CoordinateDescent { model, residuals })
}
