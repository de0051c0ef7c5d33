use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::learn::{check_positive, check_stats, freq_gram, symmetrize, Fitted};
use crate::model::{Algorithm, BaseMeasure, ModelMeta, Scoring, TgpModel};
use crate::rff::RffBasis;
use crate::scalar::Real;
use crate::solvers::{solve_spd_detailed, SolveOptions, SpdSystem};
use crate::suffstats::SuffStats;

/// Gaussian-noise damping factors at one noise level:
/// `δ(s) = exp(−½(σ/γ_σ)²‖z_s‖²)` and
/// `Δ±(s,s') = exp(−½(σ/γ_σ)²‖z_s ± z_s'‖²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKernels<T: Real> {
    pub sigma: T,
    pub delta: DVector<T>,
    pub delta_plus: DMatrix<T>,
    pub delta_minus: DMatrix<T>,
}

impl<T: Real> NoiseKernels<T> {
    pub fn new(basis: &RffBasis<T>, sigma: T) -> Self {
        Self::from_gram(basis, &freq_gram(basis), sigma)
    }

    /// Same as [`NoiseKernels::new`] with a precomputed `ZZᵀ`.
    pub fn from_gram(basis: &RffBasis<T>, gram: &DMatrix<T>, sigma: T) -> Self {
        let s = basis.n_features();
        let n = basis.sq_norms();
        let r = sigma / basis.gamma_at(sigma);
        let c = -(r * r) * T::of(0.5);
        let two = T::of(2.0);
        let delta = n.map(|v| (c * v).exp());
        let delta_plus = DMatrix::from_fn(s, s, |i, j| (c * (n[i] + n[j] + two * gram[(i, j)]).max(T::zero())).exp());
        let delta_minus = DMatrix::from_fn(s, s, |i, j| {
            if i == j {
                T::one()
            } else {
                (c * (n[i] + n[j] - two * gram[(i, j)]).max(T::zero())).exp()
            }
        });
        Self {
            sigma,
            delta,
            delta_plus,
            delta_minus,
        }
    }
}

/// Closed-form expectations over `y = x + ξ`, `ξ ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseExpectations<T: Real> {
    /// `E[φ_σ(y)]`
    pub e_phi: DVector<T>,
    /// `E[φ'_σ(y)]`
    pub e_phi_prime: DVector<T>,
    /// `E[φ'_σ(y) φ'_σ(y)ᵀ]`
    pub e_outer: DMatrix<T>,
    /// `E[(ZΣ_σ⁻¹ξ) ⊙ φ'_σ(y)]`
    pub e_cross: DVector<T>,
}

pub fn noise_expectations<T: Real>(
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    x: &DVector<T>,
    sigma: T,
) -> Result<NoiseExpectations<T>> {
    let phi = basis.phi(x, sigma)?;
    let dphi = basis.phi_prime(x, sigma)?;
    let k = NoiseKernels::new(basis, sigma);
    let half = T::of(0.5);
    let diff = (&k.delta_minus - &k.delta_plus) * half;
    let sum = (&k.delta_minus + &k.delta_plus) * half;
    let e_outer = diff.component_mul(&(&phi * phi.transpose())) + sum.component_mul(&(&dphi * dphi.transpose()));
    let sm = base.smoothed(sigma)?;
    let g = basis.gamma_at(sigma);
    let zq = quad_rows(basis.freqs(), &sm.inv);
    let e_cross = -(k.delta.component_mul(&zq).component_mul(&phi)) * (sigma * sigma / g);
    Ok(NoiseExpectations {
        e_phi: k.delta.component_mul(&phi),
        e_phi_prime: k.delta.component_mul(&dphi),
        e_outer,
        e_cross,
    })
}

/// `z_sᵀ P z_s` for every row of `z`.
fn quad_rows<T: Real>(z: &DMatrix<T>, p: &DMatrix<T>) -> DVector<T> {
    let zp = z * p;
    DVector::from_fn(z.nrows(), |s, _| zp.row(s).dot(&z.row(s)))
}

/// `I − σ²Σ_σ⁻¹`, verified positive semidefinite.
fn noise_complement<T: Real>(base: &BaseMeasure<T>, sigma: T) -> Result<DMatrix<T>> {
    let d = base.dim();
    let sm = base.smoothed(sigma)?;
    let p = symmetrize(DMatrix::identity(d, d) - &sm.inv * (sigma * sigma));
    let min_eig = p.clone().symmetric_eigenvalues().min();
    if min_eig < -T::of(1e-12) {
        return Err(Error::NotPositiveDefinite(format!(
            "I − σ²Σ_σ⁻¹ at σ = {sigma} has eigenvalue {min_eig}"
        )));
    }
    Ok(p)
}

/// The noise-conditional normal equations `(λH I + ZZᵀ ⊙ A) θ = b`, with
/// `A` and `b` averaged analytically over the noise of every grid level.
pub fn ncfd_system<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
) -> Result<SpdSystem<T>> {
    check_positive("lambda", lambda)?;
    check_stats(stats, basis, base)?;
    let s = basis.n_features();
    let gram = freq_gram(basis);
    let half = T::of(0.5);
    let mut a = DMatrix::zeros(s, s);
    let mut b = DVector::zeros(s);
    for level in stats.levels() {
        let sigma = level.sigma;
        let g = basis.gamma_at(sigma);
        let g2 = g * g;
        let dpo = level
            .phi_prime_outer
            .as_ref()
            .ok_or_else(|| Error::ConfigMismatch("statistics lack Φ'_σ".into()))?
            .to_full();
        let k = NoiseKernels::from_gram(basis, &gram, sigma);
        let coef = half / g2;
        a += (&k.delta_minus + &k.delta_plus).component_mul(&dpo) * coef;
        if sigma > T::zero() {
            let po = level
                .phi_outer
                .as_ref()
                .ok_or_else(|| Error::ConfigMismatch("statistics lack Φ_σ".into()))?
                .to_full();
            a += (&k.delta_minus - &k.delta_plus).component_mul(&po) * coef;
        }
        let q = quad_rows(basis.freqs(), &noise_complement(base, sigma)?);
        b += k.delta.component_mul(&level.psi_prime) / g;
        b += q.component_mul(&k.delta).component_mul(&level.psi) / g2;
    }
    let matrix = symmetrize(gram.component_mul(&a));
    SpdSystem::new(matrix, b, lambda * T::of_usize(stats.levels().len()))
}

/// Closed-form noise-conditional Fisher-divergence fit over the statistics'
/// noise grid. The model keeps the grid so it can be queried at any level.
pub fn fit_ncfd<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    opts: &SolveOptions<T>,
) -> Result<TgpModel<T>> {
    fit_ncfd_detailed(stats, basis, base, lambda, opts).map(|f| f.model)
}

pub fn fit_ncfd_detailed<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    opts: &SolveOptions<T>,
) -> Result<Fitted<TgpModel<T>, T>> {
    let system = ncfd_system(stats, basis, base, lambda)?;
    let solution = solve_spd_detailed(&system, opts)?;
    let grid = stats.grid();
    let meta = ModelMeta {
        algorithm: Algorithm::Ncfd,
        lambda,
        eta: None,
        sigma_max: (grid.sigma_max() > T::zero()).then(|| grid.sigma_max()),
        noise_levels: grid.levels().to_vec(),
        n_data: stats.n(),
        centering_offset: None,
    };
    let model = TgpModel::new(basis.clone(), base.clone(), Scoring::Theta(solution.x.clone()), meta)?;
    Ok(Fitted { model, solution })
}
