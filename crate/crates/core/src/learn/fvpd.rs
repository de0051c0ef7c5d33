use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::learn::{check_positive, check_stats, fd_rhs, freq_gram, symmetrize};
use crate::model::{Algorithm, BaseMeasure, ModelMeta, PredictiveForm, Scoring, TgpModel};
use crate::rff::RffBasis;
use crate::scalar::Real;
use crate::solvers::{solve_spd, SolveOptions, SpdSystem};
use crate::suffstats::SuffStats;

/// Exact mean and covariance of `φ(x)` under `x ~ N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MgfMoments<T: Real> {
    pub mu_phi: DVector<T>,
    pub sigma_phi: DMatrix<T>,
}

/// Gaussian variational posterior `q(θ) = N(μ̂, Σ̂)` and the quadratic-form
/// parameters of the resulting predictive density.
#[derive(Debug, Clone)]
pub struct FvpdPosterior<T: Real> {
    pub mu_hat: DVector<T>,
    /// `Σ̂⁻¹`
    pub precision: DMatrix<T>,
    pub mu_phi: DVector<T>,
    pub sigma_phi: DMatrix<T>,
    pub m: DVector<T>,
    pub big_m: DMatrix<T>,
    pub m_inv: DMatrix<T>,
}

impl<T: Real> FvpdPosterior<T> {
    /// `Σ̂`, by inverting the stored precision.
    pub fn covariance(&self) -> Result<DMatrix<T>> {
        let chol = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
        Ok(symmetrize(chol.inverse()))
    }
}

/// `μ_φ(s) = exp(−z_sᵀΣz_s / 2γ²) φ_s(μ)` and
/// `Σ_φ = ½(Δ⁻+Δ⁺) ⊙ φ(μ)φ(μ)ᵀ + ½(Δ⁻−Δ⁺) ⊙ φ'(μ)φ'(μ)ᵀ − μ_φμ_φᵀ`
/// where `Δ±(s,s') = exp(−(z_s ± z_s')ᵀΣ(z_s ± z_s') / 2γ²)`.
pub fn mgf_moments<T: Real>(basis: &RffBasis<T>, base: &BaseMeasure<T>) -> Result<MgfMoments<T>> {
    if basis.dim() != base.dim() {
        return Err(Error::dims("base dimension", basis.dim(), base.dim()));
    }
    let z = basis.freqs();
    let g = basis.gamma();
    let c = -T::one() / (T::of(2.0) * g * g);
    let gs = symmetrize(z * base.cov() * z.transpose());
    let phi = basis.phi(base.mean(), T::zero())?;
    let dphi = basis.phi_prime(base.mean(), T::zero())?;
    let s = basis.n_features();
    let mu_phi = DVector::from_fn(s, |i, _| (c * gs[(i, i)]).exp() * phi[i]);
    let half = T::of(0.5);
    let two = T::of(2.0);
    let sigma_phi = DMatrix::from_fn(s, s, |i, j| {
        let base_q = gs[(i, i)] + gs[(j, j)];
        let dp = (c * (base_q + two * gs[(i, j)]).max(T::zero())).exp();
        let dm = if i == j {
            T::one()
        } else {
            (c * (base_q - two * gs[(i, j)]).max(T::zero())).exp()
        };
        half * (dm + dp) * phi[i] * phi[j] + half * (dm - dp) * dphi[i] * dphi[j] - mu_phi[i] * mu_phi[j]
    });
    Ok(MgfMoments {
        mu_phi,
        sigma_phi: symmetrize(sigma_phi),
    })
}

/// Posterior and predictive parameters at tempering `η`.
pub fn fvpd_posterior<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    eta: T,
    opts: &SolveOptions<T>,
) -> Result<FvpdPosterior<T>> {
    check_positive("lambda", lambda)?;
    check_positive("eta", eta)?;
    check_stats(stats, basis, base)?;
    let level = stats.level(0);
    let outer = match (&level.phi_prime_outer, level.sigma == T::zero()) {
        (Some(o), true) => o.to_full(),
        _ => return Err(Error::ConfigMismatch("statistics lack Φ' at σ = 0".into())),
    };
    let g = basis.gamma();
    let kernel = symmetrize(freq_gram(basis).component_mul(&outer));

    let system = SpdSystem::new(kernel.clone(), fd_rhs(basis, &level.psi_prime, &level.psi), lambda * g * g * eta)?;
    let mu_hat = solve_spd(&system, opts)?;

    let s = basis.n_features();
    let precision = symmetrize(DMatrix::identity(s, s) * lambda + kernel / (g * g * eta));
    let moments = mgf_moments(basis, base)?;
    let m = &moments.mu_phi - &precision * &mu_hat;
    let big_m = symmetrize(&moments.sigma_phi + &precision);
    let m_inv = big_m.clone().cholesky().map(|c| symmetrize(c.inverse())).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "predictive matrix M = Σ_φ + Σ̂⁻¹ is not positive definite at η = {eta}; try a larger η"
        ))
    })?;
    Ok(FvpdPosterior {
        mu_hat,
        precision,
        mu_phi: moments.mu_phi,
        sigma_phi: moments.sigma_phi,
        m,
        big_m,
        m_inv,
    })
}

/// Fisher variational predictive fit; the model stores `M⁻¹` and `m`.
pub fn fit_fvpd<T: Real>(
    stats: &SuffStats<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    eta: T,
    opts: &SolveOptions<T>,
) -> Result<TgpModel<T>> {
    let post = fvpd_posterior(stats, basis, base, lambda, eta, opts)?;
    let meta = ModelMeta {
        algorithm: Algorithm::Fvpd,
        lambda,
        eta: Some(eta),
        sigma_max: None,
        noise_levels: vec![T::zero()],
        n_data: stats.n(),
        centering_offset: None,
    };
    TgpModel::new(
        basis.clone(),
        base.clone(),
        Scoring::Predictive(PredictiveForm {
            m_inv: post.m_inv,
            m: post.m,
        }),
        meta,
    )
}
