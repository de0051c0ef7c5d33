//! The tilted density `q(x) ∝ exp{f(x)} N(x | μ, Σ)` and its derivatives.
//!
//! Two scoring forms exist. The θ-form uses `f(x) = θᵀφ_σ(x)` together with
//! the widened base `N(x | μ, Σ + σ²I)`, and supports any noise level. The
//! predictive form stores `(M⁻¹, m)` and uses
//! `f(x) = ½φ(x)ᵀM⁻¹φ(x) − φ(x)ᵀM⁻¹m`, at `σ = 0` only.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rff::RffBasis;
use crate::scalar::Real;

const ROW_BLOCK: usize = 8192;

/// `Σ_σ = Σ + σ²I` with its factorization.
#[derive(Debug, Clone)]
pub struct SmoothedBase<T: Real> {
    pub noise: T,
    pub cov: DMatrix<T>,
    pub inv: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    pub log_det: T,
}

impl<T: Real> SmoothedBase<T> {
    fn new(cov: DMatrix<T>, noise: T) -> Option<Self> {
        let chol = cov.clone().cholesky()?;
        let inv = chol.inverse();
        let inv = (&inv + inv.transpose()) * T::of(0.5);
        let log_det = chol.l().diagonal().iter().fold(T::zero(), |acc, v| acc + v.ln()) * T::of(2.0);
        Some(Self {
            noise,
            cov,
            inv,
            chol,
            log_det,
        })
    }

    /// Lower Cholesky factor of `Σ_σ`.
    pub fn factor(&self) -> DMatrix<T> {
        self.chol.l()
    }

    /// Log density of `N(x | μ, Σ_σ)` for each row of `x`.
    fn log_density_rows(&self, mu: &DVector<T>, x: &DMatrix<T>) -> DVector<T> {
        let d = mu.len();
        let mut centered = x.transpose();
        for mut col in centered.column_iter_mut() {
            col -= mu;
        }
        self.chol.l_dirty().solve_lower_triangular_mut(&mut centered);
        let c = T::of(d as f64 * (2.0 * std::f64::consts::PI).ln()) + self.log_det;
        DVector::from_iterator(
            x.nrows(),
            centered.column_iter().map(|w| -(c + w.norm_squared()) * T::of(0.5)),
        )
    }
}

/// Gaussian base measure `N(μ, Σ)` with cached factorizations of `Σ + σ²I`
/// for a configured set of noise levels.
#[derive(Debug, Clone)]
pub struct BaseMeasure<T: Real> {
    mu: DVector<T>,
    plain: SmoothedBase<T>,
    levels: Vec<SmoothedBase<T>>,
    jitter: T,
    fingerprint: String,
}

impl<T: Real> BaseMeasure<T> {
    /// Builds the base; if `Σ` does not factor, `1e-8·mean(diag Σ)` is added
    /// to its diagonal once before giving up.
    pub fn new(mu: DVector<T>, sigma: DMatrix<T>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::Config("base mean must be non-empty".into()));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::dims("base covariance", d, sigma.nrows()));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("base parameters are not finite".into()));
        }
        let sigma = (&sigma + sigma.transpose()) * T::of(0.5);
        let (plain, jitter) = match SmoothedBase::new(sigma.clone(), T::zero()) {
            Some(p) => (p, T::zero()),
            None => {
                let jitter = T::of(1e-8) * sigma.trace() / T::of_usize(d);
                let mut bumped = sigma.clone();
                for i in 0..d {
                    bumped[(i, i)] += jitter;
                }
                let p = if jitter > T::zero() {
                    SmoothedBase::new(bumped, T::zero())
                } else {
                    None
                };
                match p {
                    Some(p) => (p, jitter),
                    None => {
                        return Err(Error::DegenerateData(
                            "base covariance is not positive definite even after jitter".into(),
                        ))
                    }
                }
            }
        };
        let fingerprint = base_fingerprint(&mu, &plain.cov);
        Ok(Self {
            mu,
            plain,
            levels: Vec::new(),
            jitter,
            fingerprint,
        })
    }

    /// Precomputes `Σ + σ²I` for each level; lookups are keyed by exact value.
    pub fn with_noise_levels(mut self, levels: &[T]) -> Result<Self> {
        for &s in levels {
            if s < T::zero() || !s.is_finite() {
                return Err(Error::Config(format!("invalid noise level {s}")));
            }
            if s == T::zero() || self.levels.iter().any(|l| l.noise == s) {
                continue;
            }
            self.levels.push(self.compute_level(s)?);
        }
        Ok(self)
    }

    fn compute_level(&self, noise: T) -> Result<SmoothedBase<T>> {
        let mut cov = self.plain.cov.clone();
        let v = noise * noise;
        for i in 0..self.dim() {
            cov[(i, i)] += v;
        }
        SmoothedBase::new(cov, noise)
            .ok_or_else(|| Error::NotPositiveDefinite(format!("Σ + σ²I at σ = {noise}")))
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mu
    }

    /// `Σ` (after any jitter).
    pub fn cov(&self) -> &DMatrix<T> {
        &self.plain.cov
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Hash of `μ` and `Σ`, used to check accumulator compatibility.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Factorized `Σ + σ²I`, cached when `σ` is a configured level.
    pub fn smoothed(&self, noise: T) -> Result<Cow<'_, SmoothedBase<T>>> {
        if noise == T::zero() {
            return Ok(Cow::Borrowed(&self.plain));
        }
        if let Some(l) = self.levels.iter().find(|l| l.noise == noise) {
            return Ok(Cow::Borrowed(l));
        }
        if noise < T::zero() || !noise.is_finite() {
            return Err(Error::Config(format!("invalid noise level {noise}")));
        }
        Ok(Cow::Owned(self.compute_level(noise)?))
    }

    pub fn log_density(&self, x: &DVector<T>, noise: T) -> Result<T> {
        let row = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        Ok(self.log_density_batch(&row, noise)?[0])
    }

    pub fn log_density_batch(&self, x: &DMatrix<T>, noise: T) -> Result<DVector<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::dims("base density input", self.dim(), x.ncols()));
        }
        Ok(self.smoothed(noise)?.log_density_rows(&self.mu, x))
    }
}

fn base_fingerprint<T: Real>(mu: &DVector<T>, sigma: &DMatrix<T>) -> String {
    let mut buf = Vec::new();
    for v in mu.iter().chain(sigma.iter()) {
        v.write_le(&mut buf);
    }
    hex::encode(Sha256::digest(&buf))
}

/// Which learner produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Map,
    Fd,
    Ncfd,
    Fvpd,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Map => "map",
            Algorithm::Fd => "fd",
            Algorithm::Ncfd => "ncfd",
            Algorithm::Fvpd => "fvpd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Algorithm::Map),
            "fd" => Ok(Algorithm::Fd),
            "ncfd" => Ok(Algorithm::Ncfd),
            "fvpd" => Ok(Algorithm::Fvpd),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Quadratic-form parameters of the predictive density: `M⁻¹` and `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveForm<T: Real> {
    pub m_inv: DMatrix<T>,
    pub m: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scoring<T: Real> {
    Theta(DVector<T>),
    Predictive(PredictiveForm<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta<T: Real> {
    pub algorithm: Algorithm,
    pub lambda: T,
    pub eta: Option<T>,
    pub sigma_max: Option<T>,
    /// Noise levels the model was trained over (`[0]` for single-level fits).
    pub noise_levels: Vec<T>,
    pub n_data: usize,
    pub centering_offset: Option<DVector<T>>,
}

/// A fitted tilted density.
#[derive(Debug, Clone)]
pub struct TgpModel<T: Real> {
    basis: RffBasis<T>,
    base: BaseMeasure<T>,
    scoring: Scoring<T>,
    meta: ModelMeta<T>,
}

impl<T: Real> TgpModel<T> {
    pub fn new(basis: RffBasis<T>, base: BaseMeasure<T>, scoring: Scoring<T>, meta: ModelMeta<T>) -> Result<Self> {
        let s = basis.n_features();
        if basis.dim() != base.dim() {
            return Err(Error::dims("model base dimension", basis.dim(), base.dim()));
        }
        match &scoring {
            Scoring::Theta(theta) if theta.len() != s => return Err(Error::dims("theta", s, theta.len())),
            Scoring::Predictive(p) if p.m.len() != s => return Err(Error::dims("predictive m", s, p.m.len())),
            Scoring::Predictive(p) if p.m_inv.nrows() != s || p.m_inv.ncols() != s => {
                return Err(Error::dims("predictive M⁻¹", s, p.m_inv.nrows()))
            }
            _ => {}
        }
        if let Some(off) = &meta.centering_offset {
            if off.len() != basis.dim() {
                return Err(Error::dims("centering offset", basis.dim(), off.len()));
            }
        }
        let base = base.with_noise_levels(&meta.noise_levels)?;
        Ok(Self {
            basis,
            base,
            scoring,
            meta,
        })
    }

    /// Records the offset that was subtracted from the training data.
    pub fn with_centering_offset(mut self, offset: Option<DVector<T>>) -> Result<Self> {
        if let Some(off) = &offset {
            if off.len() != self.dim() {
                return Err(Error::dims("centering offset", self.dim(), off.len()));
            }
        }
        self.meta.centering_offset = offset;
        Ok(self)
    }

    pub fn basis(&self) -> &RffBasis<T> {
        &self.basis
    }

    pub fn base(&self) -> &BaseMeasure<T> {
        &self.base
    }

    pub fn scoring(&self) -> &Scoring<T> {
        &self.scoring
    }

    pub fn meta(&self) -> &ModelMeta<T> {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn theta(&self) -> Option<&DVector<T>> {
        match &self.scoring {
            Scoring::Theta(t) => Some(t),
            Scoring::Predictive(_) => None,
        }
    }

    fn require_theta(&self, what: &str) -> Result<&DVector<T>> {
        self.theta().ok_or_else(|| {
            Error::Unsupported(format!("{what} is not available for predictive-form models"))
        })
    }

    fn check_noise(&self, noise: T) -> Result<()> {
        if noise != T::zero() && matches!(self.scoring, Scoring::Predictive(_)) {
            return Err(Error::Unsupported(
                "predictive-form models are defined at σ = 0 only".into(),
            ));
        }
        Ok(())
    }

    /// Converts a point given in original data coordinates to the model's
    /// (centered) coordinates.
    pub fn to_model_coords(&self, x: &DVector<T>) -> DVector<T> {
        match &self.meta.centering_offset {
            Some(off) => x - off,
            None => x.clone(),
        }
    }

    /// Exponent of the tilt, `log f(x)`, for each row of `x` at noise level
    /// `noise`.
    pub fn log_tilt_batch(&self, x: &DMatrix<T>, noise: T) -> Result<DVector<T>> {
        self.check_noise(noise)?;
        if x.ncols() != self.dim() {
            return Err(Error::dims("model input", self.dim(), x.ncols()));
        }
        let mut out = DVector::zeros(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let len = ROW_BLOCK.min(x.nrows() - start);
            let block = x.rows(start, len).into_owned();
            let phi = self.basis.phi_batch(&block, noise)?;
            match &self.scoring {
                Scoring::Theta(theta) => {
                    out.rows_mut(start, len).copy_from(&(&phi * theta));
                }
                Scoring::Predictive(p) => {
                    let proj = &phi * &p.m_inv;
                    let lin = &proj * &p.m;
                    for i in 0..len {
                        let quad = proj.row(i).dot(&phi.row(i));
                        out[start + i] = quad * T::of(0.5) - lin[i];
                    }
                }
            }
            start += len;
        }
        Ok(out)
    }

    pub fn log_tilt(&self, x: &DVector<T>, noise: T) -> Result<T> {
        Ok(self.log_tilt_batch(&row(x), noise)?[0])
    }

    /// Unnormalized log density: tilt exponent plus `log N(x | μ, Σ_σ)`.
    pub fn log_unnorm_density(&self, x: &DVector<T>, noise: T) -> Result<T> {
        Ok(self.log_unnorm_density_batch(&row(x), noise)?[0])
    }

    pub fn log_unnorm_density_batch(&self, x: &DMatrix<T>, noise: T) -> Result<DVector<T>> {
        let tilt = self.log_tilt_batch(x, noise)?;
        Ok(tilt + self.base.log_density_batch(x, noise)?)
    }

    /// `∇_x log q(x | σ) = (1/γ_σ) Zᵀ(θ ⊙ φ'_σ(x)) − Σ_σ⁻¹(x − μ)`.
    pub fn score(&self, x: &DVector<T>, noise: T) -> Result<DVector<T>> {
        let theta = self.require_theta("score")?;
        let dphi = self.basis.phi_prime(x, noise)?;
        let g = self.basis.gamma_at(noise);
        let sm = self.base.smoothed(noise)?;
        let tilt = self.basis.freqs().tr_mul(&dphi.component_mul(theta)) / g;
        Ok(tilt - &sm.inv * (x - self.base.mean()))
    }

    /// `tr ∇²_x log q(x | σ) = −(1/γ_σ²) Σ_s θ_s φ_σ,s(x) ‖z_s‖² − tr(Σ_σ⁻¹)`.
    pub fn hessian_trace(&self, x: &DVector<T>, noise: T) -> Result<T> {
        let theta = self.require_theta("hessian trace")?;
        let phi = self.basis.phi(x, noise)?;
        let g = self.basis.gamma_at(noise);
        let sm = self.base.smoothed(noise)?;
        let weighted = phi.component_mul(theta).dot(self.basis.sq_norms());
        Ok(-weighted / (g * g) - sm.inv.trace())
    }
}

fn row<T: Real>(x: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_row_slice(1, x.len(), x.as_slice())
}

/// Learner settings. All values must be positive; `noise_levels` is `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams<T: Real> {
    pub gamma: T,
    pub lambda: T,
    pub n_features: usize,
    pub sigma_max: T,
    pub noise_levels: usize,
    pub eta: T,
}

impl<T: Real> Hyperparams<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("gamma", self.gamma)?;
        pos("lambda", self.lambda)?;
        pos("sigma_max", self.sigma_max)?;
        pos("eta", self.eta)?;
        if self.n_features == 0 {
            return Err(Error::Config("S must be at least 1".into()));
        }
        if self.noise_levels == 0 {
            return Err(Error::Config("H must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rule-of-thumb settings from the data:
///
/// - `γ = N^{-1/(d+4)} √(tr V / d)` (Scott's rule)
/// - `σ_max = √(tr V) / d`
/// - `S = 1000`, `λ = 0.1`, `H = 10`, `η = 1/γ²`
pub fn default_hyperparams<T: Real>(data: &Dataset<T>) -> Result<Hyperparams<T>> {
    let n = data.len();
    let d = data.dim();
    if n < 2 {
        return Err(Error::DegenerateData("need at least two rows for default hyperparameters".into()));
    }
    let tr = data.covariance()?.trace();
    if !(tr > T::zero()) {
        return Err(Error::DegenerateData("all coordinates have zero variance".into()));
    }
    Ok(scott_hyperparams(n, d, tr))
}

/// The same rules expressed in terms of `N`, `d` and `tr V`.
pub fn scott_hyperparams<T: Real>(n: usize, d: usize, trace_cov: T) -> Hyperparams<T> {
    let df = T::of_usize(d);
    let gamma = T::of_usize(n).powf(-T::one() / (df + T::of(4.0))) * (trace_cov / df).sqrt();
    Hyperparams {
        gamma,
        lambda: T::of(0.1),
        n_features: 1000,
        sigma_max: trace_cov.sqrt() / df,
        noise_levels: 10,
        eta: T::one() / (gamma * gamma),
    }
}

/// Base measure set to the sample mean and covariance.
pub fn empirical_base<T: Real>(data: &Dataset<T>) -> Result<BaseMeasure<T>> {
    if data.len() < 2 {
        return Err(Error::DegenerateData("need at least two rows for an empirical base".into()));
    }
    let cov = data.covariance()?;
    if cov.iter().all(|v| *v == T::zero()) {
        return Err(Error::DegenerateData("degenerate covariance: all rows are identical".into()));
    }
    BaseMeasure::new(data.mean(), cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iso_base(d: usize) -> BaseMeasure<f64> {
        BaseMeasure::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
    }

    fn meta(alg: Algorithm) -> ModelMeta<f64> {
        ModelMeta {
            algorithm: alg,
            lambda: 0.1,
            eta: None,
            sigma_max: None,
            noise_levels: vec![0.0],
            n_data: 0,
            centering_offset: None,
        }
    }

    fn theta_model(d: usize, s: usize, theta: DVector<f64>, base: BaseMeasure<f64>) -> TgpModel<f64> {
        let basis = RffBasis::sample(d, s, 0.7, None, 3).unwrap();
        TgpModel::new(basis, base, Scoring::Theta(theta), meta(Algorithm::Fd)).unwrap()
    }

    fn gaussian_log_pdf(x: &[f64], var: f64) -> f64 {
        let d = x.len() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI * var).ln() + x.iter().map(|v| v * v).sum::<f64>() / var)
    }

    #[test]
    fn zero_theta_is_base_density() {
        let m = theta_model(2, 8, DVector::zeros(8), iso_base(2));
        let x = DVector::from_vec(vec![0.3, -1.2]);
        assert_relative_eq!(m.log_unnorm_density(&x, 0.0).unwrap(), gaussian_log_pdf(&[0.3, -1.2], 1.0), epsilon = 1e-14);
        assert_relative_eq!(m.log_unnorm_density(&x, 0.5).unwrap(), gaussian_log_pdf(&[0.3, -1.2], 1.25), epsilon = 1e-14);
        let sc = m.score(&x, 0.0).unwrap();
        assert_relative_eq!(sc[0], -0.3, epsilon = 1e-15);
        assert_relative_eq!(sc[1], 1.2, epsilon = 1e-15);
        assert_eq!(m.score(&DVector::zeros(2), 0.0).unwrap(), DVector::zeros(2));
        let m3 = theta_model(3, 4, DVector::zeros(4), iso_base(3));
        assert_relative_eq!(m3.hessian_trace(&DVector::from_vec(vec![1.0, 2.0, 3.0]), 0.0).unwrap(), -3.0);
    }

    #[test]
    fn theta_form_matches_term_loop() {
        let theta = DVector::from_vec(vec![0.8, -1.5]);
        let m = theta_model(1, 2, theta.clone(), iso_base(1));
        let b = m.basis();
        let x = 0.4;
        let tilt: f64 = (0..2)
            .map(|s| theta[s] * (1.0f64).sqrt() * (b.freqs()[(s, 0)] * x / 0.7 + b.phases()[s]).cos())
            .sum();
        let expected = tilt + gaussian_log_pdf(&[x], 1.0);
        assert_relative_eq!(m.log_unnorm_density(&DVector::from_vec(vec![x]), 0.0).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn predictive_zero_inverse_is_base() {
        let basis = RffBasis::sample(2, 6, 0.5, None, 1).unwrap();
        let form = PredictiveForm {
            m_inv: DMatrix::zeros(6, 6),
            m: DVector::from_element(6, 3.0),
        };
        let m = TgpModel::new(basis, iso_base(2), Scoring::Predictive(form), meta(Algorithm::Fvpd)).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.9]);
        assert_relative_eq!(m.log_unnorm_density(&x, 0.0).unwrap(), gaussian_log_pdf(&[0.1, 0.9], 1.0), epsilon = 1e-14);
        assert!(matches!(m.log_unnorm_density(&x, 0.1), Err(Error::Unsupported(_))));
        assert!(matches!(m.score(&x, 0.0), Err(Error::Unsupported(_))));
        assert!(matches!(m.hessian_trace(&x, 0.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn score_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = DVector::from_fn(12, |_, _| StandardNormal.sample(&mut rng));
        let base = BaseMeasure::new(
            DVector::from_vec(vec![0.2, -0.1]),
            DMatrix::from_row_slice(2, 2, &[1.3, 0.4, 0.4, 0.8]),
        )
        .unwrap();
        let m = theta_model(2, 12, theta, base);
        let h = 1e-5;
        for noise in [0.0, 0.4] {
            let x = DVector::from_vec(vec![0.5, -0.7]);
            let sc = m.score(&x, noise).unwrap();
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (m.log_unnorm_density(&xp, noise).unwrap() - m.log_unnorm_density(&xm, noise).unwrap()) / (2.0 * h);
                assert!((fd - sc[j]).abs() <= 1e-5 * sc[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn hessian_trace_linear_in_theta() {
        let theta = DVector::from_vec(vec![0.5, -0.2, 1.0, 0.3]);
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let m1 = theta_model(2, 4, theta.clone(), iso_base(2));
        let m3 = theta_model(2, 4, &theta * 3.0, iso_base(2));
        let part1 = m1.hessian_trace(&x, 0.0).unwrap() + 2.0;
        let part3 = m3.hessian_trace(&x, 0.0).unwrap() + 2.0;
        assert_relative_eq!(part3, 3.0 * part1, epsilon = 1e-13);
    }

    #[test]
    fn smoothed_inverse_accuracy() {
        let base = BaseMeasure::new(
            DVector::zeros(3),
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]),
        )
        .unwrap()
        .with_noise_levels(&[0.0, 0.1, 0.5])
        .unwrap();
        for noise in [0.0, 0.1, 0.5, 0.77] {
            let sm = base.smoothed(noise).unwrap();
            let err = (&sm.cov * &sm.inv - DMatrix::identity(3, 3)).norm() / 3f64.sqrt();
            assert!(err < 1e-10);
        }
        assert!(matches!(base.smoothed(0.1).unwrap(), Cow::Borrowed(_)));
        let e0 = base.smoothed(0.1).unwrap().cov.clone().symmetric_eigenvalues();
        let e1 = base.smoothed(0.5).unwrap().cov.clone().symmetric_eigenvalues();
        let (mut a, mut b) = (e0.as_slice().to_vec(), e1.as_slice().to_vec());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert!(a.iter().zip(&b).all(|(x, y)| y > x));
    }

    #[test]
    fn scott_rule_values() {
        let h: Hyperparams<f64> = scott_hyperparams(10_000, 2, 2.0);
        assert_relative_eq!(h.gamma, 0.215_443_469_003_188_4, epsilon = 1e-12);
        assert_relative_eq!(h.sigma_max, 0.707_106_781_186_547_5, epsilon = 1e-12);
        assert_eq!((h.n_features, h.noise_levels), (1000, 10));
        assert_relative_eq!(h.lambda, 0.1);
        assert_relative_eq!(h.eta, 1.0 / (h.gamma * h.gamma), epsilon = 1e-12);
        let h2 = Hyperparams { gamma: 0.5, ..h };
        assert_relative_eq!(1.0 / (h2.gamma * h2.gamma), 4.0);
    }

    #[test]
    fn empirical_base_behaviour() {
        let d = Dataset::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let b = empirical_base(&d).unwrap();
        assert_eq!(b.mean().as_slice(), &[1.0, 1.0]);

        let rep = Dataset::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(empirical_base(&rep), Err(Error::DegenerateData(_))));
        assert!(matches!(default_hyperparams(&rep), Err(Error::DegenerateData(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..100_000)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let b = empirical_base(&Dataset::from_rows(&rows).unwrap()).unwrap();
        assert!((b.cov() - DMatrix::identity(2, 2)).amax() < 0.05);
    }

    #[test]
    fn jitter_rescues_singular_covariance() {
        // rank-one covariance: factorization fails, jitter makes it PD
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = BaseMeasure::new(DVector::zeros(2), sigma).unwrap();
        assert_relative_eq!(b.jitter(), 1e-8, epsilon = 1e-20);
    }
}
