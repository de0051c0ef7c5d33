//! Random Fourier features for the Gaussian kernel and their noise-widened
//! variants.
//!
//! A basis holds `S` frequencies `z_s` (rows of `Z`) and phases `c_s`. The
//! feature map at noise level `σ` is
//!
//! ```text
//! φ_σ(x)_s  =  √(2/S) cos(z_sᵀx / γ_σ + c_s)
//! φ'_σ(x)_s = -√(2/S) sin(z_sᵀx / γ_σ + c_s),     γ_σ = √(γ² + σ²)
//! ```
//!
//! The frequencies are shared by every noise level; `γ_σ` is applied by
//! dividing the projection `z_sᵀx` at evaluation time. The second derivative
//! of each feature is `-φ`, so no separate routine exists for it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Name and version of the generator behind every seeded draw in the crate.
pub const RNG_NAME: &str = "chacha20/rand_chacha-0.9";

const FREQ_STREAM: u64 = 0;
const PHASE_STREAM: u64 = 1;

/// Seeded generator on a given stream. Streams split one seed into
/// independent sequences.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Covariance used to draw frequencies, `z ~ N(0, Σ_z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyCovariance<T: Real> {
    matrix: DMatrix<T>,
    factor: DMatrix<T>,
}

impl<T: Real> FrequencyCovariance<T> {
    pub fn new(matrix: DMatrix<T>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Config("frequency covariance must be square and non-empty".into()));
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > T::of(1e-10) * matrix.amax().max(T::one()) {
            return Err(Error::NotPositiveDefinite("frequency covariance is not symmetric".into()));
        }
        let factor = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("frequency covariance".into()))?
            .unpack();
        Ok(Self { matrix, factor })
    }

    /// `d·Σ/tr(Σ)`: the data covariance rescaled to unit average variance.
    pub fn from_covariance(sigma: &DMatrix<T>) -> Result<Self> {
        let d = sigma.nrows();
        let tr = sigma.trace();
        if tr <= T::zero() {
            return Err(Error::DegenerateData("covariance has zero trace".into()));
        }
        Self::new(sigma * (T::of_usize(d) / tr))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Random Fourier feature basis. Immutable once sampled.
#[derive(Debug, Clone)]
pub struct RffBasis<T: Real> {
    freqs: DMatrix<T>,
    freqs_t: DMatrix<T>,
    phases: DVector<T>,
    sq_norms: DVector<T>,
    gamma: T,
    seed: u64,
    sigma_z: Option<FrequencyCovariance<T>>,
    checksum: String,
}

impl<T: Real> RffBasis<T> {
    /// Draws `n_features` frequencies from `N(0, Σ_z)` (identity when
    /// `sigma_z` is `None`) and phases from `[0, 2π)`.
    pub fn sample(
        dim: usize,
        n_features: usize,
        gamma: T,
        sigma_z: Option<&FrequencyCovariance<T>>,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("basis dimension must be at least 1".into()));
        }
        if n_features == 0 {
            return Err(Error::Config("feature count S must be at least 1".into()));
        }
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::Config(format!("kernel width must be positive, got {gamma}")));
        }
        if let Some(cov) = sigma_z {
            if cov.dim() != dim {
                return Err(Error::dims("frequency covariance", dim, cov.dim()));
            }
        }

        let mut rng = rng_stream(seed, FREQ_STREAM);
        let mut eps = DMatrix::<T>::zeros(n_features, dim);
        for s in 0..n_features {
            for j in 0..dim {
                let e: f64 = rng.sample(StandardNormal);
                eps[(s, j)] = T::of(e);
            }
        }
        let freqs = match sigma_z {
            // row z_s = L ε_s, i.e. Z = E Lᵀ
            Some(cov) => &eps * cov.factor.transpose(),
            None => eps,
        };

        let mut rng = rng_stream(seed, PHASE_STREAM);
        let two_pi = T::two_pi();
        let phases = DVector::from_fn(n_features, |_, _| {
            let u: f64 = rng.random::<f64>();
            let p = T::of(u * std::f64::consts::TAU);
            if p >= two_pi {
                T::zero()
            } else {
                p
            }
        });

        Ok(Self::from_parts(freqs, phases, gamma, seed, sigma_z.cloned()))
    }

    fn from_parts(
        freqs: DMatrix<T>,
        phases: DVector<T>,
        gamma: T,
        seed: u64,
        sigma_z: Option<FrequencyCovariance<T>>,
    ) -> Self {
        let sq_norms = DVector::from_fn(freqs.nrows(), |s, _| freqs.row(s).norm_squared());
        let checksum = basis_checksum(&freqs, &phases, gamma);
        let freqs_t = freqs.transpose();
        Self {
            freqs,
            freqs_t,
            phases,
            sq_norms,
            gamma,
            seed,
            sigma_z,
            checksum,
        }
    }

    pub fn dim(&self) -> usize {
        self.freqs.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.freqs.nrows()
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Frequency matrix `Z` (S×d, row `s` is `z_sᵀ`).
    pub fn freqs(&self) -> &DMatrix<T> {
        &self.freqs
    }

    pub fn phases(&self) -> &DVector<T> {
        &self.phases
    }

    /// `(‖z_1‖², …, ‖z_S‖²)`.
    pub fn sq_norms(&self) -> &DVector<T> {
        &self.sq_norms
    }

    pub fn sigma_z(&self) -> Option<&FrequencyCovariance<T>> {
        self.sigma_z.as_ref()
    }

    /// Hex SHA-256 over `Z`, `c` and `γ`.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// `γ_σ = √(γ² + σ²)`; exactly `γ` at `σ = 0`.
    pub fn gamma_at(&self, sigma: T) -> T {
        if sigma == T::zero() {
            self.gamma
        } else {
            (self.gamma * self.gamma + sigma * sigma).sqrt()
        }
    }

    /// `√(2/S)`.
    pub fn scale(&self) -> T {
        (T::of(2.0) / T::of_usize(self.n_features())).sqrt()
    }

    fn check_sigma(sigma: T) -> Result<()> {
        if sigma < T::zero() || !sigma.is_finite() {
            return Err(Error::Config(format!("noise level must be finite and non-negative, got {sigma}")));
        }
        Ok(())
    }

    /// Cosine arguments `z_sᵀx_i / γ_σ + c_s` for every row of `x` (N×d),
    /// returned as N×S.
    pub fn arguments(&self, x: &DMatrix<T>, sigma: T) -> Result<DMatrix<T>> {
        Self::check_sigma(sigma)?;
        if x.ncols() != self.dim() {
            return Err(Error::dims("rff input", self.dim(), x.ncols()));
        }
        let g = self.gamma_at(sigma);
        let mut args = x * &self.freqs_t;
        for (s, mut col) in args.column_iter_mut().enumerate() {
            let c = self.phases[s];
            for a in col.iter_mut() {
                *a = *a / g + c;
            }
        }
        Ok(args)
    }

    /// `φ_σ` for each row of `x`, N×S.
    pub fn phi_batch(&self, x: &DMatrix<T>, sigma: T) -> Result<DMatrix<T>> {
        let k = self.scale();
        Ok(self.arguments(x, sigma)?.map(|a| k * a.cos()))
    }

    /// `φ'_σ` for each row of `x`, N×S.
    pub fn phi_prime_batch(&self, x: &DMatrix<T>, sigma: T) -> Result<DMatrix<T>> {
        let k = self.scale();
        Ok(self.arguments(x, sigma)?.map(|a| -(k * a.sin())))
    }

    /// Both `φ_σ` and `φ'_σ` from a single argument evaluation.
    pub fn features_batch(&self, x: &DMatrix<T>, sigma: T) -> Result<(DMatrix<T>, DMatrix<T>)> {
        let k = self.scale();
        let args = self.arguments(x, sigma)?;
        let mut phi = args.clone();
        let mut dphi = args;
        for (p, d) in phi.iter_mut().zip(dphi.iter_mut()) {
            let (s, c) = p.sin_cos();
            *p = k * c;
            *d = -(k * s);
        }
        Ok((phi, dphi))
    }

    fn row_of(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        if x.len() != self.dim() {
            return Err(Error::dims("rff input", self.dim(), x.len()));
        }
        Ok(DMatrix::from_row_slice(1, x.len(), x.as_slice()))
    }

    pub fn phi(&self, x: &DVector<T>, sigma: T) -> Result<DVector<T>> {
        let m = self.phi_batch(&self.row_of(x)?, sigma)?;
        Ok(m.row(0).transpose())
    }

    pub fn phi_prime(&self, x: &DVector<T>, sigma: T) -> Result<DVector<T>> {
        let m = self.phi_prime_batch(&self.row_of(x)?, sigma)?;
        Ok(m.row(0).transpose())
    }

    /// `φ(x)ᵀφ(x')`, an unbiased Monte-Carlo estimate of the Gaussian kernel
    /// `exp(-(x-x')ᵀΣ_z(x-x') / 2γ²)` (the isotropic kernel when `Σ_z = I`).
    pub fn kernel_estimate(&self, x: &DVector<T>, x2: &DVector<T>) -> Result<T> {
        Ok(self.phi(x, T::zero())?.dot(&self.phi(x2, T::zero())?))
    }
}

/// Rebuilds a basis from its persisted description and verifies the checksum.
pub fn regenerate<T: Real>(
    dim: usize,
    n_features: usize,
    gamma: T,
    sigma_z: Option<&FrequencyCovariance<T>>,
    seed: u64,
    expected_checksum: &str,
) -> Result<RffBasis<T>> {
    let basis = RffBasis::sample(dim, n_features, gamma, sigma_z, seed)?;
    if basis.checksum() != expected_checksum {
        return Err(Error::Format(format!(
            "basis checksum mismatch: stored {expected_checksum}, regenerated {}",
            basis.checksum()
        )));
    }
    Ok(basis)
}

fn basis_checksum<T: Real>(freqs: &DMatrix<T>, phases: &DVector<T>, gamma: T) -> String {
    let mut buf = Vec::with_capacity((freqs.len() + phases.len() + 1) * T::BYTES + 32);
    buf.extend_from_slice(T::DTYPE.as_bytes());
    buf.extend_from_slice(&(freqs.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(freqs.ncols() as u64).to_le_bytes());
    for v in freqs.iter() {
        v.write_le(&mut buf);
    }
    for v in phases.iter() {
        v.write_le(&mut buf);
    }
    gamma.write_le(&mut buf);
    hex::encode(Sha256::digest(&buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn basis(d: usize, s: usize, gamma: f64, seed: u64) -> RffBasis<f64> {
        RffBasis::sample(d, s, gamma, None, seed).unwrap()
    }

    #[test]
    fn same_seed_same_basis() {
        let a = basis(2, 3, 1.0, 7);
        let b = basis(2, 3, 1.0, 7);
        assert_eq!(a.freqs(), b.freqs());
        assert_eq!(a.phases(), b.phases());
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(basis(2, 3, 1.0, 8).checksum(), a.checksum());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(RffBasis::<f64>::sample(2, 0, 1.0, None, 1).is_err());
        assert!(RffBasis::<f64>::sample(2, 4, 0.0, None, 1).is_err());
        assert!(RffBasis::<f64>::sample(0, 4, 1.0, None, 1).is_err());
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(FrequencyCovariance::new(not_spd).is_err());
        let b = basis(2, 4, 1.0, 1);
        assert!(b.phi(&DVector::from_vec(vec![1.0]), 0.0).is_err());
        assert!(b.phi(&DVector::from_vec(vec![1.0, 0.0]), -0.1).is_err());
    }

    #[test]
    fn isotropic_frequency_moments() {
        let s = 100_000;
        let b = basis(2, s, 1.0, 11);
        let z = b.freqs();
        let tol = 3.0 / (s as f64).sqrt();
        for i in 0..2 {
            for j in 0..2 {
                let m: f64 = (0..s).map(|r| z[(r, i)] * z[(r, j)]).sum::<f64>() / s as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((m - target).abs() < tol, "entry ({i},{j}) = {m}");
            }
        }
    }

    #[test]
    fn frequency_covariance_from_data_covariance() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let fc = FrequencyCovariance::from_covariance(&sigma).unwrap();
        assert_relative_eq!(fc.matrix()[(0, 0)], 1.6, epsilon = 1e-15);
        assert_relative_eq!(fc.matrix()[(1, 1)], 0.4, epsilon = 1e-15);
        assert_eq!(fc.matrix()[(0, 1)], 0.0);
        assert_relative_eq!(fc.matrix().trace(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn anisotropic_frequency_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.5]);
        let fc = FrequencyCovariance::new(cov.clone()).unwrap();
        let s = 100_000;
        let b = RffBasis::sample(2, s, 1.0, Some(&fc), 3).unwrap();
        let z = b.freqs();
        let emp = z.transpose() * z / s as f64;
        assert!((emp - cov).amax() < 0.05);
    }

    #[test]
    fn zero_input_zero_phase() {
        let mut b = basis(3, 5, 1.0, 1);
        b = RffBasis::from_parts(b.freqs.clone(), DVector::zeros(5), 1.0, 1, None);
        let x = DVector::zeros(3);
        let phi = b.phi(&x, 0.0).unwrap();
        let dphi = b.phi_prime(&x, 0.0).unwrap();
        for s in 0..5 {
            assert_relative_eq!(phi[s], (2.0f64 / 5.0).sqrt(), epsilon = 1e-15);
            assert_eq!(dphi[s], 0.0);
        }
    }

    #[test]
    fn matches_scalar_loop() {
        let b = basis(1, 4, 1.0, 5);
        let x = DVector::from_vec(vec![0.5]);
        for sigma in [0.0, 0.3] {
            let phi = b.phi(&x, sigma).unwrap();
            let dphi = b.phi_prime(&x, sigma).unwrap();
            let g = (1.0f64 + sigma * sigma).sqrt();
            for s in 0..4 {
                let a = b.freqs()[(s, 0)] * 0.5 / g + b.phases()[s];
                assert_relative_eq!(phi[s], (0.5f64).sqrt() * a.cos(), epsilon = 1e-15);
                assert_relative_eq!(dphi[s], -(0.5f64).sqrt() * a.sin(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_noise_is_plain_map() {
        let b = basis(2, 16, 0.7, 2);
        let x = DVector::from_vec(vec![0.3, -1.1]);
        let phi = b.phi(&x, 0.0).unwrap();
        for s in 0..16 {
            let a = b.freqs().row(s).dot(&x.transpose()) / 0.7 + b.phases()[s];
            assert_relative_eq!(phi[s], (2.0f64 / 16.0).sqrt() * a.cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn directional_finite_difference() {
        let b = basis(3, 32, 0.8, 9);
        let x = DVector::from_vec(vec![0.2, -0.4, 1.0]);
        let u = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let h = 1e-5;
        for sigma in [0.0, 0.5] {
            let g = b.gamma_at(sigma);
            let plus = b.phi(&(&x + &u * h), sigma).unwrap();
            let minus = b.phi(&(&x - &u * h), sigma).unwrap();
            let dphi = b.phi_prime(&x, sigma).unwrap();
            for s in 0..32 {
                let fd = (plus[s] - minus[s]) / (2.0 * h);
                let an = dphi[s] * b.freqs().row(s).dot(&u.transpose()) / g;
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "s={s}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn kernel_at_one_width() {
        let s = 1000;
        let b = basis(2, s, 0.5, 21);
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let x2 = DVector::from_vec(vec![0.1 + 0.3, 0.2 + 0.4]);
        let k = b.kernel_estimate(&x, &x2).unwrap();
        assert!((k - (-0.5f64).exp()).abs() < 3.0 / (s as f64).sqrt());
    }

    #[test]
    fn kernel_self_mean_is_one() {
        let x = DVector::from_vec(vec![0.7, -0.2]);
        let mean: f64 = (0..100)
            .map(|seed| basis(2, 50, 1.0, seed).kernel_estimate(&x, &x).unwrap())
            .sum::<f64>()
            / 100.0;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn single_feature_kernel() {
        let b = basis(2, 1, 1.3, 4);
        let x = DVector::from_vec(vec![0.5, 0.1]);
        let x2 = DVector::from_vec(vec![-0.3, 0.9]);
        let a = b.freqs().row(0).dot(&x.transpose()) / 1.3 + b.phases()[0];
        let c = b.freqs().row(0).dot(&x2.transpose()) / 1.3 + b.phases()[0];
        assert_relative_eq!(b.kernel_estimate(&x, &x2).unwrap(), 2.0 * a.cos() * c.cos(), epsilon = 1e-14);
    }

    #[test]
    fn f32_shares_variates_with_f64() {
        let b64 = basis(2, 8, 1.0, 3);
        let b32 = RffBasis::<f32>::sample(2, 8, 1.0, None, 3).unwrap();
        for (a, b) in b64.freqs().iter().zip(b32.freqs().iter()) {
            assert_eq!(*a as f32, *b);
        }
    }

    proptest! {
        #[test]
        fn phases_half_open(seed in any::<u64>(), s in 1usize..64) {
            let b = basis(2, s, 1.0, seed);
            for &c in b.phases().iter() {
                prop_assert!((0.0..std::f64::consts::TAU).contains(&c));
            }
        }

        #[test]
        fn pythagorean_identity(seed in 0u64..1000, x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, sigma in 0.0f64..2.0) {
            let b = basis(2, 16, 0.6, seed);
            let x = DVector::from_vec(vec![x0, x1]);
            let phi = b.phi(&x, sigma).unwrap();
            let dphi = b.phi_prime(&x, sigma).unwrap();
            for s in 0..16 {
                prop_assert!((phi[s] * phi[s] + dphi[s] * dphi[s] - 2.0 / 16.0).abs() < 1e-14);
            }
        }
    }
}
