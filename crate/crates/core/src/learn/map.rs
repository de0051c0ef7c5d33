use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learn::check_positive;
use crate::model::{Algorithm, BaseMeasure, ModelMeta, Scoring, TgpModel};
use crate::rff::{rng_stream, RffBasis};
use crate::scalar::{dot, Real};

/// Default size of the fixed Monte-Carlo set `ζ`.
pub const DEFAULT_MAP_SAMPLES: usize = 100_000;

const ZETA_STREAM: u64 = 2;
const ROW_BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions<T: Real> {
    /// Step size `ρ`. `None` picks `1/(N·ν + λ)` with `ν` the top eigenvalue
    /// of the Monte-Carlo second moment of `φ(ζ)`.
    pub step: Option<T>,
    pub iters: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl<T: Real> Default for MapOptions<T> {
    fn default() -> Self {
        Self {
            step: None,
            iters: 10_000,
            mc_samples: DEFAULT_MAP_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDiagnostics<T: Real> {
    pub step: T,
    pub iterations: usize,
    /// `‖ψ₁ − Nψ₂ − λθ‖` at the returned `θ`.
    pub direction_norm: T,
    /// `‖ψ₁‖`
    pub psi1_norm: T,
    /// Effective sample size of the final weights.
    pub ess: T,
    /// `|Σ_j w_j − 1|` of the final weights.
    pub weight_sum_error: T,
}

#[derive(Debug, Clone)]
pub struct MapFit<T: Real> {
    pub model: TgpModel<T>,
    pub diagnostics: MapDiagnostics<T>,
}

/// `φ(ζ_j)` for the fixed draws, stored row-major so each row is contiguous.
struct ZetaFeatures<T: Real> {
    rows: Vec<T>,
    s: usize,
}

impl<T: Real> ZetaFeatures<T> {
    fn build(basis: &RffBasis<T>, base: &BaseMeasure<T>, n: usize, seed: u64) -> Result<Self> {
        let d = basis.dim();
        let s = basis.n_features();
        let l = base.smoothed(T::zero())?.factor();
        let mut rng = rng_stream(seed, ZETA_STREAM);
        let mut rows = Vec::with_capacity(n * s);
        let mut start = 0;
        while start < n {
            let len = ROW_BLOCK.min(n - start);
            let eps = DMatrix::from_fn(len, d, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
            let mut zeta = eps * l.transpose();
            for mut r in zeta.row_iter_mut() {
                r += base.mean().transpose();
            }
            let phi = basis.phi_batch(&zeta, T::zero())?.transpose();
            rows.extend_from_slice(phi.as_slice());
            start += len;
        }
        Ok(Self { rows, s })
    }

    fn len(&self) -> usize {
        self.rows.len() / self.s
    }

    fn row(&self, j: usize) -> &[T] {
        &self.rows[j * self.s..(j + 1) * self.s]
    }

    /// Softmax-weighted mean of the rows under logits `θᵀφ(ζ_j)`, in one
    /// pass with a running maximum.
    fn weighted_mean(&self, theta: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        let mut max = T::of(f64::NEG_INFINITY);
        let mut total = T::zero();
        for j in 0..self.len() {
            let row = self.row(j);
            let l = dot(row, theta);
            if l > max {
                let r = (max - l).exp();
                total *= r;
                out.iter_mut().for_each(|v| *v *= r);
                max = l;
            }
            let w = (l - max).exp();
            total += w;
            for (o, &p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
    }

    fn normalized_weights(&self, theta: &[T]) -> Vec<T> {
        let logits: Vec<T> = (0..self.len()).map(|j| dot(self.row(j), theta)).collect();
        let max = logits.iter().copied().fold(logits[0], |a, b| a.max(b));
        let w: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total = w.iter().fold(T::zero(), |a, &b| a + b);
        w.into_iter().map(|v| v / total).collect()
    }

    /// Top eigenvalue of `(1/n) Σ_j φ(ζ_j)φ(ζ_j)ᵀ` by power iteration.
    fn top_second_moment(&self) -> T {
        let mut v = vec![T::one() / T::of_usize(self.s).sqrt(); self.s];
        let mut lam = T::zero();
        let mut next = vec![T::zero(); self.s];
        for _ in 0..30 {
            next.iter_mut().for_each(|x| *x = T::zero());
            for j in 0..self.len() {
                let row = self.row(j);
                let a = dot(row, &v);
                for (n, &p) in next.iter_mut().zip(row) {
                    *n += a * p;
                }
            }
            let norm = dot(&next, &next).sqrt();
            if norm == T::zero() {
                return T::zero();
            }
            lam = norm / T::of_usize(self.len());
            for (x, &n) in v.iter_mut().zip(&next) {
                *x = n / norm;
            }
        }
        lam
    }
}

/// `Σ_i φ(x_i)`.
fn feature_sum<T: Real>(data: &Dataset<T>, basis: &RffBasis<T>) -> Result<DVector<T>> {
    let mut sum = DVector::zeros(basis.n_features());
    for block in data.batches(ROW_BLOCK) {
        let phi = basis.phi_batch(&block, T::zero())?;
        for (s, col) in phi.column_iter().enumerate() {
            sum[s] += col.sum();
        }
    }
    Ok(sum)
}

/// MAP estimate by Monte-Carlo gradient ascent:
/// `θ ← (1 − ρλ)θ + ρ(ψ₁ − Nψ₂)`, where `ψ₂` is the softmax-weighted mean of
/// `φ(ζ_j)` over one fixed set of draws `ζ_j ~ N(μ, Σ)`. Starts from `θ = 0`.
pub fn fit_map<T: Real>(
    data: &Dataset<T>,
    basis: &RffBasis<T>,
    base: &BaseMeasure<T>,
    lambda: T,
    opts: &MapOptions<T>,
) -> Result<MapFit<T>> {
    check_positive("lambda", lambda)?;
    if opts.iters == 0 || opts.mc_samples == 0 {
        return Err(Error::Config("MAP needs at least one iteration and one Monte-Carlo sample".into()));
    }
    if let Some(r) = opts.step {
        if !(r >= T::zero()) || !r.is_finite() {
            return Err(Error::Config(format!("MAP step must be finite and non-negative, got {r}")));
        }
    }
    if data.dim() != basis.dim() {
        return Err(Error::dims("MAP data", basis.dim(), data.dim()));
    }
    let n = T::of_usize(data.len());
    let psi1 = feature_sum(data, basis)?;
    let zeta = ZetaFeatures::build(basis, base, opts.mc_samples, opts.seed)?;
    let step = match opts.step {
        Some(r) => r,
        None => T::one() / (n * zeta.top_second_moment() + lambda),
    };

    let s = basis.n_features();
    let mut theta = vec![T::zero(); s];
    let mut psi2 = vec![T::zero(); s];
    let shrink = T::one() - step * lambda;
    for _ in 0..opts.iters {
        zeta.weighted_mean(&theta, &mut psi2);
        for k in 0..s {
            theta[k] = shrink * theta[k] + step * (psi1[k] - n * psi2[k]);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("MAP iterates diverged with step {step}")));
        }
    }

    zeta.weighted_mean(&theta, &mut psi2);
    let direction = DVector::from_fn(s, |k, _| psi1[k] - n * psi2[k] - lambda * theta[k]);
    let w = zeta.normalized_weights(&theta);
    let wsum = w.iter().fold(T::zero(), |a, &b| a + b);
    let w2 = w.iter().fold(T::zero(), |a, &b| a + b * b);
    let diagnostics = MapDiagnostics {
        step,
        iterations: opts.iters,
        direction_norm: direction.norm(),
        psi1_norm: psi1.norm(),
        ess: T::one() / w2,
        weight_sum_error: (wsum - T::one()).abs(),
    };
    let meta = ModelMeta {
        algorithm: Algorithm::Map,
        lambda,
        eta: None,
        sigma_max: None,
        noise_levels: vec![T::zero()],
        n_data: data.len(),
        centering_offset: None,
    };
    let model = TgpModel::new(basis.clone(), base.clone(), Scoring::Theta(DVector::from_vec(theta)), meta)?;
    Ok(MapFit { model, diagnostics })
}
