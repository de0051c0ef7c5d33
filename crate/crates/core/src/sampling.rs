//! Self-normalized importance sampling from the base Gaussian.
//!
//! Draws `x̂_s ~ N(μ, Σ)` are weighted by the model's tilt factor `f(x̂_s)`,
//! giving a discrete approximation `∝ Σ_s f(x̂_s) δ_{x̂_s}` of the fitted
//! density. Weights are kept in log space and rescaled by their maximum.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::TgpModel;
use crate::rff::rng_stream;
use crate::scalar::Real;

/// Default number of base draws for evaluation.
pub const DEFAULT_EVAL_SAMPLES: usize = 250_000;

const DRAW_STREAM: u64 = 3;
const RESAMPLE_STREAM: u64 = 4;
const ROW_BLOCK: usize = 8192;

/// `f(x)`: `exp{θᵀφ(x)}`, or `exp{½φᵀM⁻¹φ − φᵀM⁻¹m}` for predictive-form
/// models. May overflow to `inf` for extreme tilts; use
/// [`TgpModel::log_tilt`] or a [`WeightedSampleSet`] when that matters.
pub fn tilt_factor<T: Real>(model: &TgpModel<T>, x: &DVector<T>) -> Result<T> {
    Ok(model.log_tilt(x, T::zero())?.exp())
}

/// Tilt factors for each row of `x`, rescaled so the largest is 1. Returns
/// the rescaled values and the log of the scale that was removed.
pub fn tilt_factor_batch<T: Real>(model: &TgpModel<T>, x: &DMatrix<T>) -> Result<(DVector<T>, T)> {
    let logs = model.log_tilt_batch(x, T::zero())?;
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("tilt exponent is not finite".into()));
    }
    let max = logs.max();
    Ok((logs.map(|l| (l - max).exp()), max))
}

/// Base draws with their (max-rescaled) tilt weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSampleSet<T: Real> {
    points: DMatrix<T>,
    weights: DVector<T>,
    log_scale: T,
    seed: u64,
}

impl<T: Real> WeightedSampleSet<T> {
    pub fn new(points: DMatrix<T>, weights: DVector<T>, log_scale: T, seed: u64) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(Error::dims("sample weights", points.nrows(), weights.len()));
        }
        if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Numerical("sample weights must be finite and non-negative".into()));
        }
        if !weights.iter().any(|w| *w > T::zero()) {
            return Err(Error::Numerical("all sample weights are zero".into()));
        }
        Ok(Self {
            points,
            weights,
            log_scale,
            seed,
        })
    }

    pub fn points(&self) -> &DMatrix<T> {
        &self.points
    }

    /// Weights divided by `exp(log_scale)`; the largest is 1.
    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn log_scale(&self) -> T {
        self.log_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn normalized_weights(&self) -> DVector<T> {
        &self.weights / self.weights.sum()
    }

    /// Kish effective sample size `(Σw)² / Σw²`.
    pub fn ess(&self) -> T {
        let s = self.weights.sum();
        s * s / self.weights.norm_squared()
    }

    /// Monte-Carlo estimate of `E_base[f]`, the ratio of the model's
    /// normalizer to the base's, returned as `(log estimate, relative standard error)`.
    pub fn log_normalizer_estimate(&self) -> (T, T) {
        let n = T::of_usize(self.len());
        let mean = self.weights.sum() / n;
        let var = self.weights.iter().fold(T::zero(), |a, &w| a + (w - mean) * (w - mean)) / n;
        (mean.ln() + self.log_scale, (var / n).sqrt() / mean)
    }
}

/// `n_s` draws from the model's base with their tilt weights. The points are
/// in the model's own (centered) coordinates.
pub fn draw_weighted<T: Real>(model: &TgpModel<T>, n_s: usize, seed: u64) -> Result<WeightedSampleSet<T>> {
    if n_s == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let base = model.base();
    let d = base.dim();
    let l = base.smoothed(T::zero())?.factor();
    let mut rng = rng_stream(seed, DRAW_STREAM);
    let eps = DMatrix::from_fn(n_s, d, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
    let mut points = eps * l.transpose();
    for mut r in points.row_iter_mut() {
        r += base.mean().transpose();
    }
    let mut logs = DVector::zeros(n_s);
    let mut start = 0;
    while start < n_s {
        let len = ROW_BLOCK.min(n_s - start);
        let block = points.rows(start, len).into_owned();
        logs.rows_mut(start, len).copy_from(&model.log_tilt_batch(&block, T::zero())?);
        start += len;
    }
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("tilt exponent is not finite".into()));
    }
    let max = logs.max();
    WeightedSampleSet::new(points, logs.map(|v| (v - max).exp()), max, seed)
}

/// `k` points drawn with replacement, proportionally to the weights.
pub fn resample<T: Real>(ws: &WeightedSampleSet<T>, k: usize, seed: u64) -> Result<DMatrix<T>> {
    if k == 0 {
        return Err(Error::Config("resample count must be at least 1".into()));
    }
    let index = WeightedIndex::new(ws.weights.iter().map(|w| w.as_f64()))
        .map_err(|e| Error::Numerical(format!("cannot resample: {e}")))?;
    let mut rng = rng_stream(seed, RESAMPLE_STREAM);
    let d = ws.points.ncols();
    let mut out = DMatrix::zeros(k, d);
    for i in 0..k {
        let j = index.sample(&mut rng);
        out.row_mut(i).copy_from(&ws.points.row(j));
    }
    Ok(out)
}

/// `F(α) = Σ_s w_s 1{v·x̂_s ≤ α} / Σ_s w_s` at each grid point.
pub fn weighted_marginal_cdf<T: Real>(ws: &WeightedSampleSet<T>, v: &DVector<T>, grid: &[T]) -> Result<Vec<T>> {
    if v.len() != ws.points.ncols() {
        return Err(Error::dims("projection direction", ws.points.ncols(), v.len()));
    }
    if (v.norm() - T::one()).abs() > T::of(1e-10).max(T::EPS * T::of(16.0)) {
        return Err(Error::Config("projection direction must have unit length".into()));
    }
    let proj: Vec<T> = (&ws.points * v).iter().copied().collect();
    cdf_on_grid(&proj, Some(ws.weights.as_slice()), grid)
}

/// Weighted (or, with `None`, empirical) CDF of `values` at sorted grid points.
pub fn cdf_on_grid<T: Real>(values: &[T], weights: Option<&[T]>, grid: &[T]) -> Result<Vec<T>> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("grid must be sorted ascending".into()));
    }
    if let Some(w) = weights {
        if w.len() != values.len() {
            return Err(Error::dims("cdf weights", values.len(), w.len()));
        }
    }
    let mut pairs: Vec<(T, T)> = match weights {
        Some(w) => values.iter().copied().zip(w.iter().copied()).collect(),
        None => values.iter().map(|&v| (v, T::one())).collect(),
    };
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let total = pairs.iter().fold(T::zero(), |a, p| a + p.1);
    if !(total > T::zero()) {
        return Err(Error::Numerical("total weight is zero".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = T::zero();
    let mut i = 0;
    for &g in grid {
        while i < pairs.len() && pairs[i].0 <= g {
            acc += pairs[i].1;
            i += 1;
        }
        out.push(if i == pairs.len() { T::one() } else { (acc / total).min(T::one()) });
    }
    Ok(out)
}
