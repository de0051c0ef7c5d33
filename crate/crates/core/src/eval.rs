//! Sliced goodness of fit: KS and Wasserstein distances between the data's
//! and a model's one-dimensional marginals along random directions, plus
//! kernel density baselines.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{empirical_base, TgpModel};
use crate::rff::{rng_stream, RffBasis};
use crate::sampling::{cdf_on_grid, draw_weighted, WeightedSampleSet, DEFAULT_EVAL_SAMPLES};
use crate::scalar::Real;
use crate::suffstats::SuffStats;

const DIRECTION_STREAM: u64 = 5;
const MIXTURE_STREAM: u64 = 6;
const QUERY_BLOCK: usize = 1024;
const GRID_PAD: f64 = 0.05;

/// `sup |F − G|` over the grid.
pub fn ks_distance<T: Real>(f: &[T], g: &[T]) -> Result<T> {
    if f.len() != g.len() {
        return Err(Error::dims("cdf grid", f.len(), g.len()));
    }
    Ok(f.iter().zip(g).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
}

/// `∫ |F − G|`, trapezoidal on the grid.
pub fn wasserstein_distance<T: Real>(grid: &[T], f: &[T], g: &[T]) -> Result<T> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::dims("cdf grid", grid.len(), f.len().min(g.len())));
    }
    let half = T::of(0.5);
    let mut total = T::zero();
    for i in 1..grid.len() {
        let a = (f[i - 1] - g[i - 1]).abs();
        let b = (f[i] - g[i]).abs();
        total += (grid[i] - grid[i - 1]) * (a + b) * half;
    }
    Ok(total)
}

/// Gaussian kernel density estimate `(1/N) Σ_i exp(−‖x − x_i‖² / 2γ²)`,
/// unnormalized, evaluated exactly or through random features.
#[derive(Debug, Clone)]
pub struct Kde<T: Real> {
    data: DMatrix<T>,
    sq_norms: DVector<T>,
    gamma: T,
    rff: Option<(RffBasis<T>, DVector<T>)>,
}

/// How [`kde_density`] evaluates the kernel sum.
#[derive(Debug, Clone, Copy)]
pub enum KdeMode<'a, T: Real> {
    Exact,
    Rff(&'a RffBasis<T>),
}

impl<T: Real> Kde<T> {
    pub fn exact(data: &Dataset<T>, gamma: T) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::Config(format!("kernel width must be positive, got {gamma}")));
        }
        let rows = data.rows().clone();
        let sq_norms = DVector::from_fn(rows.nrows(), |i, _| rows.row(i).norm_squared());
        Ok(Self {
            data: rows,
            sq_norms,
            gamma,
            rff: None,
        })
    }

    /// Random-feature variant: the data enter only through the mean feature
    /// vector `(1/N) Σ φ(x_i)`, a single-pass statistic. The basis should be
    /// isotropic for the two modes to approximate the same kernel.
    pub fn rff(data: &Dataset<T>, basis: &RffBasis<T>) -> Result<Self> {
        let base = empirical_base(data)?;
        let mut stats = SuffStats::first_order(basis, &base);
        stats.accumulate(data.rows(), basis, &base)?;
        let mean = &stats.level(0).psi / T::of_usize(data.len());
        let mut kde = Self::exact(data, basis.gamma())?;
        kde.rff = Some((basis.clone(), mean));
        Ok(kde)
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_rff(&self) -> bool {
        self.rff.is_some()
    }

    /// Exact kernel sums for each row of `x`.
    pub fn exact_batch(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        if x.ncols() != self.dim() {
            return Err(Error::dims("kde query", self.dim(), x.ncols()));
        }
        let c = -T::one() / (T::of(2.0) * self.gamma * self.gamma);
        let n = T::of_usize(self.data.nrows());
        let mut out = DVector::zeros(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let len = QUERY_BLOCK.min(x.nrows() - start);
            let q = x.rows(start, len);
            let cross = q * self.data.transpose();
            for i in 0..len {
                let qn = q.row(i).norm_squared();
                let mut acc = T::zero();
                for j in 0..self.data.nrows() {
                    let d2 = (qn + self.sq_norms[j] - T::of(2.0) * cross[(i, j)]).max(T::zero());
                    acc += (c * d2).exp();
                }
                out[start + i] = acc / n;
            }
            start += len;
        }
        Ok(out)
    }

    /// Random-feature sums `φ(x)ᵀ mean φ` before clamping.
    pub fn rff_raw_batch(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        let (basis, mean) = self
            .rff
            .as_ref()
            .ok_or_else(|| Error::Unsupported("this estimate has no random-feature form".into()))?;
        Ok(basis.phi_batch(x, T::zero())? * mean)
    }

    /// Density values for each row of `x` and how many were negative and
    /// clamped to zero (always 0 in exact mode).
    pub fn density_batch(&self, x: &DMatrix<T>) -> Result<(DVector<T>, usize)> {
        if self.rff.is_none() {
            return Ok((self.exact_batch(x)?, 0));
        }
        let raw = self.rff_raw_batch(x)?;
        let clamped = raw.iter().filter(|v| **v < T::zero()).count();
        Ok((raw.map(|v| v.max(T::zero())), clamped))
    }

    pub fn density(&self, x: &DVector<T>) -> Result<T> {
        let row = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        Ok(self.density_batch(&row)?.0[0])
    }

    /// Weighted draws representing the estimate. The exact estimate is the
    /// mixture `(1/N) Σ N(x_i, γ²I)` and is sampled directly (unit weights);
    /// the random-feature estimate is importance-sampled from that mixture
    /// with weights `max(0, φ(x)ᵀ mean φ) / exact(x)`. Also returns the
    /// number of clamped draws.
    pub fn draw_weighted(&self, n_s: usize, seed: u64) -> Result<(WeightedSampleSet<T>, usize)> {
        if n_s == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        let d = self.dim();
        let n = self.data.nrows();
        let mut rng = rng_stream(seed, MIXTURE_STREAM);
        let mut points = DMatrix::zeros(n_s, d);
        for i in 0..n_s {
            let k = rng.random_range(0..n);
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                points[(i, j)] = self.data[(k, j)] + self.gamma * T::of(e);
            }
        }
        if self.rff.is_none() {
            let ws = WeightedSampleSet::new(points, DVector::from_element(n_s, T::one()), T::zero(), seed)?;
            return Ok((ws, 0));
        }
        let raw = self.rff_raw_batch(&points)?;
        let exact = self.exact_batch(&points)?;
        let mut clamped = 0;
        let mut w = DVector::zeros(n_s);
        for i in 0..n_s {
            if raw[i] < T::zero() {
                clamped += 1;
            } else if exact[i] > T::zero() {
                w[i] = raw[i] / exact[i];
            }
        }
        let max = w.max();
        if !(max > T::zero()) {
            return Err(Error::Numerical("random-feature density is non-positive at every draw".into()));
        }
        let ws = WeightedSampleSet::new(points, w / max, max.ln(), seed)?;
        Ok((ws, clamped))
    }
}

/// One-off kernel density value at `x`. Random-feature values below zero
/// are clamped to zero.
pub fn kde_density<T: Real>(data: &Dataset<T>, gamma: T, x: &DVector<T>, mode: KdeMode<'_, T>) -> Result<T> {
    match mode {
        KdeMode::Exact => Kde::exact(data, gamma)?.density(x),
        KdeMode::Rff(basis) => {
            if basis.gamma() != gamma {
                return Err(Error::Config("basis width differs from the requested kernel width".into()));
            }
            Kde::rff(data, basis)?.density(x)
        }
    }
}

/// What is being compared against the data.
#[derive(Debug, Clone, Copy)]
pub enum EvalSubject<'a, T: Real> {
    Model(&'a TgpModel<T>),
    Kde(&'a Kde<T>),
}

impl<T: Real> EvalSubject<'_, T> {
    pub fn label(&self) -> String {
        match self {
            EvalSubject::Model(m) => m.meta().algorithm.tag().to_string(),
            EvalSubject::Kde(k) if k.is_rff() => "kde-rff".into(),
            EvalSubject::Kde(_) => "kde".into(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            EvalSubject::Model(m) => m.dim(),
            EvalSubject::Kde(k) => k.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub n_directions: usize,
    pub grid_points: usize,
    pub n_s: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_directions: 500,
            grid_points: 10_000,
            n_s: DEFAULT_EVAL_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub median_ks: f64,
    pub mean_ks: f64,
    pub median_wd: f64,
    pub mean_wd: f64,
}

impl EvalSummary {
    pub fn from_values(ks: &[f64], wd: &[f64]) -> Self {
        Self {
            median_ks: median(ks),
            mean_ks: mean(ks),
            median_wd: median(wd),
            mean_wd: mean(wd),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub subject: String,
    pub config: EvalConfig,
    pub directions: Vec<Vec<f64>>,
    pub ks: Vec<f64>,
    pub wd: Vec<f64>,
    pub summary: EvalSummary,
    /// Effective sample size of the weighted draws.
    pub ess: f64,
    /// Random-feature density values clamped to zero.
    pub clamped: usize,
    pub warnings: Vec<String>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unit directions from normalized Gaussian draws.
pub fn random_directions(d: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng_stream(seed, DIRECTION_STREAM);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 0.0 {
            out.push(v / n);
        }
    }
    out
}

/// Compares the data's projected empirical CDFs with the subject's weighted
/// marginal CDFs along `n_directions` random directions. One weighted sample
/// set is drawn and shared by all directions; each direction gets a grid
/// spanning the pooled projections padded by 5% per side. `data` must be in
/// the subject's coordinates.
pub fn random_projection_eval<T: Real>(
    subject: EvalSubject<'_, T>,
    data: &Dataset<T>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if config.n_directions == 0 || config.grid_points < 2 || config.n_s == 0 {
        return Err(Error::Config("evaluation needs ≥1 direction, ≥2 grid points and ≥1 sample".into()));
    }
    let d = subject.dim();
    if data.dim() != d {
        return Err(Error::dims("evaluation data", d, data.dim()));
    }
    let (ws, clamped) = match subject {
        EvalSubject::Model(m) => (draw_weighted(m, config.n_s, config.seed)?, 0),
        EvalSubject::Kde(k) => k.draw_weighted(config.n_s, config.seed)?,
    };
    let samples = ws.points().map(|v| v.as_f64());
    let weights: Vec<f64> = ws.weights().iter().map(|w| w.as_f64()).collect();
    let rows = data.rows().map(|v| v.as_f64());
    let directions = random_directions(d, config.n_directions, config.seed);

    let per_dir: Vec<Result<(f64, f64)>> = directions
        .par_iter()
        .map(|v| {
            let dp: Vec<f64> = (&rows * v).iter().copied().collect();
            let sp: Vec<f64> = (&samples * v).iter().copied().collect();
            let (lo, hi) = dp
                .iter()
                .chain(&sp)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let pad = GRID_PAD * (hi - lo).max(f64::EPSILON);
            let (lo, hi) = (lo - pad, hi + pad);
            let m = config.grid_points;
            let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
            let f = cdf_on_grid(&dp, None, &grid)?;
            let g = cdf_on_grid(&sp, Some(&weights), &grid)?;
            Ok((ks_distance(&f, &g)?, wasserstein_distance(&grid, &f, &g)?))
        })
        .collect();
    let mut ks = Vec::with_capacity(per_dir.len());
    let mut wd = Vec::with_capacity(per_dir.len());
    for r in per_dir {
        let (k, w) = r?;
        ks.push(k);
        wd.push(w);
    }

    let ess = ws.ess().as_f64();
    let mut warnings = Vec::new();
    if ess < 100.0 {
        warnings.push(format!("low effective sample size {ess:.1}; marginals are unreliable"));
    }
    if clamped > 0 {
        warnings.push(format!("{clamped} negative random-feature density values clamped to zero"));
    }
    Ok(EvalReport {
        subject: subject.label(),
        config: *config,
        directions: directions.into_iter().map(|v| v.iter().copied().collect()).collect(),
        summary: EvalSummary::from_values(&ks, &wd),
        ks,
        wd,
        ess,
        clamped,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Algorithm, BaseMeasure, ModelMeta, Scoring};
    use proptest::prelude::*;

    fn normal_cdf(x: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        Normal::standard().cdf(x)
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn ks_step_vs_normal() {
        let g = grid(-8.0, 8.0, 20_001);
        let step: Vec<f64> = g.iter().map(|&x| if x >= 0.0 { 1.0 } else { 0.0 }).collect();
        let norm: Vec<f64> = g.iter().map(|&x| normal_cdf(x)).collect();
        let ks = ks_distance(&step, &norm).unwrap();
        assert!((ks - 0.5).abs() < 1e-3);
        assert_eq!(ks, ks_distance(&norm, &step).unwrap());
        assert_eq!(ks_distance(&norm, &norm).unwrap(), 0.0);
    }

    #[test]
    fn wd_translation() {
        let g = grid(-1.0, 2.0, 30_001);
        let a: Vec<f64> = g.iter().map(|&x| if x >= 0.0 { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = g.iter().map(|&x| if x >= 0.5 { 1.0 } else { 0.0 }).collect();
        let w = wasserstein_distance(&g, &a, &b).unwrap();
        assert!((w - 0.5).abs() < 2e-4);
        assert_eq!(wasserstein_distance(&g, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn wd_grid_refinement() {
        let f = |x: f64| normal_cdf(x);
        let g2 = |x: f64| normal_cdf((x - 0.3) / 1.2);
        let coarse = grid(-8.0, 8.0, 1001);
        let fine = grid(-8.0, 8.0, 2001);
        let w = |g: &[f64]| {
            let a: Vec<f64> = g.iter().map(|&x| f(x)).collect();
            let b: Vec<f64> = g.iter().map(|&x| g2(x)).collect();
            wasserstein_distance(g, &a, &b).unwrap()
        };
        let (c, r) = (w(&coarse), w(&fine));
        assert!((c - r).abs() <= 0.01 * r);
    }

    #[test]
    fn kde_basics() {
        let one = Dataset::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let x = DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(kde_density(&one, 0.3, &x, KdeMode::Exact).unwrap(), 1.0);
        let far = DVector::from_vec(vec![0.5 + 3.0 + 1e-9, -1.0]);
        assert!(kde_density(&one, 0.3, &far, KdeMode::Exact).unwrap() <= (-50.0f64).exp());
    }

    #[test]
    fn kde_rff_converges() {
        let data = Dataset::new(DMatrix::from_fn(200, 2, |i, j| ((i * 5 + j * 11) as f64 * 0.37).sin())).unwrap();
        let gamma = 0.5;
        let s = 4000;
        let basis = RffBasis::sample(2, s, gamma, None, 7).unwrap();
        let exact = Kde::exact(&data, gamma).unwrap();
        let approx = Kde::rff(&data, &basis).unwrap();
        let q = DMatrix::from_fn(100, 2, |i, j| ((i * 3 + j) as f64 * 0.91).cos() * 1.2);
        let e = exact.exact_batch(&q).unwrap();
        let a = approx.rff_raw_batch(&q).unwrap();
        let mae = (e - a).abs().mean();
        assert!(mae <= 3.0 / (s as f64).sqrt(), "{mae}");
    }

    fn gaussian_model(d: usize) -> TgpModel<f64> {
        let basis = RffBasis::sample(d, 4, 1.0, None, 1).unwrap();
        let base = BaseMeasure::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
        let meta = ModelMeta {
            algorithm: Algorithm::Fd,
            lambda: 0.1,
            eta: None,
            sigma_max: None,
            noise_levels: vec![0.0],
            n_data: 0,
            centering_offset: None,
        };
        TgpModel::new(basis, base, Scoring::Theta(DVector::zeros(4)), meta).unwrap()
    }

    #[test]
    fn gaussian_self_consistency_and_determinism() {
        let mut rng = rng_stream(99, 0);
        let data = Dataset::new(DMatrix::from_fn(20_000, 2, |_, _| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal))).unwrap();
        let m = gaussian_model(2);
        let cfg = EvalConfig {
            n_directions: 20,
            grid_points: 2000,
            n_s: 50_000,
            seed: 3,
        };
        let r = random_projection_eval(EvalSubject::Model(&m), &data, &cfg).unwrap();
        assert!(r.summary.median_ks <= 0.02, "{}", r.summary.median_ks);
        let again = random_projection_eval(EvalSubject::Model(&m), &data, &cfg).unwrap();
        assert_eq!(r, again);
        assert_eq!(r.summary, EvalSummary::from_values(&r.ks, &r.wd));
        assert!(r.ks.iter().all(|&k| (0.0..=1.0).contains(&k)));
    }

    #[test]
    fn directions_are_unit() {
        for v in random_directions(5, 50, 1) {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ks_triangle(a in proptest::collection::vec(0.0f64..1.0, 20),
                       b in proptest::collection::vec(0.0f64..1.0, 20),
                       c in proptest::collection::vec(0.0f64..1.0, 20)) {
            let sorted = |mut v: Vec<f64>| { v.sort_by(f64::total_cmp); v };
            let (a, b, c) = (sorted(a), sorted(b), sorted(c));
            let ab = ks_distance(&a, &b).unwrap();
            let bc = ks_distance(&b, &c).unwrap();
            let ac = ks_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-15);
            prop_assert!(ab >= 0.0);
        }
    }
}
