//! Single-pass, mergeable sufficient statistics.
//!
//! For each noise level `σ` of the grid the accumulator holds
//!
//! ```text
//! Φ'_σ = Σ_i φ'_σ(x_i) φ'_σ(x_i)ᵀ          Φ_σ = Σ_i φ_σ(x_i) φ_σ(x_i)ᵀ
//! ψ'_σ = Σ_i φ'_σ(x_i) ⊙ ZΣ_σ⁻¹(x_i − μ)    ψ_σ = Σ_i φ_σ(x_i)
//! ```
//!
//! Memory is `O(H·S²)` regardless of `N`. The `S×S` sums are stored as packed
//! upper triangles.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::io::container::{Array, Container};
use crate::model::BaseMeasure;
use crate::rff::RffBasis;
use crate::scalar::Real;

pub const DEFAULT_BATCH_SIZE: usize = 8192;

/// Noise levels `{(h−1)/H · σ_max : h = 1..H}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGrid<T: Real> {
    sigma_max: T,
    levels: Vec<T>,
}

impl<T: Real> NoiseGrid<T> {
    pub fn new(sigma_max: T, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::Config("noise grid needs H ≥ 1".into()));
        }
        if !(sigma_max > T::zero()) || !sigma_max.is_finite() {
            return Err(Error::Config(format!("σ_max must be positive, got {sigma_max}")));
        }
        let hh = T::of_usize(h);
        let levels = (0..h).map(|i| T::of_usize(i) / hh * sigma_max).collect();
        Ok(Self { sigma_max, levels })
    }

    /// The single level `{0}`.
    pub fn zero() -> Self {
        Self {
            sigma_max: T::zero(),
            levels: vec![T::zero()],
        }
    }

    pub fn sigma_max(&self) -> T {
        self.sigma_max
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn is_zero_only(&self) -> bool {
        self.levels.len() == 1 && self.levels[0] == T::zero()
    }
}

/// Symmetric matrix stored as its packed upper triangle (column-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSym<T: Real> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> PackedSym<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * (n + 1) / 2],
        }
    }

    pub fn from_packed(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * (n + 1) / 2 {
            return Err(Error::dims("packed symmetric storage", n * (n + 1) / 2, data.len()));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.data[j * (j + 1) / 2 + i]
    }

    /// Adds the upper triangle of `m`.
    pub fn add_upper(&mut self, m: &DMatrix<T>) {
        let mut k = 0;
        for j in 0..self.n {
            let col = m.column(j);
            for i in 0..=j {
                self.data[k] += col[i];
                k += 1;
            }
        }
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// The full matrix, mirrored from the upper triangle.
    pub fn to_full(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        let mut k = 0;
        for j in 0..self.n {
            for i in 0..=j {
                m[(i, j)] = self.data[k];
                m[(j, i)] = self.data[k];
                k += 1;
            }
        }
        m
    }
}

/// Statistics for one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats<T: Real> {
    pub sigma: T,
    pub phi_prime_outer: Option<PackedSym<T>>,
    pub phi_outer: Option<PackedSym<T>>,
    pub psi_prime: DVector<T>,
    pub psi: DVector<T>,
}

impl<T: Real> LevelStats<T> {
    fn new(sigma: T, s: usize, prime_outer: bool, plain_outer: bool) -> Self {
        Self {
            sigma,
            phi_prime_outer: prime_outer.then(|| PackedSym::zeros(s)),
            phi_outer: plain_outer.then(|| PackedSym::zeros(s)),
            psi_prime: DVector::zeros(s),
            psi: DVector::zeros(s),
        }
    }

    fn add(&mut self, other: &Self) {
        if let (Some(a), Some(b)) = (self.phi_prime_outer.as_mut(), other.phi_prime_outer.as_ref()) {
            a.add(b);
        }
        if let (Some(a), Some(b)) = (self.phi_outer.as_mut(), other.phi_outer.as_ref()) {
            a.add(b);
        }
        self.psi_prime += &other.psi_prime;
        self.psi += &other.psi;
    }

    fn accumulate(&mut self, batch: &DMatrix<T>, basis: &RffBasis<T>, base: &BaseMeasure<T>) -> Result<()> {
        let (phi, dphi) = basis.features_batch(batch, self.sigma)?;
        let sm = base.smoothed(self.sigma)?;
        let mut centered = batch.clone();
        for mut r in centered.row_iter_mut() {
            r -= base.mean().transpose();
        }
        // rows: (Z Σ_σ⁻¹ (x_i − μ))ᵀ
        let proj = centered * &sm.inv * basis.freqs().transpose();
        for s in 0..phi.ncols() {
            self.psi[s] += phi.column(s).sum();
            self.psi_prime[s] += dphi.column(s).dot(&proj.column(s));
        }
        if let Some(acc) = self.phi_prime_outer.as_mut() {
            acc.add_upper(&(dphi.transpose() * &dphi));
        }
        if let Some(acc) = self.phi_outer.as_mut() {
            acc.add_upper(&(phi.transpose() * &phi));
        }
        Ok(())
    }
}

/// Mergeable accumulator over a fixed basis, base measure and noise grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats<T: Real> {
    basis_checksum: String,
    base_fingerprint: String,
    n_features: usize,
    grid: NoiseGrid<T>,
    levels: Vec<LevelStats<T>>,
    n: usize,
    batch_size: usize,
}

impl<T: Real> SuffStats<T> {
    /// Empty accumulator with every statistic the learners need. `Φ_σ` is
    /// skipped when the grid is `{0}`, where no learner reads it.
    pub fn new(basis: &RffBasis<T>, base: &BaseMeasure<T>, grid: NoiseGrid<T>) -> Self {
        let plain = !grid.is_zero_only();
        Self::with_layout(basis, base, grid, true, plain)
    }

    /// Only `ψ` and `ψ'` at `σ = 0`, e.g. for the random-feature KDE.
    pub fn first_order(basis: &RffBasis<T>, base: &BaseMeasure<T>) -> Self {
        Self::with_layout(basis, base, NoiseGrid::zero(), false, false)
    }

    fn with_layout(basis: &RffBasis<T>, base: &BaseMeasure<T>, grid: NoiseGrid<T>, prime: bool, plain: bool) -> Self {
        let s = basis.n_features();
        let levels = grid.levels().iter().map(|&sg| LevelStats::new(sg, s, prime, plain)).collect();
        Self {
            basis_checksum: basis.checksum().to_string(),
            base_fingerprint: base.fingerprint().to_string(),
            n_features: s,
            grid,
            levels,
            n: 0,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn grid(&self) -> &NoiseGrid<T> {
        &self.grid
    }

    pub fn levels(&self) -> &[LevelStats<T>] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &LevelStats<T> {
        &self.levels[i]
    }

    pub fn basis_checksum(&self) -> &str {
        &self.basis_checksum
    }

    /// Fails unless the statistics were configured for this basis and base.
    pub fn check_compatible(&self, basis: &RffBasis<T>, base: &BaseMeasure<T>) -> Result<()> {
        if basis.checksum() != self.basis_checksum {
            return Err(Error::ConfigMismatch("statistics were collected with a different basis".into()));
        }
        if base.fingerprint() != self.base_fingerprint {
            return Err(Error::ConfigMismatch("statistics were collected with a different base measure".into()));
        }
        Ok(())
    }

    fn same_config(&self, other: &Self) -> Result<()> {
        if self.basis_checksum != other.basis_checksum
            || self.base_fingerprint != other.base_fingerprint
            || self.grid != other.grid
        {
            return Err(Error::ConfigMismatch("cannot merge statistics with different configurations".into()));
        }
        let layout = |s: &Self| {
            s.levels
                .first()
                .map(|l| (l.phi_prime_outer.is_some(), l.phi_outer.is_some()))
        };
        if layout(self) != layout(other) {
            return Err(Error::ConfigMismatch("cannot merge statistics with different layouts".into()));
        }
        Ok(())
    }

    /// Adds the rows of `batch`, processed in blocks of the configured batch
    /// size with each block's sums folded into the running totals.
    pub fn accumulate(&mut self, batch: &DMatrix<T>, basis: &RffBasis<T>, base: &BaseMeasure<T>) -> Result<()> {
        self.check_compatible(basis, base)?;
        if batch.nrows() == 0 {
            return Ok(());
        }
        if batch.ncols() != basis.dim() {
            return Err(Error::dims("accumulated batch", basis.dim(), batch.ncols()));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("batch contains non-finite values".into()));
        }
        let mut start = 0;
        while start < batch.nrows() {
            let len = self.batch_size.min(batch.nrows() - start);
            let block = batch.rows(start, len).into_owned();
            self.levels
                .par_iter_mut()
                .try_for_each(|level| level.accumulate(&block, basis, base))?;
            self.n += len;
            start += len;
        }
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Result<Self> {
        self.merge_from(other)?;
        Ok(self)
    }

    pub fn merge_from(&mut self, other: &Self) -> Result<()> {
        self.same_config(other)?;
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            a.add(b);
        }
        self.n += other.n;
        Ok(())
    }

    /// One serial pass over `data`.
    pub fn collect(data: &Dataset<T>, basis: &RffBasis<T>, base: &BaseMeasure<T>, grid: NoiseGrid<T>) -> Result<Self> {
        let mut stats = Self::new(basis, base, grid);
        stats.accumulate(data.rows(), basis, base)?;
        Ok(stats)
    }

    /// Splits `data` into `shards` contiguous blocks, accumulates them
    /// independently in parallel, and merges in shard order.
    pub fn collect_sharded(
        data: &Dataset<T>,
        basis: &RffBasis<T>,
        base: &BaseMeasure<T>,
        grid: NoiseGrid<T>,
        shards: usize,
    ) -> Result<Self> {
        let shards = shards.clamp(1, data.len());
        let n = data.len();
        let bounds: Vec<(usize, usize)> = (0..shards).map(|k| (k * n / shards, (k + 1) * n / shards)).collect();
        let template = Self::new(basis, base, grid);
        let parts: Vec<Self> = bounds
            .par_iter()
            .map(|&(a, b)| {
                let mut st = template.clone();
                st.accumulate(&data.rows().rows(a, b - a).into_owned(), basis, base)?;
                Ok(st)
            })
            .collect::<Result<_>>()?;
        let mut it = parts.into_iter();
        let mut acc = it.next().unwrap_or(template);
        for p in it {
            acc.merge_from(&p)?;
        }
        Ok(acc)
    }

    /// Serializes into the versioned container used for model files.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new("suffstats");
        c.set("basis_checksum", self.basis_checksum.clone());
        c.set("base_fingerprint", self.base_fingerprint.clone());
        c.set("n", self.n as u64);
        c.set("n_features", self.n_features as u64);
        c.set("batch_size", self.batch_size as u64);
        c.set("sigma_max", self.grid.sigma_max.as_f64());
        c.set("noise_levels", self.grid.levels.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        for (h, l) in self.levels.iter().enumerate() {
            if let Some(p) = &l.phi_prime_outer {
                c.push_array(format!("phi_prime_outer.{h}"), Array::from_slice(p.packed(), p.packed().len(), 1));
            }
            if let Some(p) = &l.phi_outer {
                c.push_array(format!("phi_outer.{h}"), Array::from_slice(p.packed(), p.packed().len(), 1));
            }
            c.push_array(format!("psi_prime.{h}"), Array::from_slice(l.psi_prime.as_slice(), l.psi_prime.len(), 1));
            c.push_array(format!("psi.{h}"), Array::from_slice(l.psi.as_slice(), l.psi.len(), 1));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("suffstats")?;
        let s = c.get_u64("n_features")? as usize;
        let levels_f: Vec<f64> = c.get_f64_list("noise_levels")?;
        let grid = NoiseGrid {
            sigma_max: T::of(c.get_f64("sigma_max")?),
            levels: levels_f.iter().map(|&v| T::of(v)).collect(),
        };
        let mut levels = Vec::with_capacity(grid.len());
        for (h, &sigma) in grid.levels.iter().enumerate() {
            let packed = |name: String| -> Result<Option<PackedSym<T>>> {
                match c.array(&name) {
                    Some(a) => Ok(Some(PackedSym::from_packed(s, a.to_vec::<T>()?)?)),
                    None => Ok(None),
                }
            };
            let vector = |name: String| -> Result<DVector<T>> {
                let v = c.require_array(&name)?.to_vec::<T>()?;
                if v.len() != s {
                    return Err(Error::Format(format!("{name} has length {}, expected {s}", v.len())));
                }
                Ok(DVector::from_vec(v))
            };
            levels.push(LevelStats {
                sigma,
                phi_prime_outer: packed(format!("phi_prime_outer.{h}"))?,
                phi_outer: packed(format!("phi_outer.{h}"))?,
                psi_prime: vector(format!("psi_prime.{h}"))?,
                psi: vector(format!("psi.{h}"))?,
            });
        }
        Ok(Self {
            basis_checksum: c.get_str("basis_checksum")?.to_string(),
            base_fingerprint: c.get_str("base_fingerprint")?.to_string(),
            n_features: s,
            grid,
            levels,
            n: c.get_u64("n")? as usize,
            batch_size: c.get_u64("batch_size")? as usize,
        })
    }
}
