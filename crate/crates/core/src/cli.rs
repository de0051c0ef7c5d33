//! Command-line front end: `fit`, `sample`, `eval` and `plotdata`.
//!
//! The binary is a thin wrapper around [`run`]; all numerics are `f64`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{random_projection_eval, EvalConfig, EvalSubject, Kde};
use crate::io::model_file::{load_model, save_model};
use crate::io::text::{format_grid, ingest, write_report, write_samples, IngestOptions};
use crate::learn::{fit_fd_detailed, fit_fvpd, fit_map, fit_ncfd_detailed, MapOptions, DEFAULT_MAP_SAMPLES};
use crate::model::{default_hyperparams, empirical_base, Algorithm, Hyperparams, TgpModel};
use crate::rff::{FrequencyCovariance, RffBasis};
use crate::sampling::{draw_weighted, resample, DEFAULT_EVAL_SAMPLES};
use crate::solvers::{SolveMethod, SolveOptions};
use crate::suffstats::{NoiseGrid, SuffStats};

pub const THREADS_ENV: &str = "TGP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tgp", version, about = "Density estimation with Gaussian-process-tilted densities")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it to a model file.
    Fit(FitArgs),
    /// Draw points from a fitted model.
    Sample(SampleArgs),
    /// Sliced KS / Wasserstein evaluation against held-out data.
    Eval(EvalArgs),
    /// Log-density on a 2-D grid for contour plots.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Field delimiter of the data file.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// First line is a header (auto-detected when neither flag is given).
    #[arg(long, conflicts_with = "no_header")]
    pub header: bool,
    #[arg(long)]
    pub no_header: bool,
    /// Read at most this many data rows.
    #[arg(long)]
    pub max_rows: Option<usize>,
}

impl InputArgs {
    fn options(&self, center: bool) -> IngestOptions {
        IngestOptions {
            delimiter: self.delimiter,
            header: match (self.header, self.no_header) {
                (true, _) => Some(true),
                (_, true) => Some(false),
                _ => None,
            },
            center,
            max_rows: self.max_rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Map,
    Fd,
    Ncfd,
    Fvpd,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Map => Algorithm::Map,
            AlgorithmArg::Fd => Algorithm::Fd,
            AlgorithmArg::Ncfd => Algorithm::Ncfd,
            AlgorithmArg::Fvpd => Algorithm::Fvpd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Auto,
    Direct,
    Cg,
}

/// Overrides for the data-driven defaults.
#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Kernel width (default: Scott's rule).
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Ridge weight (default 0.1).
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Number of random features (default 1000).
    #[arg(long = "S")]
    pub n_features: Option<usize>,
    /// Largest noise level (default √tr V / d).
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_max: Option<f64>,
    /// Number of noise levels (default 10).
    #[arg(long = "H")]
    pub noise_levels: Option<usize>,
    /// Variational tempering (default 1/γ²).
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    /// Spherical frequencies instead of the data-shaped `Σ_z = dΣ/tr Σ`.
    #[arg(long)]
    pub isotropic: bool,
}

impl HyperArgs {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("sigma-max", self.sigma_max),
            ("eta", self.eta),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("--{name} must be positive and finite, got {v}")));
                }
            }
        }
        if self.n_features == Some(0) {
            return Err(Error::Config("--S must be at least 1".into()));
        }
        if self.noise_levels == Some(0) {
            return Err(Error::Config("--H must be at least 1".into()));
        }
        Ok(())
    }

    fn resolve(&self, data: &Dataset<f64>) -> Result<Hyperparams<f64>> {
        let mut hp = default_hyperparams(data)?;
        if let Some(g) = self.gamma {
            hp.gamma = g;
            if self.eta.is_none() {
                hp.eta = 1.0 / (g * g);
            }
        }
        hp.lambda = self.lambda.unwrap_or(hp.lambda);
        hp.n_features = self.n_features.unwrap_or(hp.n_features);
        hp.sigma_max = self.sigma_max.unwrap_or(hp.sigma_max);
        hp.noise_levels = self.noise_levels.unwrap_or(hp.noise_levels);
        hp.eta = self.eta.unwrap_or(hp.eta);
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training data (delimited numeric text).
    pub data: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long, value_enum, default_value_t = AlgorithmArg::Fd)]
    pub algorithm: AlgorithmArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the data in its original coordinates.
    #[arg(long)]
    pub no_center: bool,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    pub solver: SolverArg,
    /// Relative residual target for conjugate gradients.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-8)]
    pub tol: f64,
    /// MAP iterations.
    #[arg(long, default_value_t = 10_000)]
    pub map_iters: usize,
    /// MAP Monte-Carlo set size.
    #[arg(long, default_value_t = DEFAULT_MAP_SAMPLES)]
    pub map_samples: usize,
    /// MAP step size (default chosen from the Monte-Carlo features).
    #[arg(long, allow_negative_numbers = true)]
    pub map_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub model: PathBuf,
    /// Number of points to write.
    #[arg(short = 'k', long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Size of the weighted base sample that is resampled.
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub n_s: usize,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("subject").required(true).args(["model", "kde", "kde_rff"])))]
pub struct EvalArgs {
    /// Held-out data.
    pub data: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Model file to evaluate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluate an exact kernel density estimate built from this training file.
    #[arg(long)]
    pub kde: Option<PathBuf>,
    /// Evaluate a random-feature kernel density estimate built from this training file.
    #[arg(long)]
    pub kde_rff: Option<PathBuf>,
    /// KDE width (default: Scott's rule on the training data).
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Features for the random-feature KDE.
    #[arg(long = "S", default_value_t = 1000)]
    pub n_features: usize,
    #[arg(long)]
    pub isotropic: bool,
    #[arg(long, default_value_t = 500)]
    pub directions: usize,
    #[arg(long, default_value_t = 10_000)]
    pub grid_points: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
    pub n_s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub model: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// `xmin,xmax,ymin,ymax` in data coordinates (default: base mean ± 3 sd).
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',', value_name = "XMIN,XMAX,YMIN,YMAX")]
    pub bounds: Option<Vec<f64>>,
    /// Points per axis, either `n` or `nx,ny`.
    #[arg(long, value_delimiter = ',', num_args = 1..=2, default_value = "100")]
    pub resolution: Vec<usize>,
    /// Noise level; must be one of the model's levels.
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    pub sigma: f64,
}

/// Configures the global thread pool. Must run before any parallel work.
pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot configure threads: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Fit(a) => fit(&a),
        Command::Sample(a) => sample(&a),
        Command::Eval(a) => eval(&a),
        Command::Plotdata(a) => plotdata(&a),
    }
}

fn frequency_cov(base_cov: &DMatrix<f64>, isotropic: bool) -> Result<Option<FrequencyCovariance<f64>>> {
    if isotropic {
        Ok(None)
    } else {
        FrequencyCovariance::from_covariance(base_cov).map(Some)
    }
}

pub fn fit(a: &FitArgs) -> Result<()> {
    a.hyper.check()?;
    if !(a.tol > 0.0) {
        return Err(Error::Config(format!("--tol must be positive, got {}", a.tol)));
    }
    if let Some(r) = a.map_step {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("--map-step must be finite and non-negative, got {r}")));
        }
    }
    let start = Instant::now();
    let data: Dataset<f64> = ingest(&a.data, &a.input.options(!a.no_center))?;
    if data.rejected_rows() > 0 {
        eprintln!("warning: {} malformed rows rejected", data.rejected_rows());
    }
    let hp = a.hyper.resolve(&data)?;
    let base = empirical_base(&data)?;
    let sz = frequency_cov(base.cov(), a.hyper.isotropic)?;
    let basis = RffBasis::sample(data.dim(), hp.n_features, hp.gamma, sz.as_ref(), a.seed)?;
    let opts = SolveOptions {
        method: match a.solver {
            SolverArg::Auto => SolveMethod::Auto,
            SolverArg::Direct => SolveMethod::Direct,
            SolverArg::Cg => SolveMethod::ConjugateGradient,
        },
        tol: a.tol,
        max_iter: None,
    };
    let load_time = start.elapsed();

    let algorithm: Algorithm = a.algorithm.into();
    let t = Instant::now();
    let stats = match algorithm {
        Algorithm::Fd | Algorithm::Fvpd => Some(SuffStats::collect(&data, &basis, &base, NoiseGrid::zero())?),
        Algorithm::Ncfd => Some(SuffStats::collect(&data, &basis, &base, NoiseGrid::new(hp.sigma_max, hp.noise_levels)?)?),
        Algorithm::Map => None,
    };
    let pass_time = t.elapsed();
    let t = Instant::now();
    let mut detail = String::new();
    let model = match (algorithm, &stats) {
        (Algorithm::Fd, Some(s)) => {
            let f = fit_fd_detailed(s, &basis, &base, hp.lambda, &opts)?;
            detail = format!("solver {:?}, relative residual {:.3e}", f.solution.method, f.solution.relative_residual);
            f.model
        }
        (Algorithm::Ncfd, Some(s)) => {
            let f = fit_ncfd_detailed(s, &basis, &base, hp.lambda, &opts)?;
            detail = format!("solver {:?}, relative residual {:.3e}", f.solution.method, f.solution.relative_residual);
            f.model
        }
        (Algorithm::Fvpd, Some(s)) => fit_fvpd(s, &basis, &base, hp.lambda, hp.eta, &opts)?,
        _ => {
            let mo = MapOptions {
                step: a.map_step,
                iters: a.map_iters,
                mc_samples: a.map_samples,
                seed: a.seed,
            };
            let f = fit_map(&data, &basis, &base, hp.lambda, &mo)?;
            let dg = &f.diagnostics;
            detail = format!(
                "step {:.3e}, final direction norm {:.3e} (‖ψ₁‖ = {:.3e}), ESS {:.1}",
                dg.step, dg.direction_norm, dg.psi1_norm, dg.ess
            );
            f.model
        }
    };
    let solve_time = t.elapsed();
    let model = model.with_centering_offset(data.centering_offset().cloned())?;
    save_model(&model, &a.output)?;

    println!(
        "fit {algorithm}: N = {}, d = {}, S = {}, gamma = {:.6}, lambda = {}",
        data.len(),
        data.dim(),
        hp.n_features,
        hp.gamma,
        hp.lambda
    );
    match algorithm {
        Algorithm::Ncfd => println!("noise grid: sigma_max = {:.6}, H = {}", hp.sigma_max, hp.noise_levels),
        Algorithm::Fvpd => println!("eta = {:.6}", hp.eta),
        _ => {}
    }
    if !detail.is_empty() {
        println!("{detail}");
    }
    let pass_label = if algorithm == Algorithm::Map { "features" } else { "pass" };
    println!(
        "timing: load {:.3} s, {pass_label} {:.3} s, solve {:.3} s",
        load_time.as_secs_f64(),
        pass_time.as_secs_f64(),
        solve_time.as_secs_f64()
    );
    println!("wrote {}", a.output.display());
    Ok(())
}

fn restore_coords(model: &TgpModel<f64>, mut points: DMatrix<f64>) -> DMatrix<f64> {
    if let Some(off) = &model.meta().centering_offset {
        for mut r in points.row_iter_mut() {
            r += off.transpose();
        }
    }
    points
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let k = usize::try_from(a.count).map_err(|_| Error::Config("sample count too large".into()))?;
    let model: TgpModel<f64> = load_model(&a.model)?;
    let ws = draw_weighted(&model, a.n_s, a.seed)?;
    let points = restore_coords(&model, resample(&ws, k, a.seed)?);
    write_samples(&a.output, &points, None, None)?;
    println!("wrote {k} samples to {} (ESS {:.1} of {})", a.output.display(), ws.ess(), ws.len());
    Ok(())
}

fn shift(data: Dataset<f64>, offset: Option<&DVector<f64>>) -> Dataset<f64> {
    match offset {
        Some(off) => data.shifted_by(off.clone()),
        None => data,
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let config = EvalConfig {
        n_directions: a.directions,
        grid_points: a.grid_points,
        n_s: a.n_s,
        seed: a.seed,
    };
    if config.n_directions == 0 || config.grid_points < 2 || config.n_s == 0 {
        return Err(Error::Config("need --directions ≥ 1, --grid-points ≥ 2 and --n-s ≥ 1".into()));
    }
    if let Some(g) = a.gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(Error::Config(format!("--gamma must be positive and finite, got {g}")));
        }
    }
    let opts = a.input.options(false);
    let report = if let Some(path) = &a.model {
        let model: TgpModel<f64> = load_model(path)?;
        let data = shift(ingest(&a.data, &opts)?, model.meta().centering_offset.as_ref());
        random_projection_eval(EvalSubject::Model(&model), &data, &config)?
    } else {
        let (train_path, rff) = match (&a.kde, &a.kde_rff) {
            (Some(p), _) => (p, false),
            (_, Some(p)) => (p, true),
            _ => return Err(Error::Config("one of --model, --kde, --kde-rff is required".into())),
        };
        let train: Dataset<f64> = ingest(train_path, &a.input.options(true))?;
        let gamma = match a.gamma {
            Some(g) => g,
            None => default_hyperparams(&train)?.gamma,
        };
        let kde = if rff {
            if a.n_features == 0 {
                return Err(Error::Config("--S must be at least 1".into()));
            }
            let sz = frequency_cov(&train.covariance()?, a.isotropic)?;
            let basis = RffBasis::sample(train.dim(), a.n_features, gamma, sz.as_ref(), a.seed)?;
            Kde::rff(&train, &basis)?
        } else {
            Kde::exact(&train, gamma)?
        };
        let data = shift(ingest(&a.data, &opts)?, train.centering_offset());
        random_projection_eval(EvalSubject::Kde(&kde), &data, &config)?
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_report(&a.output, &report)?;
    let s = &report.summary;
    println!(
        "{}: median KS {:.4}, mean KS {:.4}, median WD {:.4}, mean WD {:.4}",
        report.subject, s.median_ks, s.mean_ks, s.median_wd, s.mean_wd
    );
    println!("wrote {}", a.output.display());
    Ok(())
}

/// Snaps `sigma` to one of the model's noise levels.
pub fn match_noise_level(levels: &[f64], sigma: f64) -> Result<f64> {
    let scale = levels.iter().fold(1.0f64, |a, &l| a.max(l.abs()));
    levels
        .iter()
        .copied()
        .find(|&l| (l - sigma).abs() <= 1e-9 * scale)
        .ok_or_else(|| {
            let valid: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
            Error::Config(format!(
                "sigma = {sigma} is not one of the model's noise levels; valid levels: {}",
                valid.join(", ")
            ))
        })
}

/// Unnormalized log density on an `nx × ny` grid, in data coordinates.
pub fn density_grid(model: &TgpModel<f64>, bounds: [f64; 4], nx: usize, ny: usize, sigma: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if model.dim() != 2 {
        return Err(Error::Config(format!("plot data needs a 2-dimensional model, this one has d = {}", model.dim())));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::Config("resolution must be at least 2 per axis".into()));
    }
    let [x0, x1, y0, y1] = bounds;
    if !(x1 > x0 && y1 > y0) || bounds.iter().any(|b| !b.is_finite()) {
        return Err(Error::Config(format!("bounds must satisfy xmin < xmax and ymin < ymax, got {bounds:?}")));
    }
    let sigma = match_noise_level(&model.meta().noise_levels, sigma)?;
    let axis = |a: f64, b: f64, n: usize| -> Vec<f64> { (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect() };
    let xs = axis(x0, x1, nx);
    let ys = axis(y0, y1, ny);
    let off = model.meta().centering_offset.clone().unwrap_or_else(|| DVector::zeros(2));
    let pts = DMatrix::from_fn(nx * ny, 2, |r, c| if c == 0 { xs[r % nx] - off[0] } else { ys[r / nx] - off[1] });
    let values = model.log_unnorm_density_batch(&pts, sigma)?;
    Ok((xs, ys, values.iter().copied().collect()))
}

pub fn plotdata(a: &PlotArgs) -> Result<()> {
    let model: TgpModel<f64> = load_model(&a.model)?;
    if model.dim() != 2 {
        return Err(Error::Config(format!("plot data needs a 2-dimensional model, this one has d = {}", model.dim())));
    }
    let (nx, ny) = match a.resolution.as_slice() {
        [n] => (*n, *n),
        [x, y] => (*x, *y),
        _ => return Err(Error::Config("resolution takes one or two values".into())),
    };
    let bounds = match a.bounds.as_deref() {
        Some(&[x0, x1, y0, y1]) => [x0, x1, y0, y1],
        Some(b) => return Err(Error::Config(format!("bounds takes 4 values, got {}", b.len()))),
        None => default_bounds(&model),
    };
    let (xs, ys, values) = density_grid(&model, bounds, nx, ny, a.sigma)?;
    write_text(&a.output, &format_grid(&xs, &ys, &values))?;
    println!("wrote {}×{} grid to {}", nx, ny, a.output.display());
    Ok(())
}

fn default_bounds(model: &TgpModel<f64>) -> [f64; 4] {
    let base = model.base();
    let off = model.meta().centering_offset.clone().unwrap_or_else(|| DVector::zeros(2));
    let c = base.mean() + off;
    let sx = 3.0 * base.cov()[(0, 0)].sqrt();
    let sy = 3.0 * base.cov()[(1, 1)].sqrt();
    [c[0] - sx, c[0] + sx, c[1] - sy, c[1] + sy]
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io_at(path))?;
    Ok(())
}
