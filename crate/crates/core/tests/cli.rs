use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use tgp::io::model_file::{load_model, save_model};
use tgp::io::text::{ingest, parse_report, write_samples, IngestOptions};
use tgp::model::{Algorithm, BaseMeasure, ModelMeta, Scoring, TgpModel};
use tgp::rff::{rng_stream, RffBasis};

fn tgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgp")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = tgp(args);
    assert!(out.status.success(), "tgp {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_str().unwrap().to_string()
    }
}

/// Banana-shaped 2-D data, shifted away from the origin.
fn write_data(dir: &Dir, n: usize) -> String {
    let mut rng = rng_stream(7, 0);
    let rows = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let rows = DMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            3.0 + rows[(i, 0)]
        } else {
            -1.0 + 0.5 * rows[(i, 1)] + 0.4 * rows[(i, 0)] * rows[(i, 0)]
        }
    });
    let path = dir.path("data.csv");
    write_samples(Path::new(&path), &rows, None, None).unwrap();
    path
}

fn read_grid(path: &str) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn fit_writes_a_model_that_reloads_identically() {
    let dir = Dir::new();
    let data = write_data(&dir, 800);
    ok(&["fit", &data, "-o", &dir.path("m.tgp"), "--S", "64"]);
    let model: TgpModel<f64> = load_model(Path::new(&dir.path("m.tgp"))).unwrap();
    assert_eq!(model.meta().algorithm, Algorithm::Fd);
    assert_eq!(model.meta().n_data, 800);
    let off = model.meta().centering_offset.clone().unwrap();
    assert!((off[0] - 3.0).abs() < 0.2);
    save_model(&model, Path::new(&dir.path("again.tgp"))).unwrap();
    assert_eq!(std::fs::read(dir.path("m.tgp")).unwrap(), std::fs::read(dir.path("again.tgp")).unwrap());
}

#[test]
fn single_level_noise_fit_matches_plain_fit() {
    let dir = Dir::new();
    let data = write_data(&dir, 500);
    ok(&["fit", &data, "-o", &dir.path("fd.tgp"), "--S", "48", "--seed", "2"]);
    ok(&["fit", &data, "-o", &dir.path("nc.tgp"), "-a", "ncfd", "--H", "1", "--S", "48", "--seed", "2"]);
    let fd: TgpModel<f64> = load_model(Path::new(&dir.path("fd.tgp"))).unwrap();
    let nc: TgpModel<f64> = load_model(Path::new(&dir.path("nc.tgp"))).unwrap();
    let gap = (fd.theta().unwrap() - nc.theta().unwrap()).amax();
    assert!(gap <= 1e-10, "{gap}");
}

#[test]
fn nonpositive_lambda_is_rejected_before_writing() {
    let dir = Dir::new();
    let data = write_data(&dir, 100);
    for lambda in ["0", "-1"] {
        let out = tgp(&["fit", &data, "-o", &dir.path("m.tgp"), "--lambda", lambda]);
        assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
        assert!(!Path::new(&dir.path("m.tgp")).exists());
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = Dir::new();
    let out = tgp(&["fit", &dir.path("nope.csv"), "-o", &dir.path("m.tgp")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sampling_is_seeded_and_readable() {
    let dir = Dir::new();
    let data = write_data(&dir, 600);
    ok(&["fit", &data, "-o", &dir.path("m.tgp"), "--S", "64"]);
    let run = |seed: &str, out: &str| {
        ok(&["sample", &dir.path("m.tgp"), "-k", "300", "-o", &dir.path(out), "--seed", seed, "--n-s", "5000"]);
        std::fs::read(dir.path(out)).unwrap()
    };
    let a = run("1", "a.csv");
    assert_eq!(a, run("1", "b.csv"));
    assert_ne!(a, run("2", "c.csv"));
    let opts = IngestOptions {
        center: false,
        ..IngestOptions::default()
    };
    let back = ingest::<f64>(Path::new(&dir.path("a.csv")), &opts).unwrap();
    assert_eq!((back.len(), back.dim()), (300, 2));
    // samples live in data coordinates
    assert!((back.mean()[0] - 3.0).abs() < 0.5);
}

#[test]
fn report_summary_agrees_with_directions() {
    let dir = Dir::new();
    let data = write_data(&dir, 600);
    ok(&["fit", &data, "-o", &dir.path("m.tgp"), "--S", "64"]);
    ok(&[
        "eval", &data, "--model", &dir.path("m.tgp"), "-o", &dir.path("r.txt"), "--directions", "21", "--grid-points", "400",
        "--n-s", "5000",
    ]);
    let report = parse_report(&std::fs::read_to_string(dir.path("r.txt")).unwrap()).unwrap();
    assert_eq!(report.ks.len(), 21);
    let mut ks = report.ks.clone();
    ks.sort_by(f64::total_cmp);
    assert_eq!(report.summary.median_ks, ks[10]);
    assert!(report.summary.median_ks < 0.2);
}

#[test]
fn eval_requires_exactly_one_subject() {
    let dir = Dir::new();
    let data = write_data(&dir, 50);
    assert_eq!(tgp(&["eval", &data, "-o", &dir.path("r.txt")]).status.code(), Some(2));
    let both = tgp(&["eval", &data, "--kde", &data, "--kde-rff", &data, "-o", &dir.path("r.txt")]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn flat_tilt_grid_is_the_base_density() {
    let dir = Dir::new();
    let basis = RffBasis::sample(2, 16, 0.5, None, 0).unwrap();
    let base = BaseMeasure::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5])).unwrap();
    let meta = ModelMeta {
        algorithm: Algorithm::Fd,
        lambda: 0.1,
        eta: None,
        sigma_max: None,
        noise_levels: vec![0.0],
        n_data: 1,
        centering_offset: Some(DVector::from_vec(vec![1.0, 2.0])),
    };
    let model = TgpModel::new(basis, base.clone(), Scoring::Theta(DVector::zeros(16)), meta).unwrap();
    save_model(&model, Path::new(&dir.path("flat.tgp"))).unwrap();
    ok(&["plotdata", &dir.path("flat.tgp"), "-o", &dir.path("g.csv"), "--bounds", "-1,3,0,4", "--resolution", "5,4"]);
    let values = read_grid(&dir.path("g.csv"));
    assert_eq!(values.len(), 20);
    for (r, v) in values.iter().enumerate() {
        let x = DVector::from_vec(vec![-1.0 + (r % 5) as f64 - 1.0, (r / 5) as f64 * 4.0 / 3.0 - 2.0]);
        let want = base.log_density(&x, 0.0).unwrap();
        assert!((v - want).abs() <= 1e-12 * want.abs().max(1.0), "{r}: {v} vs {want}");
    }
}

fn roughness(values: &[f64], nx: usize) -> f64 {
    values.windows(3).enumerate().filter(|(i, _)| i % nx < nx - 2).map(|(_, w)| (w[0] - 2.0 * w[1] + w[2]).abs()).sum()
}

#[test]
fn noisier_levels_plot_smoother() {
    let dir = Dir::new();
    let data = write_data(&dir, 1500);
    ok(&["fit", &data, "-o", &dir.path("m.tgp"), "-a", "ncfd", "--S", "128", "--H", "3", "--sigma-max", "1.0", "--gamma", "0.2"]);
    let model: TgpModel<f64> = load_model(Path::new(&dir.path("m.tgp"))).unwrap();
    let top = model.meta().noise_levels.iter().copied().fold(0.0, f64::max).to_string();
    let grid = |sigma: &str, out: &str| -> Vec<f64> {
        ok(&["plotdata", &dir.path("m.tgp"), "-o", &dir.path(out), "--resolution", "60", "--sigma", sigma]);
        read_grid(&dir.path(out))
    };
    let sharp = roughness(&grid("0", "a.csv"), 60);
    let smooth = roughness(&grid(&top, "b.csv"), 60);
    assert!(smooth < sharp, "{smooth} vs {sharp}");

    let out = tgp(&["plotdata", &dir.path("m.tgp"), "-o", &dir.path("c.csv"), "--sigma", "0.123"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("valid levels"));
}

#[test]
fn plotdata_needs_two_dimensions() {
    let dir = Dir::new();
    let rows = DMatrix::from_fn(200, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
    let path: PathBuf = dir.0.path().join("d3.csv");
    write_samples(&path, &rows, None, None).unwrap();
    ok(&["fit", path.to_str().unwrap(), "-o", &dir.path("m.tgp"), "--S", "16"]);
    let out = tgp(&["plotdata", &dir.path("m.tgp"), "-o", &dir.path("g.csv")]);
    assert_eq!(out.status.code(), Some(2));
}
