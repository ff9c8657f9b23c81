//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use whpa_bel::bel::{condition, fit_posterior_terms};
use whpa_bel::flow::{solve_steady_flow, BoundaryHeads, FlowParams, FlowSolution};
use whpa_bel::geometry::{signed_distance, BinaryImage, SubgridSpec};
use whpa_bel::prior::{GridSpec, HydraulicField};
use whpa_bel::raster::{Point, Raster};
use whpa_bel::transport::{track_tracer, Capture, TracerSource, TransportParams};

/// `ln erfc(z)` for `z >= 0`, Numerical Recipes `erfcc` (|rel err| < 1.2e-7).
pub fn ln_erfc(z: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.5 * z);
    t.ln() - z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418 + t * (-0.18628806 + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))))
}

pub fn erfc(x: f64) -> f64 {
    let r = ln_erfc(x.abs()).exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

/// Asymptotic one-sample Kolmogorov-Smirnov critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// ---- MHD ----

pub fn brute_force_mhd(a: &[Point], b: &[Point]) -> f64 {
    let directed = |p: &[Point], q: &[Point]| {
        let mut acc = 0.0;
        for x in p {
            let mut best = f64::INFINITY;
            for y in q {
                let d = ((x.x - y.x).powi(2) + (x.y - y.y).powi(2)).sqrt();
                if d < best {
                    best = d;
                }
            }
            acc += best;
        }
        acc / p.len() as f64
    };
    directed(a, b).max(directed(b, a))
}

pub fn random_points(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))).collect()
}

// ---- TSP ----

/// Shortest closed tour by enumerating every permutation with vertex 0 fixed.
pub fn brute_force_tsp(points: &[Point]) -> f64 {
    let n = points.len();
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best = f64::INFINITY;
    fn permute(k: usize, rest: &mut Vec<usize>, points: &[Point], best: &mut f64) {
        if k == rest.len() {
            let mut len = points[0].dist(points[rest[0]]);
            for w in rest.windows(2) {
                len += points[w[0]].dist(points[w[1]]);
            }
            len += points[*rest.last().unwrap()].dist(points[0]);
            if len < *best {
                *best = len;
            }
            return;
        }
        for i in k..rest.len() {
            rest.swap(k, i);
            permute(k + 1, rest, points, best);
            rest.swap(k, i);
        }
    }
    permute(0, &mut rest, points, &mut best);
    best
}

pub fn polygon_length(poly: &[Point]) -> f64 {
    (0..poly.len()).map(|i| poly[i].dist(poly[(i + 1) % poly.len()])).sum()
}

// ---- fast marching ----

/// Binary image of a disk: a cell is inside when its centre is.
pub fn disk_image(sub: &SubgridSpec, center: Point, radius: f64) -> BinaryImage {
    let (rows, cols) = (sub.rows(), sub.cols());
    let mut cells = Raster::filled(rows, cols, 0u8);
    for r in 0..rows {
        for c in 0..cols {
            if sub.center(r, c).dist(center) < radius {
                cells.set(r, c, 1);
            }
        }
    }
    BinaryImage { sub: sub.clone(), cells, outside: false }
}

pub struct DiskReport {
    pub center_value: f64,
    pub radius: f64,
    pub eligible: usize,
    pub gradient_ok_fraction: f64,
}

/// Signed distance of a disk of `cells` cell widths radius, checked at the
/// centre and by central-difference gradient magnitude on cells more than
/// two cells away from both the interface and the medial axis (the centre).
pub fn disk_report(cells: f64) -> DiskReport {
    let dx = 1.0;
    let half = (cells * 1.5).ceil();
    let sub = SubgridSpec { x_min: -half, x_max: half, y_min: -half, y_max: half, cell: dx };
    let center = Point::new(0.0, 0.0);
    let radius = cells * dx;
    let sd = signed_distance(&disk_image(&sub, center, radius), dx).unwrap();
    let v = &sd.values;
    let (rows, cols) = (v.rows(), v.cols());
    let mut center_value = f64::NAN;
    let mut best = f64::INFINITY;
    let (mut eligible, mut ok) = (0usize, 0usize);
    for r in 0..rows {
        for c in 0..cols {
            let p = sub.center(r, c);
            let d = p.dist(center);
            if d < best {
                best = d;
                center_value = v.at(r, c);
            }
            if r == 0 || c == 0 || r + 1 == rows || c + 1 == cols {
                continue;
            }
            if (d - radius).abs() <= 2.0 * dx || d <= 2.0 * dx {
                continue;
            }
            let gx = (v.at(r, c + 1) - v.at(r, c - 1)) / (2.0 * dx);
            let gy = (v.at(r + 1, c) - v.at(r - 1, c)) / (2.0 * dx);
            let g = gx.hypot(gy);
            eligible += 1;
            if (0.9..=1.1).contains(&g) {
                ok += 1;
            }
        }
    }
    DiskReport { center_value, radius, eligible, gradient_ok_fraction: ok as f64 / eligible as f64 }
}

// ---- Gaussian conditioning ----

pub struct ConditioningReport {
    pub mean_rel_err: f64,
    pub var_rel_err: f64,
}

/// Fit the conditioning model on `n` draws of a bivariate normal (h, d) and
/// compare the posterior of h given `d_obs` with the textbook conditional.
/// Both variables are zero mean, like the canonical variates the model sees.
pub fn bivariate_conditioning(n: usize, seed: u64) -> ConditioningReport {
    let (mu_h, mu_d, sh, sd, rho) = (0.0, 0.0, 2.0, 1.5, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draws are whitened to exact zero mean and unit covariance so the
    // comparison measures the estimator, not sampling noise.
    let mut z = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in z.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let c = z.tr_mul(&z) / (n as f64 - 1.0);
    let l = c.cholesky().unwrap().l();
    let z = (l.try_inverse().unwrap() * z.transpose()).transpose();
    let mut h = DMatrix::zeros(n, 1);
    let mut d = DMatrix::zeros(n, 1);
    for i in 0..n {
        let (z1, z2) = (z[(i, 0)], z[(i, 1)]);
        h[(i, 0)] = mu_h + sh * z1;
        d[(i, 0)] = mu_d + sd * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
    }
    let d_obs = mu_d + 1.2 * sd;
    let terms = fit_posterior_terms(&h, &d).unwrap();
    let (mu, sigma) = condition(&terms, &nalgebra::DVector::from_element(1, d_obs)).unwrap();
    let exact_mean = mu_h + rho * sh / sd * (d_obs - mu_d);
    let exact_var = sh * sh * (1.0 - rho * rho);
    ConditioningReport {
        mean_rel_err: (mu[0] - exact_mean).abs() / exact_mean.abs(),
        var_rel_err: (sigma[(0, 0)] - exact_var).abs() / exact_var,
    }
}

// ---- flow and transport ----

pub fn homogeneous_field(grid: &GridSpec, log10k: f64) -> HydraulicField {
    HydraulicField {
        grid: grid.clone(),
        log10k: Raster::filled(grid.n_rows, grid.n_cols, log10k),
        realization_seed: 0,
        sampled_mean: log10k,
        range: 50.0,
    }
}

pub fn uniform_flow(log10k: f64) -> FlowSolution {
    let grid = GridSpec::default();
    solve_steady_flow(&homogeneous_field(&grid, log10k), None, BoundaryHeads::default(), &FlowParams::default()).unwrap()
}

/// Largest deviation of the homogeneous no-well head field from the linear
/// profile between the boundary heads.
pub fn linear_head_error(sol: &FlowSolution, b: BoundaryHeads) -> f64 {
    let g = &sol.grid;
    let mut worst: f64 = 0.0;
    for r in 0..g.n_rows {
        for c in 0..g.n_cols {
            let x = (c as f64 + 0.5) * g.cell_dx;
            let exact = b.west_head + (b.east_head - b.west_head) * x / g.x_extent;
            worst = worst.max((sol.heads.at(r, c) - exact).abs());
        }
    }
    worst
}

/// CDF of the first passage time across a plane at distance `l` for
/// advection `v` and dispersion `d` (inverse Gaussian).
pub fn first_passage_cdf(t: f64, l: f64, v: f64, d: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let s = (4.0 * d * t).sqrt();
    0.5 * erfc((l - v * t) / s) + 0.5 * (v * l / d + ln_erfc((l + v * t) / s)).exp()
}

/// Density of plane arrivals per bin for a unit instantaneous release.
pub fn plane_curve(sol: &FlowSolution, params: &TransportParams, seed: u64, l: f64) -> Vec<f64> {
    let src = TracerSource { position: Point::new(300.0, 500.0), mass: 1.0, duration: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curve = track_tracer(sol, src, Capture::PlaneX(300.0 + l), 1.0, params, &mut rng).unwrap();
    // interior points are the bin centres
    curve.concentrations[1..=params.n_bins].to_vec()
}

pub struct AdeReport {
    pub worst: f64,
    pub peak: f64,
}

/// Random-walk breakthrough in uniform flow against the bin-averaged
/// analytic first-passage density.
pub fn ade_report() -> AdeReport {
    let sol = uniform_flow(1.7);
    let v = sol.pore_velocity(Point::new(300.0, 500.0)).unwrap().0;
    let l = 30.0;
    let params = TransportParams { n_particles_transport: 100_000, sim_duration: 200.0, n_bins: 40, max_step: 0.05, ..Default::default() };
    let sim = plane_curve(&sol, &params, 1, l);
    let d = params.alpha_l * v;
    let w = params.sim_duration / params.n_bins as f64;
    let exact: Vec<f64> =
        (0..params.n_bins).map(|i| (first_passage_cdf((i + 1) as f64 * w, l, v, d) - first_passage_cdf(i as f64 * w, l, v, d)) / w).collect();
    let peak = exact.iter().cloned().fold(0.0, f64::max);
    let worst = sim.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    AdeReport { worst, peak }
}

// ---- command line ----

pub fn whpa(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_whpa")).args(args).output().expect("run whpa")
}

fn run_ok(args: &[&str]) -> Vec<u8> {
    let out = whpa(args);
    assert!(out.status.success(), "whpa {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Small but complete scenario so the whole workflow runs in seconds.
pub fn small_config() -> whpa_bel::config::ScenarioConfig {
    let mut cfg = whpa_bel::config::ScenarioConfig::default();
    cfg.transport.n_particles_transport = 300;
    cfg.bel.k = 50;
    cfg.bel.retain_d = whpa_bel::bel::Retain::Count(8);
    cfg.bel.retain_h = whpa_bel::bel::Retain::Count(6);
    cfg.bel.zeta = 20;
    cfg.design.folds = 3;
    cfg.design.zeta = 10;
    cfg.design.size_study_sizes = vec![15, 25];
    cfg.design.size_study_targets = 5;
    cfg
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    sha2::Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_tree(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<String, String>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(root, &p, out);
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
        }
    }
}

/// Run every subcommand once inside `dir` and return a hash of each output
/// file and of each command's stdout.
pub fn cli_workflow(dir: &std::path::Path) -> std::collections::BTreeMap<String, String> {
    std::fs::create_dir_all(dir).unwrap();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(dir.join("small.toml"), small_config().to_toml_string()).unwrap();
    let mut stdout = std::collections::BTreeMap::new();
    stdout.insert("init-config", run_ok(&["init-config", "--out", &p("default.toml")]));
    stdout.insert(
        "generate",
        run_ok(&["generate", "--config", &p("small.toml"), "--n", "24", "--out", &p("data.bin"), "--csv", &p("csv")]),
    );
    // resuming an existing file appends the remaining records
    stdout.insert("resume", run_ok(&["generate", "--config", &p("small.toml"), "--n", "40", "--out", &p("data.bin"), "--resume"]));
    stdout.insert("train", run_ok(&["train", "--data", &p("data.bin"), "--n-train", "30", "--out", &p("model.bin")]));
    stdout.insert(
        "predict",
        run_ok(&["predict", "--model", &p("model.bin"), "--data", &p("data.bin"), "--record", "35", "--out", &p("predict")]),
    );
    stdout.insert("design", run_ok(&["design", "--data", &p("data.bin"), "--metric", "both", "--out", &p("design")]));
    stdout.insert("size-study", run_ok(&["size-study", "--data", &p("data.bin"), "--out", &p("size_study.csv")]));
    stdout.insert("inspect", run_ok(&["inspect", "--data", &p("data.bin"), "--model", &p("model.bin"), "--pca-scan", "30"]));
    let mut hashes = std::collections::BTreeMap::new();
    hash_tree(dir, dir, &mut hashes);
    for (k, v) in stdout {
        hashes.insert(format!("stdout:{k}"), sha256_hex(&v));
    }
    hashes
}
