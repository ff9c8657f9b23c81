use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use whpa_bel::bel::{components_for_fraction, fit_pca, BelModel, Retain};
use whpa_bel::config::ScenarioConfig;
use whpa_bel::coverage::{coverage, ensemble_envelope, envelope, envelope_area, PredictionSummary};
use whpa_bel::dataset::Dataset;
use whpa_bel::design::{export_design, export_size_study, kfold_design, train_model, training_size_study, DesignRun};
use whpa_bel::geometry::extract_zero_contour;
use whpa_bel::metrics::Metric;
use whpa_bel::pipeline::generate_records;
use whpa_bel::rng::{Purpose, StreamKey};
use whpa_bel::{Error, Result};

#[derive(Parser)]
#[command(name = "whpa", version, about = "Predict wellhead protection areas from tracer tests and rank injection wells")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Mhd,
    Ssim,
    Both,
}

impl MetricArg {
    fn metrics(self) -> Vec<Metric> {
        match self {
            MetricArg::Mhd => vec![Metric::Mhd],
            MetricArg::Ssim => vec![Metric::NegSsim],
            MetricArg::Both => vec![Metric::Mhd, Metric::NegSsim],
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the default scenario configuration as TOML.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate forward records (field, curves, WHPA) into a dataset file.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue an existing file from its last record.
        #[arg(long)]
        resume: bool,
        /// Also export the dataset as CSV into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fit a BEL model on the first valid records of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// One-based injector numbers, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        wells: Vec<usize>,
        /// Training rows; defaults to 80% of the valid records.
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the posterior WHPA for one record or a curve file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Dataset used for the record and for the prior envelope.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Record position in the dataset to predict.
        #[arg(long)]
        record: Option<usize>,
        /// File of comma-separated predictor values (wells x k), one or more lines.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long)]
        zeta: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold ranking of single-well designs.
    Design {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "both")]
        metric: MetricArg,
        #[arg(long)]
        zeta: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior SSIM against training-set size.
    SizeStudy {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        targets: Option<usize>,
        #[arg(long)]
        zeta: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a JSON summary of a dataset or model.
    Inspect {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report the explained-variance scan on this many leading valid records.
        #[arg(long)]
        pca_scan: Option<usize>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_generate(config: Option<&Path>, n: u64, out: &Path, seed: Option<u64>, resume: bool, csv: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let start = if resume && out.exists() {
        let (header, count) = Dataset::peek(out)?;
        if header.data_fingerprint != cfg.data_fingerprint() {
            return Err(Error::FingerprintMismatch { expected: cfg.data_fingerprint(), found: header.data_fingerprint });
        }
        count
    } else {
        Dataset::new(&cfg).save(out)?;
        0
    };
    const CHUNK: u64 = 50;
    let mut next = start;
    while next < n {
        let m = CHUNK.min(n - next);
        let recs = generate_records(&cfg, next, m);
        Dataset::append(out, &cfg, &recs)?;
        next += m;
        log::info!("generated {next}/{n}");
    }
    let data = Dataset::load(out)?;
    let failed = data.records.iter().filter(|r| !r.valid).count();
    if let Some(dir) = csv {
        data.export_csv(dir)?;
    }
    println!(
        "{}",
        serde_json::json!({"records": data.len(), "invalid": failed, "data_fingerprint": data.header.data_fingerprint})
    );
    Ok(())
}

fn default_train_rows(data: &Dataset, n_train: Option<usize>) -> Result<Vec<usize>> {
    let valid = data.valid_indices();
    let n = n_train.unwrap_or(valid.len() * 4 / 5);
    if n > valid.len() {
        return Err(Error::TooFewSamples { required: n, actual: valid.len() });
    }
    Ok(valid[..n].to_vec())
}

fn parse_wells(wells: &[usize], n_wells: usize) -> Result<Vec<usize>> {
    if wells.is_empty() {
        return Err(Error::InvalidInput("empty well list".into()));
    }
    wells
        .iter()
        .map(|&w| {
            if w == 0 || w > n_wells {
                Err(Error::InvalidInput(format!("well {w} out of range 1..={n_wells}")))
            } else {
                Ok(w - 1)
            }
        })
        .collect()
}

fn cmd_train(data: &Path, wells: &[usize], n_train: Option<usize>, out: &Path) -> Result<()> {
    let data = Dataset::load(data)?;
    let wells = parse_wells(wells, data.header.n_wells)?;
    let rows = default_train_rows(&data, n_train)?;
    let model = train_model(&data, &rows, &wells, &data.config().bel.bel_config())?;
    model.save(BufWriter::new(File::create(out)?))?;
    println!(
        "{}",
        serde_json::json!({
            "n_train": model.n_train,
            "wells": wells.iter().map(|w| w + 1).collect::<Vec<_>>(),
            "delta": model.pca_d.retained,
            "v": model.pca_h.retained,
            "eta": model.eta(),
            "predictor_variance": model.pca_d.cumulative_explained(),
            "target_variance": model.pca_h.cumulative_explained(),
            "canonical_correlations": model.cca.correlations,
            "model_fingerprint": model.fingerprint(),
        })
    );
    Ok(())
}

fn read_curves(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for tok in text.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        out.push(tok.parse::<f64>().map_err(|e| Error::Format(format!("bad number '{tok}': {e}")))?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    model: &Path,
    data: Option<&Path>,
    record: Option<usize>,
    curves: Option<&Path>,
    zeta: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let model = BelModel::load(std::io::BufReader::new(File::open(model)?))?;
    let data = data.map(Dataset::load).transpose()?;
    if let Some(d) = &data {
        if d.header.sub != model.meta.sub || d.header.k != model.meta.k {
            return Err(Error::InvalidInput("dataset and model use different subgrids or time grids".into()));
        }
    }
    let (obs, truth) = match (record, curves, &data) {
        (Some(r), None, Some(d)) => {
            if r >= d.len() || !d.records[r].valid {
                return Err(Error::InvalidInput(format!("record {r} missing or invalid")));
            }
            (d.predictor_row(r, &model.meta.wells), Some(d.sd_image(r)))
        }
        (None, Some(c), _) => (read_curves(c)?, None),
        _ => return Err(Error::InvalidInput("give either --record with --data, or --curves".into())),
    };
    let cfg_zeta = data.as_ref().map(|d| d.config().bel.zeta).unwrap_or(400);
    let zeta = zeta.unwrap_or(cfg_zeta);
    let seed = seed.or(data.as_ref().map(|d| d.config().seed)).unwrap_or(0);
    let mut rng = StreamKey::root(seed).purpose(Purpose::Posterior).child(record.map(|r| r as u64).unwrap_or(u64::MAX - 1)).rng();
    let ens = model.predict(&obs, zeta, &mut rng)?;
    std::fs::create_dir_all(out)?;

    let sub = &ens.sub;
    let mut w = BufWriter::new(File::create(out.join("posterior_sd.csv"))?);
    writeln!(w, "# zeta={} rows={} cols={} cell={} x_min={} y_min={} row0=south", ens.zeta(), sub.rows(), sub.cols(), sub.cell, sub.x_min, sub.y_min)?;
    for row in ens.images.row_iter() {
        writeln!(w, "{}", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("posterior_contours.csv"))?);
    writeln!(w, "sample,x,y")?;
    for (i, c) in ens.contours().iter().enumerate() {
        for p in c {
            writeln!(w, "{i},{},{}", p.x, p.y)?;
        }
    }
    w.flush()?;
    let mean = model.predict_mean_image(&obs)?;
    let mut w = BufWriter::new(File::create(out.join("posterior_mean_contour.csv"))?);
    writeln!(w, "x,y")?;
    for p in extract_zero_contour(&mean) {
        writeln!(w, "{},{}", p.x, p.y)?;
    }
    w.flush()?;

    let post_mask = ensemble_envelope(&ens);
    let prior_area = data.as_ref().map(|d| {
        let rows = default_train_rows(d, Some(model.n_train.min(d.valid_indices().len()))).unwrap_or_default();
        let mask = envelope(sub.n_cells(), rows.iter().map(|&r| d.records[r].sd.as_slice()));
        envelope_area(&mask, sub)
    });
    let truth_coverage = truth.as_ref().map(|t| coverage(&extract_zero_contour(t), &ens));
    if let Some(t) = &truth {
        let mut w = BufWriter::new(File::create(out.join("true_contour.csv"))?);
        writeln!(w, "x,y")?;
        for p in extract_zero_contour(t) {
            writeln!(w, "{},{}", p.x, p.y)?;
        }
        w.flush()?;
    }
    let summary = PredictionSummary {
        zeta: ens.zeta(),
        posterior_envelope_area: envelope_area(&post_mask, sub),
        prior_envelope_area: prior_area,
        truth_coverage,
        model_fingerprint: ens.model_fingerprint.clone(),
        observation_fingerprint: ens.observation_fingerprint.clone(),
    };
    let v = serde_json::to_value(&summary)?;
    write_json(&out.join("summary.json"), &v)?;
    println!("{v}");
    Ok(())
}

fn design_run(data: &Dataset, k: Option<usize>, metrics: Vec<Metric>, zeta: Option<usize>, seed: Option<u64>) -> DesignRun {
    let cfg = data.config();
    DesignRun {
        folds: k.unwrap_or(cfg.design.folds),
        zeta: zeta.unwrap_or(cfg.design.zeta),
        metrics,
        bel: cfg.bel.bel_config(),
        ssim: cfg.design.ssim,
        seed: seed.unwrap_or(cfg.seed),
    }
}

fn cmd_design(data: &Path, k: Option<usize>, metric: MetricArg, zeta: Option<usize>, seed: Option<u64>, out: &Path) -> Result<()> {
    let data = Dataset::load(data)?;
    let run = design_run(&data, k, metric.metrics(), zeta, seed);
    let reports = kfold_design(&data, &run)?;
    export_design(&reports, out)?;
    let v: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "metric": r.metric.name(),
                "ranking": r.ranked_well_numbers(),
                "consistent": r.ranking.consistent,
                "ranking_agreement": r.ranking.ranking_agreement,
            })
        })
        .collect();
    println!("{}", serde_json::Value::Array(v));
    Ok(())
}

fn cmd_size_study(
    data: &Path,
    sizes: Option<Vec<usize>>,
    targets: Option<usize>,
    zeta: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let data = Dataset::load(data)?;
    let cfg = data.config().clone();
    let sizes = sizes.unwrap_or(cfg.design.size_study_sizes.clone());
    let targets = targets.unwrap_or(cfg.design.size_study_targets);
    let run = design_run(&data, None, vec![Metric::NegSsim], zeta.or(Some(cfg.bel.zeta)), seed);
    let study = training_size_study(&data, &sizes, targets, &run)?;
    export_size_study(&study, out)?;
    let means: Vec<f64> = study.values.row_iter().map(|r| r.mean()).collect();
    println!("{}", serde_json::json!({"sizes": study.sizes, "skipped": study.skipped, "mean_ssim": means}));
    Ok(())
}

fn cmd_inspect(data: Option<&Path>, model: Option<&Path>, pca_scan: Option<usize>) -> Result<()> {
    let mut out = serde_json::Map::new();
    if let Some(p) = data {
        let d = Dataset::load(p)?;
        let valid = d.valid_indices();
        out.insert(
            "dataset".into(),
            serde_json::json!({
                "records": d.len(),
                "valid": valid.len(),
                "n_wells": d.header.n_wells,
                "k": d.header.k,
                "n_endpoints": d.header.n_endpoints,
                "subgrid": d.header.sub,
                "data_fingerprint": d.header.data_fingerprint,
            }),
        );
        if let Some(n) = pca_scan {
            let rows = &valid[..n.min(valid.len())];
            let wells: Vec<usize> = (0..d.header.n_wells).collect();
            let pd = fit_pca(&d.predictor_matrix(rows, &wells)?, Retain::Fraction(1.0))?;
            let ph = fit_pca(&d.target_matrix(rows), Retain::Fraction(1.0))?;
            let cum = |e: &[f64], k: usize| e.iter().take(k).sum::<f64>();
            out.insert(
                "pca_scan".into(),
                serde_json::json!({
                    "rows": rows.len(),
                    "predictor_components_for_99pct": components_for_fraction(&pd.explained, 0.99),
                    "target_components_for_98pct": components_for_fraction(&ph.explained, 0.98),
                    "predictor_variance_at_50": cum(&pd.explained, 50),
                    "target_variance_at_30": cum(&ph.explained, 30),
                }),
            );
        }
    }
    if let Some(p) = model {
        let m = BelModel::load(std::io::BufReader::new(File::open(p)?))?;
        out.insert(
            "model".into(),
            serde_json::json!({
                "wells": m.meta.wells.iter().map(|w| w + 1).collect::<Vec<_>>(),
                "k": m.meta.k,
                "n_train": m.n_train,
                "delta": m.pca_d.retained,
                "v": m.pca_h.retained,
                "eta": m.eta(),
                "canonical_correlations": m.cca.correlations,
                "training_fingerprint": m.meta.training_fingerprint,
                "model_fingerprint": m.fingerprint(),
            }),
        );
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("give --data and/or --model".into()));
    }
    println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(out))?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::InitConfig { out } => {
            std::fs::write(out, ScenarioConfig::default().to_toml_string())?;
            Ok(())
        }
        Cmd::Generate { config, n, out, seed, resume, csv } => cmd_generate(config.as_deref(), n, &out, seed, resume, csv.as_deref()),
        Cmd::Train { data, wells, n_train, out } => cmd_train(&data, &wells, n_train, &out),
        Cmd::Predict { model, data, record, curves, zeta, seed, out } => {
            cmd_predict(&model, data.as_deref(), record, curves.as_deref(), zeta, seed, &out)
        }
        Cmd::Design { data, k, metric, zeta, seed, out } => cmd_design(&data, k, metric, zeta, seed, &out),
        Cmd::SizeStudy { data, sizes, targets, zeta, seed, out } => cmd_size_study(&data, sizes, targets, zeta, seed, &out),
        Cmd::Inspect { data, model, pca_scan } => cmd_inspect(data.as_deref(), model.as_deref(), pca_scan),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": e.kind(), "message": e.to_string()}));
            let code = match e {
                Error::InvalidInput(_) | Error::ShapeMismatch { .. } | Error::Config(_) | Error::TooFewSamples { .. } => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
