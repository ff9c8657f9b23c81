//! Experimental design: how much each injection well alone constrains the
//! WHPA posterior, checked across k-fold splits, plus the training-size study.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bel::{fit_bel, fit_bel_with_target, fit_pca, BelConfig, BelModel, PosteriorEnsemble, Retain, TrainingMeta};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::geometry::{extract_zero_contour, SdImage};
use crate::metrics::{mhd, ssim_with, standardize, Metric, SsimParams};
use crate::raster::Point;
use crate::rng::{Purpose, StreamKey};

/// Settings shared by the design and size-study runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRun {
    pub folds: usize,
    pub zeta: usize,
    pub metrics: Vec<Metric>,
    pub bel: BelConfig,
    pub ssim: SsimParams,
    pub seed: u64,
}

/// Sum of one metric between every ensemble member and a reference.
///
/// For MHD a member without a zero contour contributes the subgrid diagonal,
/// the largest distance two contours on the subgrid can have.
pub fn metric_sum(ens: &PosteriorEnsemble, truth: &SdImage, truth_contour: &[Point], metric: Metric, ssim: &SsimParams) -> Result<f64> {
    if ens.sub != truth.sub {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", truth.sub), actual: format!("{:?}", ens.sub) });
    }
    let mut total = 0.0;
    match metric {
        Metric::Mhd => {
            if truth_contour.is_empty() {
                return invalid("reference image has no zero contour");
            }
            let s = &ens.sub;
            let diag = (s.x_max - s.x_min).hypot(s.y_max - s.y_min);
            for i in 0..ens.zeta() {
                let c = extract_zero_contour(&ens.image(i));
                total += if c.is_empty() { diag } else { mhd(&c, truth_contour)? };
            }
        }
        Metric::NegSsim => {
            for i in 0..ens.zeta() {
                total -= ssim_with(&ens.image(i).values, &truth.values, ssim)?;
            }
        }
    }
    Ok(total)
}

/// Summed discrepancy per single-well model for one test record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector {
    pub metric: Metric,
    pub test_index: u64,
    pub zeta: usize,
    pub theta: Vec<f64>,
}

/// Evaluate every metric for one test record, one ensemble per model.
/// The reference is the test target reconstructed from the retained target
/// components.
pub fn utility_vectors(
    models: &[BelModel],
    data: &Dataset,
    row: usize,
    run: &DesignRun,
    key: StreamKey,
) -> Result<Vec<UtilityVector>> {
    let rec = &data.records[row];
    let first = models.first().ok_or_else(|| Error::InvalidInput("no models".into()))?;
    let truth = first.target_reconstruction(&rec.sd);
    let contour = extract_zero_contour(&truth);
    let mut out: Vec<UtilityVector> = run
        .metrics
        .iter()
        .map(|&m| UtilityVector { metric: m, test_index: rec.index, zeta: run.zeta, theta: Vec::with_capacity(models.len()) })
        .collect();
    for (i, model) in models.iter().enumerate() {
        let obs = data.predictor_row(row, &model.meta.wells);
        let mut rng = key.child(rec.index).child(i as u64).rng();
        let ens = model.predict(&obs, run.zeta, &mut rng)?;
        for uv in out.iter_mut() {
            uv.theta.push(metric_sum(&ens, &truth, &contour, uv.metric, &run.ssim)?);
        }
    }
    Ok(out)
}

/// Theta for a whole test set: rows are models, columns test records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityMatrix {
    pub metric: Metric,
    pub fold: usize,
    pub test_indices: Vec<u64>,
    pub theta: DMatrix<f64>,
}

pub fn utility_matrices(
    models: &[BelModel],
    data: &Dataset,
    test_rows: &[usize],
    run: &DesignRun,
    fold: usize,
    key: StreamKey,
) -> Result<Vec<UtilityMatrix>> {
    if test_rows.is_empty() {
        return invalid("empty test set");
    }
    let cols: Vec<Vec<UtilityVector>> =
        test_rows.par_iter().map(|&r| utility_vectors(models, data, r, run, key)).collect::<Result<_>>()?;
    let test_indices: Vec<u64> = test_rows.iter().map(|&r| data.records[r].index).collect();
    Ok(run
        .metrics
        .iter()
        .enumerate()
        .map(|(mi, &metric)| UtilityMatrix {
            metric,
            fold,
            test_indices: test_indices.clone(),
            theta: DMatrix::from_fn(models.len(), test_rows.len(), |i, j| cols[j][mi].theta[i]),
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Most extreme data within 1.5 IQR of the quartiles.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let whisker_lo = v.iter().copied().find(|&x| x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let whisker_hi = v.iter().rev().copied().find(|&x| x <= q3 + 1.5 * iqr).unwrap_or(q3);
        BoxStats { median, q1, q3, iqr, whisker_lo, whisker_hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub metric: Metric,
    pub n_train: usize,
    pub n_test: usize,
    pub wells: Vec<usize>,
    /// Theta standardized with the mean and std of all its entries.
    pub standardized: DMatrix<f64>,
    pub stats: Vec<BoxStats>,
}

impl FoldReport {
    pub fn from_theta(u: &UtilityMatrix, wells: Vec<usize>, n_train: usize) -> Result<Self> {
        let (z, flagged) = standardize(u.theta.as_slice())?;
        if flagged {
            log::warn!("fold {}: {} values have zero variance", u.fold, u.metric.name());
        }
        let standardized = DMatrix::from_vec(u.theta.nrows(), u.theta.ncols(), z);
        let stats = standardized.row_iter().map(|r| BoxStats::of(&r.iter().copied().collect::<Vec<_>>())).collect();
        Ok(FoldReport { fold: u.fold, metric: u.metric, n_train, n_test: u.theta.ncols(), wells, standardized, stats })
    }

    /// Well positions in this fold ordered by median, lowest first.
    pub fn ranking(&self) -> Vec<usize> {
        order_by(&self.stats.iter().map(|s| s.median).collect::<Vec<_>>())
    }
}

fn order_by(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Spearman rank correlation between two permutations of the same items.
pub fn spearman(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut ra = vec![0.0; n];
    let mut rb = vec![0.0; n];
    for (pos, &item) in a.iter().enumerate() {
        ra[item] = pos as f64;
    }
    for (pos, &item) in b.iter().enumerate() {
        rb[item] = pos as f64;
    }
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    let n = n as f64;
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellRanking {
    /// Positions into the fold reports' well list, most informative first.
    pub ranking: Vec<usize>,
    /// Median of the pooled standardized values, per well position.
    pub scores: Vec<f64>,
    pub pooled: Vec<BoxStats>,
    /// True when every fold median lies within the pooled IQR of its well.
    pub consistent: bool,
    pub fold_rankings: Vec<Vec<usize>>,
    /// Mean pairwise Spearman correlation of the fold rankings.
    pub ranking_agreement: f64,
}

pub fn rank_wells(folds: &[FoldReport]) -> Result<WellRanking> {
    if folds.len() < 2 {
        return invalid("ranking needs at least two folds");
    }
    let nw = folds[0].stats.len();
    if folds.iter().any(|f| f.stats.len() != nw) {
        return invalid("fold reports cover different well sets");
    }
    let mut pooled = Vec::with_capacity(nw);
    let mut consistent = true;
    for w in 0..nw {
        let all: Vec<f64> = folds.iter().flat_map(|f| f.standardized.row(w).iter().copied().collect::<Vec<_>>()).collect();
        let s = BoxStats::of(&all);
        if folds.iter().any(|f| f.stats[w].median < s.q1 || f.stats[w].median > s.q3) {
            consistent = false;
        }
        pooled.push(s);
    }
    let scores: Vec<f64> = pooled.iter().map(|s| s.median).collect();
    let fold_rankings: Vec<Vec<usize>> = folds.iter().map(|f| f.ranking()).collect();
    let mut acc = 0.0;
    let mut pairs = 0;
    for i in 0..fold_rankings.len() {
        for j in (i + 1)..fold_rankings.len() {
            acc += spearman(&fold_rankings[i], &fold_rankings[j]);
            pairs += 1;
        }
    }
    Ok(WellRanking { ranking: order_by(&scores), scores, pooled, consistent, fold_rankings, ranking_agreement: acc / pairs as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub metric: Metric,
    pub n_records: usize,
    pub k: usize,
    pub zeta: usize,
    /// Zero-based injector index for each row of the fold reports.
    pub wells: Vec<usize>,
    pub folds: Vec<FoldReport>,
    pub ranking: WellRanking,
    pub data_fingerprint: String,
    pub config_fingerprint: String,
}

impl DesignReport {
    /// Injector numbers (one-based) from most to least informative.
    pub fn ranked_well_numbers(&self) -> Vec<usize> {
        self.ranking.ranking.iter().map(|&p| self.wells[p] + 1).collect()
    }
}

/// Shuffle the valid records with the fold stream and deal them round-robin
/// into `k` folds.
pub fn assign_folds(valid: &[usize], k: usize, key: StreamKey) -> Vec<Vec<usize>> {
    let mut order = valid.to_vec();
    order.shuffle(&mut key.purpose(Purpose::Folds).rng());
    let mut folds = vec![Vec::new(); k];
    for (i, r) in order.into_iter().enumerate() {
        folds[i % k].push(r);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    folds
}

fn retained_floor(r: Retain) -> usize {
    match r {
        Retain::Count(c) => c,
        Retain::Fraction(_) => 1,
    }
}

/// Train one model per injector on `train`, sharing a single target basis.
pub fn single_well_models(data: &Dataset, train: &[usize], cfg: &BelConfig) -> Result<Vec<BelModel>> {
    let h = data.target_matrix(train);
    let pca_h = fit_pca(&h, cfg.retain_h)?;
    let scores = pca_h.project(&h);
    drop(h);
    let fp = training_fingerprint(data, train);
    (0..data.header.n_wells)
        .into_par_iter()
        .map(|w| {
            let d = data.predictor_matrix(train, &[w])?;
            let meta = TrainingMeta { wells: vec![w], k: data.header.k, sub: data.header.sub.clone(), training_fingerprint: fp.clone() };
            fit_bel_with_target(&d, &pca_h, &scores, meta, cfg.retain_d)
        })
        .collect()
}

/// Train a model on the given wells and rows.
pub fn train_model(data: &Dataset, rows: &[usize], wells: &[usize], cfg: &BelConfig) -> Result<BelModel> {
    let d = data.predictor_matrix(rows, wells)?;
    let h = data.target_matrix(rows);
    let meta = TrainingMeta {
        wells: wells.to_vec(),
        k: data.header.k,
        sub: data.header.sub.clone(),
        training_fingerprint: training_fingerprint(data, rows),
    };
    fit_bel(&d, &h, meta, cfg)
}

pub fn training_fingerprint(data: &Dataset, rows: &[usize]) -> String {
    let mut fp = crate::fingerprint::Fingerprint::new();
    fp.str(&data.header.data_fingerprint);
    for &r in rows {
        fp.u64(data.records[r].index);
    }
    fp.hex()
}

/// k-fold evaluation of single-well designs. Returns one report per metric.
pub fn kfold_design(data: &Dataset, run: &DesignRun) -> Result<Vec<DesignReport>> {
    if run.folds < 2 {
        return invalid("k-fold design needs k >= 2 (k = 1 leaves no held-out data)");
    }
    let valid = data.valid_indices();
    let eta_floor = retained_floor(run.bel.retain_d).max(retained_floor(run.bel.retain_h));
    let n_train_min = valid.len() - valid.len().div_ceil(run.folds);
    if n_train_min <= eta_floor {
        return Err(Error::TooFewSamples { required: eta_floor, actual: n_train_min });
    }
    let key = StreamKey::root(run.seed);
    let folds = assign_folds(&valid, run.folds, key);
    let wells: Vec<usize> = (0..data.header.n_wells).collect();
    let mut per_metric: Vec<Vec<FoldReport>> = vec![Vec::new(); run.metrics.len()];
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect::<Vec<_>>();
        let mut train = train;
        train.sort_unstable();
        log::info!("fold {}/{}: {} train, {} test", f + 1, run.folds, train.len(), test.len());
        let models = single_well_models(data, &train, &run.bel)?;
        let fold_key = key.purpose(Purpose::Posterior).child(f as u64);
        let mats = utility_matrices(&models, data, test, run, f, fold_key)?;
        for (mi, u) in mats.iter().enumerate() {
            per_metric[mi].push(FoldReport::from_theta(u, wells.clone(), train.len())?);
        }
    }
    let cfg = data.config();
    per_metric
        .into_iter()
        .zip(&run.metrics)
        .map(|(folds, &metric)| {
            Ok(DesignReport {
                metric,
                n_records: valid.len(),
                k: run.folds,
                zeta: run.zeta,
                wells: wells.clone(),
                ranking: rank_wells(&folds)?,
                folds,
                data_fingerprint: data.header.data_fingerprint.clone(),
                config_fingerprint: cfg.fingerprint(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStudy {
    pub sizes: Vec<usize>,
    pub skipped: Vec<usize>,
    pub target_indices: Vec<u64>,
    /// Mean SSIM over the posterior samples, `sizes x targets`.
    pub values: DMatrix<f64>,
    pub zeta: usize,
}

impl SizeStudy {
    /// Mean over targets of `|value(size) - value(reference)|`.
    pub fn mean_deviation(&self, size: usize, reference: usize) -> Option<f64> {
        let a = self.sizes.iter().position(|&s| s == size)?;
        let b = self.sizes.iter().position(|&s| s == reference)?;
        let n = self.values.ncols() as f64;
        Some(self.values.row(a).iter().zip(self.values.row(b).iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
    }
}

/// Fit all-well models on growing training prefixes and score fixed held-out
/// targets by mean SSIM between posterior samples and the true SD image.
/// The targets are the last `n_targets` valid records; training rows are
/// taken from the front.
pub fn training_size_study(data: &Dataset, sizes: &[usize], n_targets: usize, run: &DesignRun) -> Result<SizeStudy> {
    let valid = data.valid_indices();
    let max = sizes.iter().copied().max().unwrap_or(0);
    if max + n_targets > valid.len() {
        return invalid(format!("size study needs {} valid records, dataset has {}", max + n_targets, valid.len()));
    }
    if n_targets == 0 {
        return invalid("size study needs at least one target");
    }
    let targets = &valid[valid.len() - n_targets..];
    let floor = retained_floor(run.bel.retain_d).max(retained_floor(run.bel.retain_h));
    let wells: Vec<usize> = (0..data.header.n_wells).collect();
    let key = StreamKey::root(run.seed).purpose(Purpose::Posterior).child(u64::MAX);
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    let mut rows = Vec::new();
    for &size in sizes {
        if size <= floor {
            log::warn!("size study: skipping size {size}, at most the retained component count {floor}");
            skipped.push(size);
            continue;
        }
        let model = train_model(data, &valid[..size], &wells, &run.bel)?;
        let vals: Vec<f64> = targets
            .par_iter()
            .map(|&t| {
                let obs = data.predictor_row(t, &wells);
                let mut rng = key.child(size as u64).child(data.records[t].index).rng();
                let ens = model.predict(&obs, run.zeta, &mut rng)?;
                let truth = data.sd_image(t);
                Ok(-metric_sum(&ens, &truth, &[], Metric::NegSsim, &run.ssim)? / run.zeta as f64)
            })
            .collect::<Result<_>>()?;
        kept.push(size);
        rows.push(vals);
    }
    let values = DMatrix::from_fn(kept.len(), n_targets, |i, j| rows[i][j]);
    Ok(SizeStudy {
        sizes: kept,
        skipped,
        target_indices: targets.iter().map(|&t| data.records[t].index).collect(),
        values,
        zeta: run.zeta,
    })
}

/// Write `theta_<metric>_fold<f>.csv`, `boxplots_<metric>.json` and
/// `ranking_<metric>.json` for each report.
pub fn export_design(reports: &[DesignReport], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for rep in reports {
        let m = rep.metric.name();
        for f in &rep.folds {
            let mut w = BufWriter::new(File::create(dir.join(format!("theta_{m}_fold{}.csv", f.fold + 1)))?);
            writeln!(w, "well,{}", (0..f.n_test).map(|j| format!("test{j}")).collect::<Vec<_>>().join(","))?;
            for (i, row) in f.standardized.row_iter().enumerate() {
                writeln!(w, "{},{}", rep.wells[i] + 1, row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
            }
            w.flush()?;
        }
        let boxes: Vec<serde_json::Value> = rep
            .folds
            .iter()
            .map(|f| {
                serde_json::json!({
                    "fold": f.fold + 1,
                    "n_train": f.n_train,
                    "n_test": f.n_test,
                    "wells": f.stats.iter().enumerate().map(|(i, s)| serde_json::json!({"well": rep.wells[i] + 1, "stats": s})).collect::<Vec<_>>(),
                })
            })
            .collect();
        write_json(&dir.join(format!("boxplots_{m}.json")), &serde_json::json!({ "metric": m, "folds": boxes }))?;
        let r = &rep.ranking;
        let summary = serde_json::json!({
            "metric": m,
            "n_records": rep.n_records,
            "k": rep.k,
            "zeta": rep.zeta,
            "ranking": rep.ranked_well_numbers(),
            "scores": rep.wells.iter().map(|w| w + 1).zip(&r.scores).map(|(w, s)| serde_json::json!({"well": w, "median": s})).collect::<Vec<_>>(),
            "consistent": r.consistent,
            "fold_rankings": r.fold_rankings.iter().map(|fr| fr.iter().map(|&p| rep.wells[p] + 1).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "ranking_agreement": r.ranking_agreement,
            "data_fingerprint": rep.data_fingerprint,
            "config_fingerprint": rep.config_fingerprint,
        });
        write_json(&dir.join(format!("ranking_{m}.json")), &summary)?;
    }
    Ok(())
}

pub fn export_size_study(study: &SizeStudy, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "size,{}", study.target_indices.iter().map(|t| format!("target{t}")).collect::<Vec<_>>().join(","))?;
    for (i, s) in study.sizes.iter().enumerate() {
        writeln!(w, "{s},{}", study.values.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
