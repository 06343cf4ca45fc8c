//! Accuracy, reference classifiers, fold protocols, cross-validation, and
//! inter-viewer correlation analysis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{target_name, Dataset, Label, LabeledSample, PROTOCOL_MOVIES};
use crate::error::{Error, Result};
use crate::features::{build_vocab, Vocabulary};
use crate::model::{build_mt, build_st, BackboneConfig, ConvStage, ModelKind, Modalities, Network};
use crate::training::{branch_accuracies, encode_samples, masked_accuracy, train, EncodedSample, TrainConfig, TrainOutcome};

/// Percentage of present labels matched by `p > threshold`.
pub fn accuracy(preds: &[f64], labels: &[Option<Label>], threshold: f64) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape("accuracy", format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    masked_accuracy(preds, labels, threshold).ok_or(Error::EmptyMask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAccuracies {
    pub random: f64,
    pub positive: f64,
    pub negative: f64,
}

/// Accuracies of a seeded fair coin, an always-positive and an always-negative predictor.
pub fn reference_classifiers(labels: &[Option<Label>], seed: u64) -> Result<ReferenceAccuracies> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coin: Vec<f64> = labels.iter().map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
    Ok(ReferenceAccuracies {
        random: accuracy(&coin, labels, 0.5)?,
        positive: accuracy(&vec![1.0; labels.len()], labels, 0.5)?,
        negative: accuracy(&vec![0.0; labels.len()], labels, 0.5)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Table1,
    Baseline,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Protocol::Table1),
            "baseline" => Ok(Protocol::Baseline),
            _ => Err(Error::UnknownProtocol(s.to_string())),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Table1 => "table1",
            Protocol::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_id: String,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl FoldPlan {
    fn new(id: &str, train: &[&str], validation: &[&str], test: &[&str]) -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self { fold_id: id.to_string(), train: own(train), validation: own(validation), test: own(test) }
    }

    /// Checks that the three sets are disjoint and that every movie exists.
    pub fn validate(&self, movies: &[String]) -> Result<()> {
        let all: Vec<&String> = self.train.iter().chain(&self.validation).chain(&self.test).collect();
        for (i, m) in all.iter().enumerate() {
            if all[..i].contains(m) {
                return Err(Error::Invalid(format!("fold {}: movie {m} is listed twice", self.fold_id)));
            }
            if !movies.contains(m) {
                return Err(Error::Invalid(format!("fold {}: movie {m} is not in the dataset", self.fold_id)));
            }
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Invalid(format!("fold {}: train and test sets must be non-empty", self.fold_id)));
        }
        Ok(())
    }

    /// `F1  train: CRA, DEP, ...  val: CHI  test: BMI`
    pub fn display_line(&self) -> String {
        format!(
            "{}\ttrain: {}\tval: {}\ttest: {}",
            self.fold_id,
            self.train.join(", "),
            self.validation.join(", "),
            self.test.join(", ")
        )
    }
}

pub fn builtin_folds(protocol: Protocol) -> Vec<FoldPlan> {
    match protocol {
        Protocol::Table1 => vec![
            FoldPlan::new("F1", &["CRA", "DEP", "FNE", "GLA", "LOR"], &["CHI"], &["BMI"]),
            FoldPlan::new("F2", &["BMI", "DEP", "FNE", "GLA", "LOR"], &["CRA"], &["CHI"]),
            FoldPlan::new("F3", &["BMI", "CHI", "FNE", "GLA", "LOR"], &["DEP"], &["CRA"]),
            FoldPlan::new("F4", &["BMI", "CHI", "CRA", "GLA", "LOR"], &["FNE"], &["DEP"]),
            FoldPlan::new("F5", &["BMI", "CHI", "CRA", "DEP", "LOR"], &["GLA"], &["FNE"]),
            FoldPlan::new("F6", &["BMI", "CHI", "CRA", "DEP", "FNE"], &["LOR"], &["GLA"]),
            FoldPlan::new("F7", &["BMI", "CRA", "DEP", "FNE", "GLA"], &["CHI"], &["LOR"]),
        ],
        Protocol::Baseline => vec![FoldPlan::new("baseline", &["BMI", "CHI", "FNE", "GLA", "LOR"], &[], &["CRA", "DEP"])],
    }
}

/// Movie codes the built-in protocols refer to.
pub fn protocol_movies() -> Vec<String> {
    PROTOCOL_MOVIES.iter().map(|s| s.to_string()).collect()
}

/// SHA-256 of the JSON encoding, hex.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything about a model that is fixed before seeing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub modalities: Modalities,
    pub embed_dim: usize,
    pub conv_stages: Vec<ConvStage>,
    pub min_token_count: usize,
    pub decision_threshold: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let defaults = BackboneConfig::with_defaults(2, 1);
        Self {
            kind: ModelKind::Mt,
            modalities: Modalities::Both,
            embed_dim: defaults.embed_dim,
            conv_stages: defaults.conv_stages,
            min_token_count: 1,
            decision_threshold: 0.5,
        }
    }
}

impl ModelSpec {
    pub fn backbone(&self, vocab_size: usize, feature_dim: usize) -> BackboneConfig {
        BackboneConfig { vocab_size, embed_dim: self.embed_dim, conv_stages: self.conv_stages.clone(), feature_dim }
    }

    /// `MT-both`, `ST-text`, ...
    pub fn model_id(&self) -> String {
        let kind = match self.kind {
            ModelKind::St => "ST",
            ModelKind::Mt => "MT",
        };
        let modality = match self.modalities {
            Modalities::Text => "text",
            Modalities::Visual => "visual",
            Modalities::Both => "both",
        };
        format!("{kind}-{modality}")
    }
}

/// splitmix64 step, used to derive independent seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(base, |acc, &p| {
        let mut z = acc.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

pub struct TrainedModel {
    pub network: Network,
    pub outcome: TrainOutcome,
}

/// Result of training and testing one fold.
pub struct FoldRun {
    pub index: usize,
    pub fold: FoldPlan,
    pub vocabulary: Vocabulary,
    /// One MT network, or one ST network per target.
    pub models: Vec<TrainedModel>,
    /// Test accuracy per target (`V1..V_V`, `V_avg`).
    pub test_accuracy: Vec<Option<f64>>,
}

/// Test accuracy per target; targets the network does not predict are `None`.
pub fn evaluate_network(net: &Network, samples: &[EncodedSample], threshold: f64) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; net.architecture().viewer_count + 1];
    if samples.is_empty() {
        return Ok(out);
    }
    for (t, acc) in net.architecture().branch_targets().into_iter().zip(branch_accuracies(net, samples, threshold)?) {
        out[t] = acc;
    }
    Ok(out)
}

/// Trains on the fold's training movies, selects on its validation movies,
/// and tests on its test movies.
pub fn run_fold(dataset: &Dataset, fold: &FoldPlan, index: usize, spec: &ModelSpec, cfg: &TrainConfig) -> Result<FoldRun> {
    fold.validate(&dataset.movies)?;
    let train_raw = dataset.for_movies(&fold.train);
    let vocabulary = build_vocab(&train_raw, spec.min_token_count);
    let encode = |movies: &[String]| encode_samples(&dataset.for_movies(movies), &vocabulary);
    let train_set = encode_samples(&train_raw, &vocabulary);
    let val_set = encode(&fold.validation);
    let test_set = encode(&fold.test);
    let backbone = spec.backbone(vocabulary.len(), dataset.feature_dim());
    let v = dataset.viewer_count;

    let mut models = Vec::new();
    let mut test_accuracy = vec![None; v + 1];
    let targets: Vec<Option<usize>> = match spec.kind {
        ModelKind::Mt => vec![None],
        ModelKind::St => (0..=v).map(Some).collect(),
    };
    for target in targets {
        let stream = target.map_or(0, |t| t as u64 + 1);
        let init_seed = derive_seed(cfg.seed, &[index as u64, stream, 0]);
        let mut net = match target {
            None => build_mt(&backbone, v, init_seed, spec.modalities)?,
            Some(t) => build_st(&backbone, init_seed, spec.modalities, v, t)?,
        };
        let run_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[index as u64, stream, 1]), ..*cfg };
        let outcome = train(&mut net, &train_set, &val_set, &run_cfg)?;
        for (t, acc) in evaluate_network(&net, &test_set, spec.decision_threshold)?.into_iter().enumerate() {
            if acc.is_some() {
                test_accuracy[t] = acc;
            }
        }
        models.push(TrainedModel { network: net, outcome });
    }
    Ok(FoldRun { index, fold: fold.clone(), vocabulary, models, test_accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub fold_id: String,
    pub accuracy: Vec<Option<f64>>,
}

/// Per-target accuracy per fold, plus per-target means over folds and the overall mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub targets: Vec<String>,
    pub folds: Vec<FoldAccuracy>,
    pub target_mean: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

fn mean_of(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn new(model_id: String, config_hash: String, seed: u64, viewer_count: usize, folds: Vec<FoldAccuracy>) -> Self {
        let targets = (0..=viewer_count).map(|t| target_name(t, viewer_count)).collect();
        let mut report =
            Self { model_id, config_hash, seed, targets, folds, target_mean: Vec::new(), mean: None };
        report.aggregate();
        report
    }

    /// Recomputes the aggregate fields from the per-fold entries.
    pub fn aggregate(&mut self) {
        self.target_mean =
            (0..self.targets.len()).map(|t| mean_of(self.folds.iter().map(|f| f.accuracy[t]))).collect();
        self.mean = mean_of(self.target_mean.iter().copied());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.2}"))
}

/// One row per report: `model,V1,...,V_avg,Mean`.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(out, "model,{},Mean", first.targets.join(","));
    }
    for r in reports {
        let cells: Vec<String> = r.target_mean.iter().map(|&v| cell(v)).collect();
        let _ = writeln!(out, "{},{},{}", r.model_id, cells.join(","), cell(r.mean));
    }
    out
}

/// Per-fold rows of one report, same columns as [`reports_to_csv`].
pub fn folds_to_csv(report: &EvalReport) -> String {
    let mut out = format!("fold,{},Mean\n", report.targets.join(","));
    for f in &report.folds {
        let cells: Vec<String> = f.accuracy.iter().map(|&v| cell(v)).collect();
        let _ = writeln!(out, "{},{},{}", f.fold_id, cells.join(","), cell(mean_of(f.accuracy.iter().copied())));
    }
    out
}

/// Reference classifier rows (`Random`, `Positive`, `Negative`) over the folds' test sets.
pub fn reference_reports(dataset: &Dataset, folds: &[FoldPlan], seed: u64, config_hash: &str) -> Result<Vec<EvalReport>> {
    let v = dataset.viewer_count;
    let mut rows: [Vec<FoldAccuracy>; 3] = Default::default();
    for (i, fold) in folds.iter().enumerate() {
        let test = dataset.for_movies(&fold.test);
        let mut accs = [vec![None; v + 1], vec![None; v + 1], vec![None; v + 1]];
        for t in 0..=v {
            let labels: Vec<_> = test.iter().map(|s| s.target_label(t)).collect();
            if labels.iter().all(Option::is_none) {
                continue;
            }
            let r = reference_classifiers(&labels, derive_seed(seed, &[i as u64, t as u64]))?;
            accs[0][t] = Some(r.random);
            accs[1][t] = Some(r.positive);
            accs[2][t] = Some(r.negative);
        }
        for (row, acc) in rows.iter_mut().zip(accs) {
            row.push(FoldAccuracy { fold_id: fold.fold_id.clone(), accuracy: acc });
        }
    }
    Ok(["Random", "Positive", "Negative"]
        .into_iter()
        .zip(rows)
        .map(|(name, folds)| EvalReport::new(name.to_string(), config_hash.to_string(), seed, v, folds))
        .collect())
}

/// Runs every fold and assembles the report.
///
/// Folds are handed to `sink` in fold order as they complete. With more than
/// one worker, folds train concurrently on scoped threads; results do not
/// depend on the worker count.
pub fn cross_validate(
    dataset: &Dataset,
    folds: &[FoldPlan],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    workers: usize,
    sink: &mut dyn FnMut(&FoldRun) -> Result<()>,
) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::Invalid("no folds to run".into()));
    }
    for f in folds {
        f.validate(&dataset.movies)?;
    }
    cfg.validate()?;
    let hash = config_hash(&(spec, cfg, folds))?;
    let mut entries = Vec::with_capacity(folds.len());
    let mut record = |run: FoldRun| -> Result<()> {
        sink(&run)?;
        entries.push(FoldAccuracy { fold_id: run.fold.fold_id.clone(), accuracy: run.test_accuracy });
        Ok(())
    };

    if workers <= 1 || folds.len() == 1 {
        for (i, f) in folds.iter().enumerate() {
            record(run_fold(dataset, f, i, spec, cfg)?)?;
        }
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..workers.min(folds.len()) {
                let tx = tx.clone();
                let next = &next;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= folds.len() {
                        break;
                    }
                    if tx.send((i, run_fold(dataset, &folds[i], i, spec, cfg))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            let mut expected = 0;
            let mut first_err = None;
            for (i, res) in rx {
                pending.insert(i, res);
                while let Some(res) = pending.remove(&expected) {
                    expected += 1;
                    if first_err.is_some() {
                        continue;
                    }
                    if let Err(e) = res.and_then(&mut record) {
                        first_err = Some(e);
                        next.store(folds.len(), Ordering::SeqCst);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        })?;
    }
    Ok(EvalReport::new(spec.model_id(), hash, cfg.seed, dataset.viewer_count, entries))
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson", format!("lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Invalid("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    /// Segment-level continuous means.
    #[default]
    Continuous,
    /// Binary labels as 0/1.
    Binary,
}

/// Square matrix over targets, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub targets: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Mean over distinct viewer pairs, excluding the average-viewer row.
    pub fn mean_viewer_off_diagonal(&self) -> f64 {
        let v = self.targets.len() - 1;
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..v {
            for j in (i + 1)..v {
                sum += self.values[i][j];
                n += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(",{}\n", self.targets.join(","));
        for (name, row) in self.targets.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{name},{}", cells.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub movie_id: String,
    pub target: String,
    pub positive: usize,
    pub negative: usize,
    pub absent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mode: CorrelationMode,
    pub per_movie: Vec<(String, CorrelationMatrix)>,
    pub average: CorrelationMatrix,
    pub histograms: Vec<HistogramRow>,
}

pub fn histograms_to_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("movie,target,positive,negative,absent\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.movie_id, r.target, r.positive, r.negative, r.absent);
    }
    out
}

fn series(s: &LabeledSample, t: usize, mode: CorrelationMode) -> Option<f64> {
    match mode {
        CorrelationMode::Continuous => s.target_mean(t),
        CorrelationMode::Binary => s.target_label(t).map(Label::as_f64),
    }
}

/// Correlation between every pair of targets within one set of samples.
/// Pairs use the segments where both targets are present.
pub fn correlation_matrix(samples: &[&LabeledSample], viewer_count: usize, mode: CorrelationMode) -> Result<CorrelationMatrix> {
    let n = viewer_count + 1;
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        values[i][i] = 1.0;
        for j in (i + 1)..n {
            let (x, y): (Vec<f64>, Vec<f64>) =
                samples.iter().filter_map(|s| Some((series(s, i, mode)?, series(s, j, mode)?))).unzip();
            let r = pearson(&x, &y)?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { targets: (0..n).map(|t| target_name(t, viewer_count)).collect(), values })
}

/// Per-movie correlation matrices, their elementwise average, and label counts.
pub fn correlation_analysis(dataset: &Dataset, mode: CorrelationMode) -> Result<CorrelationReport> {
    let v = dataset.viewer_count;
    let mut per_movie = Vec::new();
    let mut histograms = Vec::new();
    for movie in &dataset.movies {
        let samples: Vec<&LabeledSample> = dataset.movie_samples(movie).collect();
        if samples.len() < 2 {
            return Err(Error::Invalid(format!("movie {movie} has {} segments, need at least 2", samples.len())));
        }
        per_movie.push((movie.clone(), correlation_matrix(&samples, v, mode)?));
        for t in 0..=v {
            let labels: Vec<_> = samples.iter().map(|s| s.target_label(t)).collect();
            let positive = labels.iter().filter(|l| **l == Some(Label::Positive)).count();
            let negative = labels.iter().filter(|l| **l == Some(Label::Negative)).count();
            histograms.push(HistogramRow {
                movie_id: movie.clone(),
                target: target_name(t, v),
                positive,
                negative,
                absent: labels.len() - positive - negative,
            });
        }
    }
    if per_movie.is_empty() {
        return Err(Error::Invalid("dataset has no movies".into()));
    }
    let n = v + 1;
    let mut avg = vec![vec![0.0; n]; n];
    for (_, m) in &per_movie {
        for i in 0..n {
            for j in 0..n {
                avg[i][j] += m.values[i][j];
            }
        }
    }
    let count = per_movie.len() as f64;
    for (i, row) in avg.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { 1.0 } else { *x / count };
        }
    }
    let average = CorrelationMatrix { targets: per_movie[0].1.targets.clone(), values: avg };
    Ok(CorrelationReport { mode, per_movie, average, histograms })
}
