//! The `emt` command: synthesis, ingestion, training, evaluation and analysis
//! runs driven by one JSON config, with flags taking precedence.

mod config;

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use emt_core::data::{build_dataset, synth_corpus, target_name, Dataset, DatasetManifest};
use emt_core::eval::{
    correlation_analysis, cross_validate, evaluate_network, folds_to_csv, histograms_to_csv, reference_reports,
    reports_to_csv, run_fold, CorrelationMode, EvalReport, FoldAccuracy, FoldPlan, FoldRun, ModelSpec, Protocol,
};
use emt_core::model::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelKind, Modalities};
use emt_core::training::{encode_samples, EpochLog};
use serde::Serialize;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "emt", version, about = "Evoked-valence experiments with single-task and multi-task models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long, global = true, value_enum)]
    pub model: Option<KindArg>,
    #[arg(long, global = true, value_enum)]
    pub modality: Option<ModalityArg>,
    #[arg(long, global = true)]
    pub outdir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Dataset manifest (ingest, train, eval, crossval, analyze).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Fold id for train and eval.
    #[arg(long, global = true)]
    pub fold: Option<String>,
    /// Checkpoint to evaluate; repeat for per-target ST checkpoints.
    #[arg(long = "checkpoint", global = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Correlation input for analyze.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    Synth,
    /// Validate a manifest and print dataset statistics.
    Ingest,
    /// Print the selected protocol's folds.
    Folds,
    /// Train on one fold and write checkpoints and training logs.
    Train,
    /// Evaluate checkpoints on one fold's test movies.
    Eval,
    /// Train and test every fold.
    Crossval,
    /// Write correlation matrices and label histograms.
    Analyze,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Folds => "folds",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Crossval => "crossval",
            Command::Analyze => "analyze",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Table1,
    Baseline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    St,
    Mt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModalityArg {
    Text,
    Visual,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Continuous,
    Binary,
}

/// How a run failed; maps to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or inputs (exit 1).
    Validation(String),
    /// Anything that went wrong while executing (exit 2).
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

fn invalid(e: impl Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses arguments, runs the command, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("emt {}: {f}", cli.command.name());
            f.exit_code()
        }
    }
}

/// Merges the config file and flags into the effective configuration.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Validation)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.protocol {
        cfg.protocol = match p {
            ProtocolArg::Table1 => Protocol::Table1,
            ProtocolArg::Baseline => Protocol::Baseline,
        };
        cfg.folds = None;
    }
    if let Some(k) = cli.model {
        cfg.model.kind = match k {
            KindArg::St => ModelKind::St,
            KindArg::Mt => ModelKind::Mt,
        };
    }
    if let Some(m) = cli.modality {
        cfg.model.modalities = match m {
            ModalityArg::Text => Modalities::Text,
            ModalityArg::Visual => Modalities::Visual,
            ModalityArg::Both => Modalities::Both,
        };
    }
    if let Some(o) = &cli.outdir {
        cfg.outdir = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(m) = &cli.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(f) = &cli.fold {
        cfg.fold = Some(f.clone());
    }
    if !cli.checkpoints.is_empty() {
        cfg.checkpoints = cli.checkpoints.clone();
    }
    if let Some(m) = cli.mode {
        cfg.correlation_mode = match m {
            ModeArg::Continuous => CorrelationMode::Continuous,
            ModeArg::Binary => CorrelationMode::Binary,
        };
    }
    cfg.resolve().map_err(Failure::Validation)
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = effective_config(cli)?;
    let ctx = RunContext::new(cli.command, cfg);
    match cli.command {
        Command::Synth => ctx.synth(),
        Command::Ingest => ctx.ingest(),
        Command::Folds => ctx.folds(),
        Command::Train => ctx.train(),
        Command::Eval => ctx.eval(),
        Command::Crossval => ctx.crossval(),
        Command::Analyze => ctx.analyze(),
    }
}

struct RunContext {
    command: Command,
    cfg: RunConfig,
    hash: String,
}

#[derive(Serialize)]
struct Recorded<'a> {
    command: &'static str,
    config_hash: &'a str,
    seed: u64,
    config: RunConfig,
}

impl RunContext {
    fn new(command: Command, cfg: RunConfig) -> Self {
        let hash = cfg.hash(command.name());
        Self { command, cfg, hash }
    }

    fn run_id(&self) -> &str {
        &self.hash[..12]
    }

    /// Creates `<outdir>/<run-id>/` and records the effective config in it.
    fn run_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self.cfg.outdir.join(self.run_id());
        std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        let mut recorded = self.cfg.clone();
        recorded.outdir = PathBuf::new();
        recorded.workers = 1;
        let doc = Recorded { command: self.command.name(), config_hash: &self.hash, seed: self.cfg.seed, config: recorded };
        write_file(&dir.join("config.json"), &to_json(&doc)?)?;
        Ok(dir)
    }

    fn meta(&self, epoch: Option<usize>) -> CheckpointMeta {
        CheckpointMeta { seed: self.cfg.seed, config_hash: self.hash.clone(), epoch }
    }

    fn dataset(&self) -> Result<Dataset, Failure> {
        let path = self.cfg.manifest.as_ref().ok_or_else(|| invalid("a manifest is required (--manifest)"))?;
        let manifest = DatasetManifest::load(path).map_err(invalid)?;
        manifest.validate().map_err(invalid)?;
        build_dataset(&manifest).map_err(invalid)
    }

    fn checked_folds(&self, dataset: &Dataset) -> Result<Vec<FoldPlan>, Failure> {
        let plans = self.cfg.fold_plans();
        for f in &plans {
            f.validate(&dataset.movies).map_err(invalid)?;
        }
        Ok(plans)
    }

    fn synth(&self) -> Result<(), Failure> {
        let corpus = synth_corpus(&self.cfg.synth).map_err(invalid)?;
        let dir = self.run_dir()?;
        let manifest = corpus.write(&dir.join("corpus")).map_err(runtime)?;
        println!("{}", manifest.display());
        Ok(())
    }

    fn ingest(&self) -> Result<(), Failure> {
        let ds = self.dataset()?;
        let v = ds.viewer_count;
        println!("movies {}  segments {}  viewers {}  feature_dim {}", ds.movies.len(), ds.samples.len(), v, ds.feature_dim());
        for movie in &ds.movies {
            let samples: Vec<_> = ds.movie_samples(movie).collect();
            let fractions: Vec<String> = (0..=v)
                .map(|t| {
                    let present: Vec<_> = samples.iter().filter_map(|s| s.target_label(t)).collect();
                    let pos = present.iter().filter(|l| l.is_positive()).count();
                    if present.is_empty() {
                        format!("{}=n/a", target_name(t, v))
                    } else {
                        format!("{}={:.1}%", target_name(t, v), 100.0 * pos as f64 / present.len() as f64)
                    }
                })
                .collect();
            println!("{movie}  segments {}  positive {}", samples.len(), fractions.join(" "));
        }
        Ok(())
    }

    fn folds(&self) -> Result<(), Failure> {
        for f in self.cfg.fold_plans() {
            println!("{}", f.display_line());
        }
        Ok(())
    }

    fn model_name(&self, run: &FoldRun, k: usize) -> String {
        let net = &run.models[k].network;
        let arch = net.architecture();
        match arch.target {
            Some(t) => format!("{}-{}", self.cfg.model.model_id(), target_name(t, arch.viewer_count)),
            None => self.cfg.model.model_id(),
        }
    }

    /// Writes every model of a fold run as `<ckpt_dir>/<name>.emt` with its log.
    fn write_fold(&self, run: &FoldRun, ckpt_dir: &Path, log_dir: &Path) -> Result<(), Failure> {
        for dir in [ckpt_dir, log_dir] {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        }
        for (k, model) in run.models.iter().enumerate() {
            let name = self.model_name(run, k);
            let ckpt = Checkpoint::from_network(
                &model.network,
                Some(run.vocabulary.clone()),
                self.meta(Some(model.outcome.best_epoch)),
                Some(model.outcome.optimizer.clone()),
            );
            save_checkpoint(&ckpt, &ckpt_dir.join(format!("{name}.emt"))).map_err(runtime)?;
            write_file(&log_dir.join(format!("{name}.jsonl")), &self.log_lines(&model.outcome.log)?)?;
        }
        Ok(())
    }

    fn log_lines(&self, log: &[EpochLog]) -> Result<String, Failure> {
        let mut out = String::new();
        for entry in log {
            let mut value = serde_json::to_value(entry).map_err(runtime)?;
            value["config_hash"] = self.hash.clone().into();
            value["seed"] = self.cfg.seed.into();
            out.push_str(&serde_json::to_string(&value).map_err(runtime)?);
            out.push('\n');
        }
        Ok(out)
    }

    fn train(&self) -> Result<(), Failure> {
        let ds = self.dataset()?;
        self.checked_folds(&ds)?;
        let (index, fold) = self.cfg.selected_fold().map_err(invalid)?;
        let dir = self.run_dir()?;
        let run = run_fold(&ds, &fold, index, &self.cfg.model, &self.cfg.train).map_err(runtime)?;
        self.write_fold(&run, &dir.join("checkpoints"), &dir.join("logs"))?;
        for (k, m) in run.models.iter().enumerate() {
            let acc = m.outcome.best_val_accuracy.map_or("n/a".to_string(), |a| format!("{a:.2}"));
            println!("{}  best epoch {}  validation accuracy {acc}", self.model_name(&run, k), m.outcome.best_epoch);
        }
        println!("{}", dir.display());
        Ok(())
    }

    fn eval(&self) -> Result<(), Failure> {
        let ds = self.dataset()?;
        self.checked_folds(&ds)?;
        let (_, fold) = self.cfg.selected_fold().map_err(invalid)?;
        if self.cfg.checkpoints.is_empty() {
            return Err(invalid("at least one --checkpoint is required"));
        }
        let mut accuracy = vec![None; ds.viewer_count + 1];
        let mut model_id = None;
        for path in &self.cfg.checkpoints {
            let ckpt = load_checkpoint(path).map_err(invalid)?;
            let net = ckpt.restore(None).map_err(invalid)?;
            if net.architecture().viewer_count != ds.viewer_count {
                return Err(invalid(format!("{} was trained for a different viewer count", path.display())));
            }
            let vocab = ckpt.vocabulary.as_ref().ok_or_else(|| invalid(format!("{} has no vocabulary", path.display())))?;
            let test = encode_samples(&ds.for_movies(&fold.test), vocab);
            let arch = net.architecture();
            model_id.get_or_insert(ModelSpec { kind: arch.kind, modalities: arch.modalities, ..Default::default() }.model_id());
            for (t, acc) in evaluate_network(&net, &test, self.cfg.model.decision_threshold).map_err(runtime)?.into_iter().enumerate() {
                if acc.is_some() {
                    accuracy[t] = acc;
                }
            }
        }
        let report = EvalReport::new(
            model_id.unwrap_or_default(),
            self.hash.clone(),
            self.cfg.seed,
            ds.viewer_count,
            vec![FoldAccuracy { fold_id: fold.fold_id.clone(), accuracy }],
        );
        let dir = self.run_dir()?;
        write_file(&dir.join("report.json"), &report.to_json().map_err(runtime)?)?;
        write_file(&dir.join("report.csv"), &reports_to_csv(std::slice::from_ref(&report)))?;
        print!("{}", reports_to_csv(std::slice::from_ref(&report)));
        Ok(())
    }

    fn crossval(&self) -> Result<(), Failure> {
        let ds = self.dataset()?;
        let folds = self.checked_folds(&ds)?;
        let dir = self.run_dir()?;
        let mut sink = |run: &FoldRun| {
            self.write_fold(run, &dir.join("checkpoints").join(&run.fold.fold_id), &dir.join("logs").join(&run.fold.fold_id))
                .map_err(|f| emt_core::Error::Invalid(f.to_string()))?;
            eprintln!("fold {} done", run.fold.fold_id);
            Ok(())
        };
        let mut report =
            cross_validate(&ds, &folds, &self.cfg.model, &self.cfg.train, self.cfg.workers, &mut sink).map_err(runtime)?;
        report.config_hash = self.hash.clone();
        let mut rows = reference_reports(&ds, &folds, self.cfg.seed, &self.hash).map_err(runtime)?;
        rows.push(report.clone());
        write_file(&dir.join("report.json"), &report.to_json().map_err(runtime)?)?;
        write_file(&dir.join("report.csv"), &reports_to_csv(&rows))?;
        write_file(&dir.join("folds.csv"), &folds_to_csv(&report))?;
        print!("{}", reports_to_csv(&rows));
        println!("{}", dir.display());
        Ok(())
    }

    fn analyze(&self) -> Result<(), Failure> {
        let ds = self.dataset()?;
        let analysis = correlation_analysis(&ds, self.cfg.correlation_mode).map_err(runtime)?;
        let dir = self.run_dir()?;
        let header = format!("# config_hash={} seed={}\n", self.hash, self.cfg.seed);
        write_file(&dir.join("correlation_average.csv"), &(header.clone() + &analysis.average.to_csv()))?;
        for (movie, m) in &analysis.per_movie {
            write_file(&dir.join(format!("correlation_{movie}.csv")), &(header.clone() + &m.to_csv()))?;
        }
        write_file(&dir.join("histograms.csv"), &(header + &histograms_to_csv(&analysis.histograms)))?;
        print!("{}", analysis.average.to_csv());
        println!("mean viewer-pair correlation {:.4}", analysis.average.mean_viewer_off_diagonal());
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(runtime)
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    let mut f = std::fs::File::create(path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes()).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}
