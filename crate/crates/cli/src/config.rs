use std::path::{Path, PathBuf};

use emt_core::data::SynthConfig;
use emt_core::eval::{builtin_folds, config_hash, CorrelationMode, FoldPlan, ModelSpec, Protocol};
use emt_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run depends on. Loaded from `--config`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub protocol: Protocol,
    /// Explicit folds; when set they replace the protocol's.
    pub folds: Option<Vec<FoldPlan>>,
    /// Fold used by `train` and `eval`; defaults to the first.
    pub fold: Option<String>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub checkpoints: Vec<PathBuf>,
    pub correlation_mode: CorrelationMode,
    pub outdir: PathBuf,
    /// Seeds training and synthesis; copied into `train.seed` and `synth.seed`.
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            protocol: Protocol::Table1,
            folds: None,
            fold: None,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            checkpoints: Vec::new(),
            correlation_mode: CorrelationMode::Continuous,
            outdir: PathBuf::from("runs"),
            seed: 0,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Propagates the top-level seed and checks the parts every command uses.
    pub fn resolve(mut self) -> Result<Self, String> {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.train.validate().map_err(|e| e.to_string())?;
        self.synth.validate().map_err(|e| e.to_string())?;
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.model.decision_threshold) {
            return Err("decision_threshold must lie in [0, 1)".into());
        }
        Ok(self)
    }

    pub fn fold_plans(&self) -> Vec<FoldPlan> {
        self.folds.clone().unwrap_or_else(|| builtin_folds(self.protocol))
    }

    pub fn selected_fold(&self) -> Result<(usize, FoldPlan), String> {
        let plans = self.fold_plans();
        match &self.fold {
            None => plans.into_iter().next().map(|f| (0, f)).ok_or_else(|| "no folds configured".to_string()),
            Some(id) => plans
                .into_iter()
                .enumerate()
                .find(|(_, f)| &f.fold_id == id)
                .ok_or_else(|| format!("unknown fold `{id}`")),
        }
    }

    /// Hash of the settings that determine a run's results. The output
    /// directory and worker count are excluded.
    pub fn hash(&self, command: &str) -> String {
        let mut canonical = self.clone();
        canonical.outdir = PathBuf::new();
        canonical.workers = 1;
        config_hash(&(command, &canonical)).expect("config serializes")
    }
}
