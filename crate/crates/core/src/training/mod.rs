//! Class-weighted loss, L1 penalty, Adam, and the training loop.

mod adam;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::autodiff::{zero_grads, NodeId, Op, ParamStore, Tape, Tensor};
use crate::data::{target_name, Label, LabeledSample};
use crate::error::{Error, Result};
use crate::features::{tokenize_pad, Vocabulary};
use crate::model::{ModelInput, Network, ParamGroup};

/// Weights applied to positive and negative entries of one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub pos: f64,
    pub neg: f64,
}

impl TargetWeights {
    pub const UNIT: TargetWeights = TargetWeights { pos: 1.0, neg: 1.0 };

    pub fn of(&self, label: Label) -> f64 {
        match label {
            Label::Positive => self.pos,
            Label::Negative => self.neg,
        }
    }
}

/// Per-target weights, indexed by target (`0..V` viewers, `V` the average viewer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub targets: Vec<TargetWeights>,
}

/// Weights for one column of labels: `N/(2·N_pos)` and `N/(2·N_neg)` over present entries.
pub fn target_class_weights(labels: &[Option<Label>], name: &str) -> Result<TargetWeights> {
    let pos = labels.iter().flatten().filter(|l| l.is_positive()).count();
    let neg = labels.iter().flatten().count() - pos;
    if pos == 0 || neg == 0 {
        let only = if pos == 0 { "negative" } else { "positive" };
        return Err(Error::SingleClass(format!("target {name} has only {only} labels ({} present)", pos + neg)));
    }
    let n = (pos + neg) as f64;
    Ok(TargetWeights { pos: n / (2.0 * pos as f64), neg: n / (2.0 * neg as f64) })
}

/// Weights for every target, one label column per target.
pub fn compute_class_weights(columns: &[Vec<Option<Label>>]) -> Result<ClassWeights> {
    let viewers = columns.len().saturating_sub(1);
    let targets = columns
        .iter()
        .enumerate()
        .map(|(t, col)| target_class_weights(col, &target_name(t, viewers)))
        .collect::<Result<_>>()?;
    Ok(ClassWeights { targets })
}

/// Class-weighted log-loss over the present entries of one target.
pub fn weighted_bce(preds: &[f64], labels: &[Option<Label>], weights: TargetWeights) -> Result<f64> {
    let (ys, ws) = loss_columns(labels, weights);
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::new(vec![preds.len()], preds.to_vec())?);
    let loss = tape.apply(Op::WeightedBce { labels: ys, weights: ws }, &[p])?;
    Ok(tape.value(loss).item())
}

fn loss_columns(labels: &[Option<Label>], weights: TargetWeights) -> (Vec<f64>, Vec<f64>) {
    labels
        .iter()
        .map(|l| match l {
            Some(l) => (l.as_f64(), weights.of(*l)),
            None => (0.0, 0.0),
        })
        .unzip()
}

/// `λ · Σ|w|` over weight matrices and kernels; biases are not penalized.
pub fn l1_penalty(net: &Network, lambda: f64) -> f64 {
    let sum: f64 = net
        .params()
        .iter()
        .filter(|(id, _)| net.is_weight(*id))
        .map(|(_, p)| p.value.data().iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    lambda * sum
}

/// Label presence per sample and target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMask {
    rows: usize,
    targets: usize,
    present: Vec<bool>,
}

impl BatchMask {
    pub fn new(rows: usize, targets: usize, present: Vec<bool>) -> Result<Self> {
        if present.len() != rows * targets {
            return Err(Error::shape("batch mask", format!("{} bits for {rows}×{targets}", present.len())));
        }
        if !present.iter().any(|&b| b) {
            return Err(Error::EmptyMask);
        }
        Ok(Self { rows, targets, present })
    }

    pub fn from_batch(batch: &[&EncodedSample]) -> Result<Self> {
        let targets = batch.first().map_or(0, |s| s.labels.len());
        let present = batch.iter().flat_map(|s| s.labels.iter().map(Option::is_some)).collect();
        Self::new(batch.len(), targets, present)
    }

    pub fn get(&self, row: usize, target: usize) -> bool {
        self.present[row * self.targets + target]
    }

    pub fn any(&self, target: usize) -> bool {
        (0..self.rows).any(|r| self.get(r, target))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l1_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            l1_lambda: 1e-5,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.l1_lambda >= 0.0) {
            return bad("l1_lambda must be non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

/// A sample ready for the network: model input plus one optional label per target.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub input: ModelInput,
    pub labels: Vec<Option<Label>>,
}

pub fn encode_samples(samples: &[LabeledSample], vocab: &Vocabulary) -> Vec<EncodedSample> {
    samples
        .iter()
        .map(|s| EncodedSample {
            input: ModelInput { tokens: tokenize_pad(&s.segment.text, vocab), visual: s.visual.clone() },
            labels: (0..=s.viewer_count()).map(|t| s.target_label(t)).collect(),
        })
        .collect()
}

/// Class weights for the targets predicted by `net`'s branches, in branch order.
pub fn branch_class_weights(net: &Network, samples: &[EncodedSample]) -> Result<Vec<TargetWeights>> {
    let viewers = net.architecture().viewer_count;
    net.architecture()
        .branch_targets()
        .into_iter()
        .map(|t| {
            let col: Vec<_> = samples.iter().map(|s| s.labels[t]).collect();
            target_class_weights(&col, &target_name(t, viewers))
        })
        .collect()
}

/// Builds the masked training loss on `tape`.
///
/// Each branch with at least one present label contributes its weighted
/// log-loss; those are averaged. L1 covers the weights of the shared layers
/// and of the contributing branches only, so a branch without labels is left
/// off the loss graph entirely.
pub fn masked_loss(
    net: &Network,
    tape: &mut Tape,
    batch: &[&EncodedSample],
    weights: &[TargetWeights],
    l1_lambda: f64,
) -> Result<NodeId> {
    let inputs: Vec<&ModelInput> = batch.iter().map(|s| &s.input).collect();
    let outputs = net.forward_on_tape(tape, &inputs)?;
    let targets = net.architecture().branch_targets();
    let mut active = Vec::new();
    let mut losses = Vec::new();
    for (k, (&out, &t)) in outputs.iter().zip(&targets).enumerate() {
        let labels: Vec<_> = batch.iter().map(|s| s.labels[t]).collect();
        if labels.iter().all(Option::is_none) {
            continue;
        }
        let (ys, ws) = loss_columns(&labels, weights[k]);
        losses.push(tape.apply(Op::WeightedBce { labels: ys, weights: ws }, &[out])?);
        active.push(k);
    }
    if losses.is_empty() {
        return Err(Error::EmptyMask);
    }
    let stacked = if losses.len() == 1 { losses[0] } else { tape.concat(&losses)? };
    let mut loss = tape.reduce_mean(stacked)?;
    if l1_lambda > 0.0 {
        for (id, _) in net.params().iter() {
            let covered = match net.group(id) {
                ParamGroup::Shared => true,
                ParamGroup::Branch(k) => active.contains(&k),
            };
            if covered && net.is_weight(id) {
                let w = tape.param(net.params(), id);
                let pen = tape.apply(Op::L1Norm { lambda: l1_lambda }, &[w])?;
                loss = tape.add(loss, pen)?;
            }
        }
    }
    Ok(loss)
}

/// One optimizer step on one batch; returns the loss before the update.
pub fn train_step(
    net: &mut Network,
    state: &mut AdamState,
    batch: &[&EncodedSample],
    weights: &[TargetWeights],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = masked_loss(net, &mut tape, batch, weights, cfg.l1_lambda)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss {value} on a batch of {}", batch.len())));
    }
    tape.backward(loss)?;
    let params = net.params_mut();
    params.accumulate_grads(&tape);
    adam_step(params, state, &cfg.adam())?;
    zero_grads(params);
    Ok(value)
}

/// Accuracy (percent) of thresholded probabilities over present labels.
pub fn masked_accuracy(preds: &[f64], labels: &[Option<Label>], threshold: f64) -> Option<f64> {
    let mut correct = 0usize;
    let mut present = 0usize;
    for (&p, l) in preds.iter().zip(labels) {
        if let Some(l) = l {
            present += 1;
            if (p > threshold) == l.is_positive() {
                correct += 1;
            }
        }
    }
    (present > 0).then(|| 100.0 * correct as f64 / present as f64)
}

/// Per-branch accuracy of `net` on `samples`.
pub fn branch_accuracies(net: &Network, samples: &[EncodedSample], threshold: f64) -> Result<Vec<Option<f64>>> {
    let inputs: Vec<&ModelInput> = samples.iter().map(|s| &s.input).collect();
    let preds = net.predict(&inputs, 256)?;
    Ok(net
        .architecture()
        .branch_targets()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let p: Vec<f64> = preds.iter().map(|row| row[k]).collect();
            let l: Vec<_> = samples.iter().map(|s| s.labels[t]).collect();
            masked_accuracy(&p, &l, threshold)
        })
        .collect())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation accuracy per branch target name; `null` when that target has no labels.
    pub val_accuracy: Vec<(String, Option<f64>)>,
    pub events: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub log: Vec<EpochLog>,
    /// Optimizer state at the selected epoch.
    pub optimizer: AdamState,
}

/// Trains `net` in place and leaves it holding the selected epoch's parameters.
///
/// Selection uses validation accuracy of the average-viewer branch (for ST,
/// its single branch); ties keep the earlier epoch. With an empty validation
/// set the last epoch is kept and no early stopping happens.
pub fn train(net: &mut Network, train_set: &[EncodedSample], val_set: &[EncodedSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let weights = branch_class_weights(net, train_set)?;
    let arch = net.architecture().clone();
    let names: Vec<String> =
        arch.branch_targets().into_iter().map(|t| target_name(t, arch.viewer_count)).collect();
    let select_branch = arch.branches() - 1;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(net.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, Option<f64>, ParamStore, AdamState)> = None;
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let loss = match train_step(net, &mut state, &batch, &weights, cfg) {
                Err(Error::EmptyMask) => continue,
                Err(Error::NonFiniteLoss(m)) => {
                    return Err(Error::NonFiniteLoss(format!("epoch {epoch}, batch {b}: {m}")));
                }
                other => other?,
            };
            total += loss;
            batches += 1;
        }
        let train_loss = if batches > 0 { total / batches as f64 } else { f64::NAN };

        let mut events = Vec::new();
        let val_accuracy = if val_set.is_empty() {
            vec![None; names.len()]
        } else {
            branch_accuracies(net, val_set, 0.5)?
        };
        let score = val_accuracy[select_branch];
        let improved = match &best {
            None => true,
            Some(_) if val_set.is_empty() => true,
            Some((_, prev, _, _)) => match (score, prev) {
                (Some(s), Some(p)) => s > *p,
                (Some(_), None) => true,
                _ => false,
            },
        };
        if improved {
            best = Some((epoch, score, net.params().clone(), state.clone()));
            stale = 0;
            events.push("best".to_string());
        } else {
            stale += 1;
        }
        let stop = !val_set.is_empty() && stale >= cfg.patience;
        if stop {
            events.push("early_stop".to_string());
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy: names.iter().cloned().zip(val_accuracy).collect(),
            events,
        });
        if stop {
            break;
        }
    }

    let (best_epoch, best_val_accuracy, params, optimizer) = best.expect("at least one epoch ran");
    *net.params_mut() = params;
    Ok(TrainOutcome { best_epoch, best_val_accuracy, log, optimizer })
}
