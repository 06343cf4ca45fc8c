//! Single-task (ST) and multi-task (MT) networks.
//!
//! Both share the same backbones: a learned word embedding followed by
//! conv/max-pool stages and a global max over positions for text, and the
//! pooled visual feature vector as-is. Modality outputs are concatenated.
//! ST then runs one fully connected head to a single sigmoid output. MT runs
//! a shared trunk and one head per viewer plus one for the average viewer.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, FORMAT_VERSION};

use crate::autodiff::{NodeId, Op, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::features::{TokenSeq, MAX_TOKENS};

pub const ST_HEAD_WIDTHS: [usize; 3] = [1024, 512, 256];
pub const MT_TRUNK_WIDTHS: [usize; 2] = [2048, 1024];
pub const MT_BRANCH_WIDTHS: [usize; 3] = [512, 256, 128];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    St,
    Mt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modalities {
    Text,
    Visual,
    Both,
}

impl Modalities {
    pub fn text(self) -> bool {
        matches!(self, Modalities::Text | Modalities::Both)
    }

    pub fn visual(self) -> bool {
        matches!(self, Modalities::Visual | Modalities::Both)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "st" => Ok(ModelKind::St),
            "mt" => Ok(ModelKind::Mt),
            _ => Err(Error::Invalid(format!("unknown model kind `{s}` (expected st or mt)"))),
        }
    }
}

impl std::str::FromStr for Modalities {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modalities::Text),
            "visual" => Ok(Modalities::Visual),
            "both" => Ok(Modalities::Both),
            _ => Err(Error::Invalid(format!("unknown modality `{s}` (expected text, visual or both)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub kernel_width: usize,
    pub out_channels: usize,
    pub pool_width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub conv_stages: Vec<ConvStage>,
    pub feature_dim: usize,
}

impl BackboneConfig {
    /// Two stages of (width 3, 64 then 128 channels, pool 2) on 64-d embeddings.
    pub fn with_defaults(vocab_size: usize, feature_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 64,
            conv_stages: vec![
                ConvStage { kernel_width: 3, out_channels: 64, pool_width: 2 },
                ConvStage { kernel_width: 3, out_channels: 128, pool_width: 2 },
            ],
            feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_stages.is_empty() {
            return Err(Error::Invalid("the text backbone needs at least one conv stage".into()));
        }
        if self.vocab_size < 2 || self.embed_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Invalid("vocab_size, embed_dim and feature_dim must be positive".into()));
        }
        let mut len = MAX_TOKENS;
        for (i, s) in self.conv_stages.iter().enumerate() {
            if s.kernel_width == 0 || s.out_channels == 0 || s.pool_width == 0 {
                return Err(Error::Invalid(format!("conv stage {i} has a zero size")));
            }
            if len < s.kernel_width {
                return Err(Error::Invalid(format!("conv stage {i}: sequence length {len} < kernel width")));
            }
            len -= s.kernel_width - 1;
            if len < s.pool_width {
                return Err(Error::Invalid(format!("conv stage {i}: sequence length {len} < pool width")));
            }
            len /= s.pool_width;
        }
        Ok(())
    }

    pub fn text_dim(&self) -> usize {
        self.conv_stages.last().map_or(0, |s| s.out_channels)
    }
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    pub modalities: Modalities,
    pub backbone: BackboneConfig,
    /// Shared layers after fusion (MT only).
    pub trunk: Vec<usize>,
    /// Hidden widths of each output head.
    pub head: Vec<usize>,
    pub viewer_count: usize,
    /// Target modelled by an ST network: a viewer index, or `viewer_count`
    /// for the average viewer.
    pub target: Option<usize>,
}

impl Architecture {
    pub fn st(backbone: BackboneConfig, modalities: Modalities, viewer_count: usize, target: usize) -> Self {
        Self {
            kind: ModelKind::St,
            modalities,
            backbone,
            trunk: Vec::new(),
            head: ST_HEAD_WIDTHS.to_vec(),
            viewer_count,
            target: Some(target),
        }
    }

    pub fn mt(backbone: BackboneConfig, modalities: Modalities, viewer_count: usize) -> Self {
        Self {
            kind: ModelKind::Mt,
            modalities,
            backbone,
            trunk: MT_TRUNK_WIDTHS.to_vec(),
            head: MT_BRANCH_WIDTHS.to_vec(),
            viewer_count,
            target: None,
        }
    }

    /// Output branches: one for ST, `V + 1` for MT (the last is the average viewer).
    pub fn branches(&self) -> usize {
        match self.kind {
            ModelKind::St => 1,
            ModelKind::Mt => self.viewer_count + 1,
        }
    }

    /// Target index predicted by each branch.
    pub fn branch_targets(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::St => vec![self.target.unwrap_or(self.viewer_count)],
            ModelKind::Mt => (0..=self.viewer_count).collect(),
        }
    }

    pub fn fused_dim(&self) -> usize {
        let text = if self.modalities.text() { self.backbone.text_dim() } else { 0 };
        let visual = if self.modalities.visual() { self.backbone.feature_dim } else { 0 };
        text + visual
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.viewer_count == 0 {
            return Err(Error::Invalid("viewer count must be at least 1".into()));
        }
        if self.trunk.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(Error::Invalid("layer widths must be positive".into()));
        }
        match (self.kind, self.target) {
            (ModelKind::St, Some(t)) if t <= self.viewer_count => {}
            (ModelKind::St, _) => return Err(Error::Invalid("ST target index out of range".into())),
            (ModelKind::Mt, None) => {}
            (ModelKind::Mt, Some(_)) => return Err(Error::Invalid("MT networks have no single target".into())),
        }
        if self.kind == ModelKind::St && !self.trunk.is_empty() {
            return Err(Error::Invalid("ST networks have no shared trunk".into()));
        }
        Ok(())
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Shared,
    Branch(usize),
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
    pool: usize,
}

/// One input example: padded token ids plus the pooled visual feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tokens: TokenSeq,
    pub visual: Vec<f64>,
}

/// A built network: architecture plus its named parameters.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    params: ParamStore,
    groups: Vec<ParamGroup>,
    embedding: Option<ParamId>,
    convs: Vec<ConvLayer>,
    trunk: Vec<Dense>,
    /// Per branch: hidden layers followed by the output layer.
    branches: Vec<Vec<Dense>>,
}

struct Builder {
    rng: ChaCha8Rng,
    params: ParamStore,
    groups: Vec<ParamGroup>,
}

impl Builder {
    fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize, group: ParamGroup) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data)?, group)
    }

    fn push(&mut self, name: String, value: Tensor, group: ParamGroup) -> Result<ParamId> {
        let id = self.params.add(name, value)?;
        self.groups.push(group);
        Ok(id)
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Result<Dense> {
        let weight = self.uniform(format!("{prefix}.weight"), &[fan_in, fan_out], fan_in, fan_out, group)?;
        let bias = self.push(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]), group)?;
        Ok(Dense { weight, bias })
    }
}

impl Network {
    /// Builds and deterministically initializes a network for `arch`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut b = Builder { rng: ChaCha8Rng::seed_from_u64(seed), params: ParamStore::new(), groups: Vec::new() };
        let bb = &arch.backbone;

        let mut embedding = None;
        let mut convs = Vec::new();
        if arch.modalities.text() {
            let (v, d) = (bb.vocab_size, bb.embed_dim);
            embedding = Some(b.uniform("text.embedding.weight".into(), &[v, d], v, d, ParamGroup::Shared)?);
            let mut channels = d;
            for (i, s) in bb.conv_stages.iter().enumerate() {
                let (k, co) = (s.kernel_width, s.out_channels);
                let kernel =
                    b.uniform(format!("text.conv{i}.weight"), &[k, channels, co], k * channels, k * co, ParamGroup::Shared)?;
                let bias = b.push(format!("text.conv{i}.bias"), Tensor::zeros(&[co]), ParamGroup::Shared)?;
                convs.push(ConvLayer { kernel, bias, stride: 1, pool: s.pool_width });
                channels = co;
            }
        }

        let mut width = arch.fused_dim();
        let mut trunk = Vec::new();
        for (i, &w) in arch.trunk.iter().enumerate() {
            trunk.push(b.dense(&format!("trunk.fc{i}"), width, w, ParamGroup::Shared)?);
            width = w;
        }
        let mut branches = Vec::new();
        for k in 0..arch.branches() {
            let prefix = match arch.kind {
                ModelKind::St => "head".to_string(),
                ModelKind::Mt => format!("branch{k}"),
            };
            let group = ParamGroup::Branch(k);
            let mut layers = Vec::new();
            let mut w_in = width;
            for (i, &w) in arch.head.iter().enumerate() {
                layers.push(b.dense(&format!("{prefix}.fc{i}"), w_in, w, group)?);
                w_in = w;
            }
            layers.push(b.dense(&format!("{prefix}.out"), w_in, 1, group)?);
            branches.push(layers);
        }

        Ok(Self { arch, params: b.params, groups: b.groups, embedding, convs, trunk, branches })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    /// Weight matrices and kernels; biases are excluded.
    pub fn is_weight(&self, id: ParamId) -> bool {
        self.params.get(id).name.ends_with(".weight")
    }

    pub fn branch_params(&self, branch: usize) -> Vec<ParamId> {
        self.params.ids().filter(|&id| self.group(id) == ParamGroup::Branch(branch)).collect()
    }

    pub fn shared_params(&self) -> Vec<ParamId> {
        self.params.ids().filter(|&id| self.group(id) == ParamGroup::Shared).collect()
    }

    /// Parameter count of the fully connected head(s) and trunk, biases included.
    pub fn head_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, p)| !p.name.starts_with("text."))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    fn dense(&self, tape: &mut Tape, x: NodeId, layer: Dense) -> Result<NodeId> {
        let w = tape.param(&self.params, layer.weight);
        let b = tape.param(&self.params, layer.bias);
        tape.linear(x, w, b)
    }

    /// Records the forward pass; returns one `[B, 1]` probability node per branch.
    pub fn forward_on_tape(&self, tape: &mut Tape, batch: &[&ModelInput]) -> Result<Vec<NodeId>> {
        if batch.is_empty() {
            return Err(Error::Invalid("forward needs a non-empty batch".into()));
        }
        let n = batch.len();
        let mut parts = Vec::with_capacity(2);
        if let Some(table) = self.embedding {
            let ids: Vec<usize> = batch.iter().flat_map(|x| x.tokens.ids().iter().copied()).collect();
            let table = tape.param(&self.params, table);
            let mut h = tape.apply(Op::Embedding { ids, batch: n, len: MAX_TOKENS }, &[table])?;
            for conv in &self.convs {
                let k = tape.param(&self.params, conv.kernel);
                let b = tape.param(&self.params, conv.bias);
                h = tape.apply(Op::Conv1d { stride: conv.stride }, &[h, k, b])?;
                h = tape.relu(h)?;
                h = tape.apply(Op::MaxPool1d { width: conv.pool }, &[h])?;
            }
            parts.push(tape.apply(Op::TemporalMaxPool, &[h])?);
        }
        if self.arch.modalities.visual() {
            let dim = self.arch.backbone.feature_dim;
            if let Some(x) = batch.iter().find(|x| x.visual.len() != dim) {
                return Err(Error::shape("visual input", format!("{} features, expected {dim}", x.visual.len())));
            }
            let data = batch.iter().flat_map(|x| x.visual.iter().copied()).collect();
            parts.push(tape.constant(Tensor::new(vec![n, dim], data)?));
        }
        let mut h = if parts.len() == 1 { parts[0] } else { tape.concat(&parts)? };
        for &layer in &self.trunk {
            h = self.dense(tape, h, layer)?;
            h = tape.relu(h)?;
        }
        let mut outputs = Vec::with_capacity(self.branches.len());
        for layers in &self.branches {
            let mut z = h;
            let (out, hidden) = layers.split_last().expect("every branch has an output layer");
            for &layer in hidden {
                z = self.dense(tape, z, layer)?;
                z = tape.relu(z)?;
            }
            z = self.dense(tape, z, *out)?;
            outputs.push(tape.sigmoid(z)?);
        }
        Ok(outputs)
    }

    /// Probabilities per sample, one per branch.
    pub fn forward(&self, batch: &[&ModelInput]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let outputs = self.forward_on_tape(&mut tape, batch)?;
        Ok((0..batch.len()).map(|i| outputs.iter().map(|&o| tape.value(o).data()[i]).collect()).collect())
    }

    /// Forward pass in fixed-size chunks.
    pub fn predict(&self, inputs: &[&ModelInput], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for part in inputs.chunks(chunk.max(1)) {
            out.extend(self.forward(part)?);
        }
        Ok(out)
    }
}

/// ST network with the default head widths, predicting `target`.
pub fn build_st(
    cfg: &BackboneConfig,
    seed: u64,
    modalities: Modalities,
    viewer_count: usize,
    target: usize,
) -> Result<Network> {
    Network::new(Architecture::st(cfg.clone(), modalities, viewer_count, target), seed)
}

/// MT network with `viewer_count + 1` branches, the last for the average viewer.
pub fn build_mt(cfg: &BackboneConfig, viewer_count: usize, seed: u64, modalities: Modalities) -> Result<Network> {
    if viewer_count == 0 {
        return Err(Error::Invalid("MT networks need at least one viewer".into()));
    }
    Network::new(Architecture::mt(cfg.clone(), modalities, viewer_count), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_backbone() -> BackboneConfig {
        BackboneConfig {
            vocab_size: 10,
            embed_dim: 4,
            conv_stages: vec![ConvStage { kernel_width: 3, out_channels: 3, pool_width: 2 }],
            feature_dim: 5,
        }
    }

    #[test]
    fn backbone_validation_tracks_sequence_length() {
        let mut cfg = tiny_backbone();
        cfg.conv_stages = vec![ConvStage { kernel_width: 19, out_channels: 2, pool_width: 1 }];
        assert!(cfg.validate().is_err());
        cfg.conv_stages.clear();
        assert!(cfg.validate().is_err());
        assert!(BackboneConfig::with_defaults(100, 1024).validate().is_ok());
    }

    #[test]
    fn single_modality_fused_dims() {
        let cfg = tiny_backbone();
        let text = Architecture::st(cfg.clone(), Modalities::Text, 2, 2);
        let visual = Architecture::st(cfg.clone(), Modalities::Visual, 2, 2);
        let both = Architecture::st(cfg, Modalities::Both, 2, 2);
        assert_eq!((text.fused_dim(), visual.fused_dim(), both.fused_dim()), (3, 5, 8));
        let net = Network::new(visual, 0).unwrap();
        assert!(net.params().by_name("text.embedding.weight").is_none());
    }

    #[test]
    fn mt_rejects_zero_viewers() {
        assert!(build_mt(&tiny_backbone(), 0, 0, Modalities::Both).is_err());
    }

    #[test]
    fn groups_follow_names() {
        let net = build_mt(&tiny_backbone(), 2, 0, Modalities::Both).unwrap();
        for (id, p) in net.params().iter() {
            let expected = match p.name.strip_prefix("branch") {
                Some(rest) => ParamGroup::Branch(rest.split('.').next().unwrap().parse().unwrap()),
                None => ParamGroup::Shared,
            };
            assert_eq!(net.group(id), expected, "{}", p.name);
        }
    }
}
