//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use emt_core::autodiff::{NodeId, Tape, Tensor};

/// Central finite-difference gradient of `f` with respect to every input.
///
/// `f` builds a fresh graph from plain tensors and returns the scalar loss,
/// so this oracle never touches the reverse sweep it is checking.
pub fn numeric_grads(inputs: &[Tensor], step: f64, f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.to_vec();
                let mut data = perturbed[i].data().to_vec();
                data[j] += delta;
                perturbed[i] = Tensor::new(inputs[i].shape().to_vec(), data).unwrap();
                f(&perturbed)
            };
            g.push((eval(step) - eval(-step)) / (2.0 * step));
        }
        grads.push(g);
    }
    grads
}

/// Reverse-mode gradients of the same graph.
pub fn analytic_grads(
    inputs: &[Tensor],
    build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId,
) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).unwrap();
    ids.iter()
        .zip(inputs)
        .map(|(&id, t)| match tape.grad(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; t.numel()],
        })
        .collect()
}

pub fn forward_value(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    tape.value(loss).item()
}

/// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>], floor: f64) -> f64 {
    analytic
        .iter()
        .flatten()
        .zip(numeric.iter().flatten())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Runs both routes and returns the worst relative error.
pub fn gradcheck(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId) -> f64 {
    let analytic = analytic_grads(inputs, build);
    let numeric = numeric_grads(inputs, 1e-6, &|ts| forward_value(ts, build));
    max_relative_error(&analytic, &numeric, 1e-3)
}

use emt_core::autodiff::{Op, Primitive};
use rand::Rng;

pub type Build = Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>;

fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values whose magnitudes stay at least `margin` away from zero.
fn rand_away_from_zero(rng: &mut impl Rng, shape: &[usize], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(margin..1.5);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values on a shuffled grid, so pooled maxima never tie or swap
/// under a 1e-6 perturbation.
fn rand_distinct(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    for i in (1..n).rev() {
        data.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Projects a primitive's output onto a fixed random direction so every
/// primitive can be checked through a scalar loss.
fn projected(op: Op, out_shape_seed: u64) -> Build {
    Box::new(move |tape: &mut Tape, ids: &[NodeId]| {
        let out = tape.apply(op.clone(), ids).unwrap();
        let shape = tape.value(out).shape().to_vec();
        if shape == [1] {
            return out;
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(out_shape_seed);
        let r = tape.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
        let prod = tape.mul(out, r).unwrap();
        tape.reduce_sum(prod).unwrap()
    })
}

/// One random gradient-check case for `kind`.
pub fn primitive_case(kind: Primitive, rng: &mut impl Rng) -> (Vec<Tensor>, Build) {
    let seed = rng.gen();
    let b = rng.gen_range(1..4);
    match kind {
        Primitive::Linear => {
            let (i, o) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let ins = vec![
                rand_tensor(rng, &[b, i], -1.0, 1.0),
                rand_tensor(rng, &[i, o], -1.0, 1.0),
                rand_tensor(rng, &[o], -1.0, 1.0),
            ];
            (ins, projected(Op::Linear, seed))
        }
        Primitive::Relu => {
            let n = rng.gen_range(1..10);
            (vec![rand_away_from_zero(rng, &[b, n], 1e-3)], projected(Op::Relu, seed))
        }
        Primitive::Sigmoid => {
            let n = rng.gen_range(1..10);
            (vec![rand_tensor(rng, &[b, n], -4.0, 4.0)], projected(Op::Sigmoid, seed))
        }
        Primitive::Concat => {
            let parts = rng.gen_range(1..4);
            let ins = (0..parts).map(|_| {
                let w = rng.gen_range(1..5);
                rand_tensor(rng, &[b, w], -1.0, 1.0)
            }).collect();
            (ins, projected(Op::Concat, seed))
        }
        Primitive::Embedding => {
            let (vocab, dim, len) = (rng.gen_range(2..8), rng.gen_range(1..5), rng.gen_range(1..6));
            let ids = (0..b * len).map(|_| rng.gen_range(0..vocab)).collect();
            let op = Op::Embedding { ids, batch: b, len };
            (vec![rand_tensor(rng, &[vocab, dim], -1.0, 1.0)], projected(op, seed))
        }
        Primitive::Conv1d => {
            let (k, ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            let stride = rng.gen_range(1..3);
            let len = k + rng.gen_range(0..6);
            let ins = vec![
                rand_tensor(rng, &[b, len, ci], -1.0, 1.0),
                rand_tensor(rng, &[k, ci, co], -1.0, 1.0),
                rand_tensor(rng, &[co], -1.0, 1.0),
            ];
            (ins, projected(Op::Conv1d { stride }, seed))
        }
        Primitive::MaxPool1d => {
            let width = rng.gen_range(1..4);
            let len = width * rng.gen_range(1..4) + rng.gen_range(0..width);
            let c = rng.gen_range(1..4);
            (vec![rand_distinct(rng, &[b, len, c])], projected(Op::MaxPool1d { width }, seed))
        }
        Primitive::GlobalAvgPool | Primitive::TemporalMaxPool => {
            let (len, c) = (rng.gen_range(1..6), rng.gen_range(1..4));
            let op = Op::plain(kind).unwrap();
            (vec![rand_distinct(rng, &[b, len, c])], projected(op, seed))
        }
        Primitive::Add | Primitive::Mul => {
            let n = rng.gen_range(1..8);
            let ins = vec![rand_tensor(rng, &[b, n], -1.0, 1.0), rand_tensor(rng, &[b, n], -1.0, 1.0)];
            (ins, projected(Op::plain(kind).unwrap(), seed))
        }
        Primitive::ReduceMean | Primitive::ReduceSum => {
            let n = rng.gen_range(1..8);
            (vec![rand_tensor(rng, &[b, n], -1.0, 1.0)], projected(Op::plain(kind).unwrap(), seed))
        }
        Primitive::WeightedBce => {
            let n = rng.gen_range(1..8);
            let labels: Vec<f64> = (0..b * n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let mut weights: Vec<f64> =
                (0..b * n).map(|_| if rng.gen_bool(0.8) { rng.gen_range(0.2..3.0) } else { 0.0 }).collect();
            weights[0] = 1.0;
            let op = Op::WeightedBce { labels, weights };
            (vec![rand_tensor(rng, &[b, n], 0.05, 0.95)], projected(op, seed))
        }
        Primitive::L1Norm => {
            let n = rng.gen_range(1..8);
            let lambda = rng.gen_range(0.01..2.0);
            (vec![rand_away_from_zero(rng, &[b, n], 1e-3)], projected(Op::L1Norm { lambda }, seed))
        }
    }
}

use emt_core::data::Label;
use emt_core::features::{TokenSeq, MAX_TOKENS};
use emt_core::model::{Architecture, BackboneConfig, ConvStage, ModelInput, Modalities, Network};
use emt_core::training::{masked_loss, EncodedSample, TargetWeights};

/// MT network with `viewers + 1` branches and well under 200 parameters.
pub fn tiny_mt(viewers: usize, seed: u64) -> Network {
    let backbone = BackboneConfig {
        vocab_size: 5,
        embed_dim: 2,
        conv_stages: vec![ConvStage { kernel_width: 2, out_channels: 2, pool_width: 2 }],
        feature_dim: 2,
    };
    let mut arch = Architecture::mt(backbone, Modalities::Both, viewers);
    arch.trunk = vec![3];
    arch.head = vec![2];
    Network::new(arch, seed).unwrap()
}

/// Moves every bias off zero. Zero biases behind a dead ReLU layer put the
/// next pre-activation exactly on the kink, where finite differences and the
/// subgradient legitimately disagree.
pub fn jitter_biases(net: &mut Network, rng: &mut impl Rng) {
    let biases: Vec<_> = net.params().iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
    for id in biases {
        let shape = net.params().get(id).value.shape().to_vec();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(0.05..0.3)).collect();
        net.params_mut().set_value(id, Tensor::new(shape, data).unwrap()).unwrap();
    }
}

/// Random samples with every label present unless `absent` says otherwise.
pub fn random_samples(rng: &mut impl Rng, n: usize, targets: usize, vocab: usize, dim: usize) -> Vec<EncodedSample> {
    (0..n)
        .map(|_| {
            let mut ids = [0usize; MAX_TOKENS];
            let len = rng.gen_range(1..=MAX_TOKENS);
            for slot in ids.iter_mut().take(len) {
                *slot = rng.gen_range(1..vocab);
            }
            EncodedSample {
                input: ModelInput { tokens: TokenSeq(ids), visual: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() },
                labels: (0..targets)
                    .map(|_| Some(if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative }))
                    .collect(),
            }
        })
        .collect()
}

/// Worst relative error between reverse-mode parameter gradients of the
/// masked training loss and central differences over every parameter.
pub fn network_gradcheck(net: &Network, batch: &[&EncodedSample], weights: &[TargetWeights], l1: f64) -> f64 {
    let loss_at = |n: &Network| {
        let mut tape = Tape::new();
        let loss = masked_loss(n, &mut tape, batch, weights, l1).unwrap();
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let loss = masked_loss(net, &mut tape, batch, weights, l1).unwrap();
    tape.backward(loss).unwrap();
    let mut with_grads = net.clone();
    with_grads.params_mut().accumulate_grads(&tape);

    let step = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (id, p) in with_grads.params().iter() {
        let g = p.grad.as_ref().map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; p.value.numel()]);
        let mut row = Vec::with_capacity(g.len());
        for j in 0..p.value.numel() {
            let eval = |delta: f64| {
                let mut probe = net.clone();
                let mut data = p.value.data().to_vec();
                data[j] += delta;
                probe.params_mut().set_value(id, Tensor::new(p.value.shape().to_vec(), data).unwrap()).unwrap();
                loss_at(&probe)
            };
            row.push((eval(step) - eval(-step)) / (2.0 * step));
        }
        analytic.push(g);
        numeric.push(row);
    }
    max_relative_error(&analytic, &numeric, 1e-3)
}
