//! Primitive kernels: forward values and vector-Jacobian products.
//!
//! Layout conventions (row-major, channels last):
//! - linear: `x [B, in]` or `[in]`, `w [in, out]`, `b [out]`
//! - sequences: `[B, L, C]`; conv kernels `[k, C_in, C_out]`
//! - reductions and losses produce shape `[1]`

use std::fmt;
use std::str::FromStr;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability clamp applied before taking logs in the weighted log-loss.
pub const PROB_EPS: f64 = 1e-12;

/// Identifier of a primitive, independent of its attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Linear,
    Relu,
    Sigmoid,
    Concat,
    Embedding,
    Conv1d,
    MaxPool1d,
    GlobalAvgPool,
    TemporalMaxPool,
    Add,
    Mul,
    ReduceMean,
    ReduceSum,
    WeightedBce,
    L1Norm,
}

impl Primitive {
    pub const ALL: [Primitive; 15] = [
        Primitive::Linear,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Concat,
        Primitive::Embedding,
        Primitive::Conv1d,
        Primitive::MaxPool1d,
        Primitive::GlobalAvgPool,
        Primitive::TemporalMaxPool,
        Primitive::Add,
        Primitive::Mul,
        Primitive::ReduceMean,
        Primitive::ReduceSum,
        Primitive::WeightedBce,
        Primitive::L1Norm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Linear => "linear",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Concat => "concat",
            Primitive::Embedding => "embedding",
            Primitive::Conv1d => "conv1d",
            Primitive::MaxPool1d => "maxpool1d",
            Primitive::GlobalAvgPool => "global_avg_pool",
            Primitive::TemporalMaxPool => "temporal_max_pool",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::ReduceMean => "reduce_mean",
            Primitive::ReduceSum => "reduce_sum",
            Primitive::WeightedBce => "weighted_bce",
            Primitive::L1Norm => "l1_norm",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPrimitive(s.to_string()))
    }
}

/// A primitive together with its attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `x·w + b`.
    Linear,
    Relu,
    Sigmoid,
    /// Concatenation along the last axis.
    Concat,
    /// Row lookup; `ids` has shape `[batch, len]`.
    Embedding { ids: Vec<usize>, batch: usize, len: usize },
    /// Valid (unpadded) convolution; inputs `x`, `w` and optionally `b`.
    Conv1d { stride: usize },
    /// Non-overlapping max pool over the length axis.
    MaxPool1d { width: usize },
    /// Mean over the length axis: `[B, L, C] -> [B, C]`.
    GlobalAvgPool,
    /// Max over the length axis: `[B, L, C] -> [B, C]`.
    TemporalMaxPool,
    Add,
    Mul,
    ReduceMean,
    ReduceSum,
    /// Class-weighted log-loss; a zero weight marks an absent label.
    WeightedBce { labels: Vec<f64>, weights: Vec<f64> },
    /// `lambda · Σ|x|`.
    L1Norm { lambda: f64 },
}

impl Op {
    pub fn kind(&self) -> Primitive {
        match self {
            Op::Linear => Primitive::Linear,
            Op::Relu => Primitive::Relu,
            Op::Sigmoid => Primitive::Sigmoid,
            Op::Concat => Primitive::Concat,
            Op::Embedding { .. } => Primitive::Embedding,
            Op::Conv1d { .. } => Primitive::Conv1d,
            Op::MaxPool1d { .. } => Primitive::MaxPool1d,
            Op::GlobalAvgPool => Primitive::GlobalAvgPool,
            Op::TemporalMaxPool => Primitive::TemporalMaxPool,
            Op::Add => Primitive::Add,
            Op::Mul => Primitive::Mul,
            Op::ReduceMean => Primitive::ReduceMean,
            Op::ReduceSum => Primitive::ReduceSum,
            Op::WeightedBce { .. } => Primitive::WeightedBce,
            Op::L1Norm { .. } => Primitive::L1Norm,
        }
    }

    /// Attribute-free op for `kind`; fails for primitives that need attributes.
    pub fn plain(kind: Primitive) -> Result<Op> {
        Ok(match kind {
            Primitive::Linear => Op::Linear,
            Primitive::Relu => Op::Relu,
            Primitive::Sigmoid => Op::Sigmoid,
            Primitive::Concat => Op::Concat,
            Primitive::Conv1d => Op::Conv1d { stride: 1 },
            Primitive::GlobalAvgPool => Op::GlobalAvgPool,
            Primitive::TemporalMaxPool => Op::TemporalMaxPool,
            Primitive::Add => Op::Add,
            Primitive::Mul => Op::Mul,
            Primitive::ReduceMean => Op::ReduceMean,
            Primitive::ReduceSum => Op::ReduceSum,
            Primitive::Embedding
            | Primitive::MaxPool1d
            | Primitive::WeightedBce
            | Primitive::L1Norm => {
                return Err(Error::Invalid(format!("primitive {kind} requires attributes")))
            }
        })
    }
}

/// Result of a forward kernel: the value plus indices some backward passes need.
pub(crate) struct Forward {
    pub value: Tensor,
    pub argmax: Vec<usize>,
}

impl From<Tensor> for Forward {
    fn from(value: Tensor) -> Self {
        Forward { value, argmax: Vec::new() }
    }
}

fn arity(op: &Op, inputs: &[&Tensor], allowed: &[usize]) -> Result<()> {
    if allowed.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(Error::shape(op.kind().name(), format!("expected {allowed:?} inputs, got {}", inputs.len())))
    }
}

fn same_shape(name: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn seq_dims(name: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, l, c] => Ok((b, l, c)),
        ref s => Err(Error::shape(name, format!("expected [batch, len, channels], got {s:?}"))),
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c` with arbitrary strides on `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller's slices cover the strided ranges for the stated
    // dimensions; `c` is a distinct contiguous row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Forward> {
    let name = op.kind().name();
    match op {
        Op::Linear => {
            arity(op, inputs, &[2, 3])?;
            let (x, w) = (inputs[0], inputs[1]);
            let (batch, fan_in) = match *x.shape() {
                [n] => (1, n),
                [b, n] => (b, n),
                ref s => return Err(Error::shape(name, format!("input must be [in] or [B, in], got {s:?}"))),
            };
            let fan_out = match *w.shape() {
                [i, o] if i == fan_in => o,
                ref s => {
                    return Err(Error::shape(name, format!("weight {s:?} does not accept {fan_in} inputs")))
                }
            };
            let mut out = vec![0.0; batch * fan_out];
            if let Some(b) = inputs.get(2) {
                if b.shape() != [fan_out] {
                    return Err(Error::shape(name, format!("bias {:?} != [{fan_out}]", b.shape())));
                }
                for row in out.chunks_exact_mut(fan_out) {
                    row.copy_from_slice(b.data());
                }
            }
            let beta = if inputs.len() == 3 { 1.0 } else { 0.0 };
            gemm(batch, fan_in, fan_out, x.data(), (fan_in, 1), w.data(), (fan_out, 1), beta, &mut out);
            let shape = if x.rank() == 1 { vec![fan_out] } else { vec![batch, fan_out] };
            Ok(Tensor::from_kernel(shape, out).into())
        }
        Op::Relu => {
            arity(op, inputs, &[1])?;
            let x = inputs[0];
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Ok(Tensor::from_kernel(x.shape().to_vec(), data).into())
        }
        Op::Sigmoid => {
            arity(op, inputs, &[1])?;
            let x = inputs[0];
            let data = x.data().iter().map(|&v| sigmoid(v)).collect();
            Ok(Tensor::from_kernel(x.shape().to_vec(), data).into())
        }
        Op::Concat => {
            if inputs.is_empty() {
                return Err(Error::shape(name, "no inputs"));
            }
            let lead = &inputs[0].shape()[..inputs[0].rank() - 1];
            for t in inputs {
                if &t.shape()[..t.rank() - 1] != lead {
                    return Err(Error::shape(
                        name,
                        format!("leading dims {:?} vs {lead:?}", &t.shape()[..t.rank() - 1]),
                    ));
                }
            }
            let rows: usize = lead.iter().product();
            let widths: Vec<usize> = inputs.iter().map(|t| *t.shape().last().unwrap()).collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (t, &w) in inputs.iter().zip(&widths) {
                    out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Ok(Tensor::from_kernel(shape, out).into())
        }
        Op::Embedding { ids, batch, len } => {
            arity(op, inputs, &[1])?;
            let table = inputs[0];
            let (vocab, dim) = match *table.shape() {
                [v, d] => (v, d),
                ref s => return Err(Error::shape(name, format!("table must be [vocab, dim], got {s:?}"))),
            };
            if ids.len() != batch * len {
                return Err(Error::shape(name, format!("{} ids for shape [{batch}, {len}]", ids.len())));
            }
            if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
                return Err(Error::shape(name, format!("id {bad} outside vocabulary of {vocab}")));
            }
            let mut out = Vec::with_capacity(ids.len() * dim);
            for &i in ids {
                out.extend_from_slice(&table.data()[i * dim..(i + 1) * dim]);
            }
            Ok(Tensor::from_kernel(vec![*batch, *len, dim], out).into())
        }
        Op::Conv1d { stride } => {
            arity(op, inputs, &[2, 3])?;
            let (x, w) = (inputs[0], inputs[1]);
            let (batch, len, c_in) = seq_dims(name, x)?;
            let (width, c_out) = match *w.shape() {
                [k, ci, co] if ci == c_in => (k, co),
                ref s => {
                    return Err(Error::shape(name, format!("kernel {s:?} does not match {c_in} input channels")))
                }
            };
            if *stride == 0 {
                return Err(Error::shape(name, "stride must be positive"));
            }
            if len < width {
                return Err(Error::shape(name, format!("input length {len} < kernel width {width}")));
            }
            let out_len = (len - width) / stride + 1;
            let mut out = vec![0.0; batch * out_len * c_out];
            let beta = if let Some(b) = inputs.get(2) {
                if b.shape() != [c_out] {
                    return Err(Error::shape(name, format!("bias {:?} != [{c_out}]", b.shape())));
                }
                for row in out.chunks_exact_mut(c_out) {
                    row.copy_from_slice(b.data());
                }
                1.0
            } else {
                0.0
            };
            let in_block = len * c_in;
            let out_block = out_len * c_out;
            for n in 0..batch {
                // Each output position reads a contiguous run of width·c_in values.
                gemm(
                    out_len,
                    width * c_in,
                    c_out,
                    &x.data()[n * in_block..(n + 1) * in_block],
                    (stride * c_in, 1),
                    w.data(),
                    (c_out, 1),
                    beta,
                    &mut out[n * out_block..(n + 1) * out_block],
                );
            }
            Ok(Tensor::from_kernel(vec![batch, out_len, c_out], out).into())
        }
        Op::MaxPool1d { width } => {
            arity(op, inputs, &[1])?;
            let x = inputs[0];
            let (batch, len, ch) = seq_dims(name, x)?;
            if *width == 0 || len < *width {
                return Err(Error::shape(name, format!("pool width {width} invalid for length {len}")));
            }
            let out_len = len / width;
            let mut out = Vec::with_capacity(batch * out_len * ch);
            let mut argmax = Vec::with_capacity(batch * out_len * ch);
            let d = x.data();
            for n in 0..batch {
                for t in 0..out_len {
                    for c in 0..ch {
                        let mut best = (n * len + t * width) * ch + c;
                        for j in 1..*width {
                            let idx = (n * len + t * width + j) * ch + c;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                        out.push(d[best]);
                        argmax.push(best);
                    }
                }
            }
            Ok(Forward { value: Tensor::from_kernel(vec![batch, out_len, ch], out), argmax })
        }
        Op::GlobalAvgPool => {
            arity(op, inputs, &[1])?;
            let x = inputs[0];
            let (batch, len, ch) = seq_dims(name, x)?;
            let mut out = vec![0.0; batch * ch];
            for n in 0..batch {
                for t in 0..len {
                    let row = &x.data()[(n * len + t) * ch..(n * len + t + 1) * ch];
                    for (o, v) in out[n * ch..(n + 1) * ch].iter_mut().zip(row) {
                        *o += v;
                    }
                }
            }
            out.iter_mut().for_each(|o| *o /= len as f64);
            Ok(Tensor::from_kernel(vec![batch, ch], out).into())
        }
        Op::TemporalMaxPool => {
            arity(op, inputs, &[1])?;
            let x = inputs[0];
            let (batch, len, ch) = seq_dims(name, x)?;
            let d = x.data();
            let mut out = Vec::with_capacity(batch * ch);
            let mut argmax = Vec::with_capacity(batch * ch);
            for n in 0..batch {
                for c in 0..ch {
                    let mut best = n * len * ch + c;
                    for t in 1..len {
                        let idx = (n * len + t) * ch + c;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
            Ok(Forward { value: Tensor::from_kernel(vec![batch, ch], out), argmax })
        }
        Op::Add | Op::Mul => {
            arity(op, inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(name, a, b)?;
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| if matches!(op, Op::Add) { x + y } else { x * y })
                .collect();
            Ok(Tensor::from_kernel(a.shape().to_vec(), data).into())
        }
        Op::ReduceSum | Op::ReduceMean => {
            arity(op, inputs, &[1])?;
            let x = inputs[0];
            let mut s: f64 = x.data().iter().sum();
            if matches!(op, Op::ReduceMean) {
                s /= x.numel() as f64;
            }
            Ok(Tensor::from_kernel(vec![1], vec![s]).into())
        }
        Op::WeightedBce { labels, weights } => {
            arity(op, inputs, &[1])?;
            let p = inputs[0];
            if labels.len() != p.numel() || weights.len() != p.numel() {
                return Err(Error::shape(
                    name,
                    format!("{} predictions, {} labels, {} weights", p.numel(), labels.len(), weights.len()),
                ));
            }
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return Err(Error::EmptyMask);
            }
            let mut acc = 0.0;
            for ((&pi, &y), &w) in p.data().iter().zip(labels).zip(weights) {
                if w == 0.0 {
                    continue;
                }
                let q = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                acc += w * (y * q.ln() + (1.0 - y) * (1.0 - q).ln());
            }
            Ok(Tensor::from_kernel(vec![1], vec![-acc / total]).into())
        }
        Op::L1Norm { lambda } => {
            arity(op, inputs, &[1])?;
            let s: f64 = inputs[0].data().iter().map(|v| v.abs()).sum();
            Ok(Tensor::from_kernel(vec![1], vec![lambda * s]).into())
        }
    }
}

/// Gradients with respect to each input, given the output gradient.
///
/// `needs[i]` is false for inputs that do not require a gradient; the
/// corresponding entry is returned as `None`.
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    argmax: &[usize],
    grad: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let g = grad.data();
    let mut result: Vec<Option<Tensor>> = vec![None; inputs.len()];
    match op {
        Op::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
            let batch = x.numel() / fan_in;
            if needs[0] {
                let mut dx = vec![0.0; batch * fan_in];
                gemm(batch, fan_out, fan_in, g, (fan_out, 1), w.data(), (1, fan_out), 0.0, &mut dx);
                result[0] = Some(Tensor::from_kernel(x.shape().to_vec(), dx));
            }
            if needs[1] {
                let mut dw = vec![0.0; fan_in * fan_out];
                gemm(fan_in, batch, fan_out, x.data(), (1, fan_in), g, (fan_out, 1), 0.0, &mut dw);
                result[1] = Some(Tensor::from_kernel(w.shape().to_vec(), dw));
            }
            if inputs.len() == 3 && needs[2] {
                let mut db = vec![0.0; fan_out];
                for row in g.chunks_exact(fan_out) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                result[2] = Some(Tensor::from_kernel(vec![fan_out], db));
            }
        }
        Op::Relu => {
            if needs[0] {
                let data = inputs[0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                result[0] = Some(Tensor::from_kernel(out.shape().to_vec(), data));
            }
        }
        Op::Sigmoid => {
            if needs[0] {
                let data = out.data().iter().zip(g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                result[0] = Some(Tensor::from_kernel(out.shape().to_vec(), data));
            }
        }
        Op::Concat => {
            let total = *out.shape().last().unwrap();
            let rows = out.numel() / total;
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let w = *t.shape().last().unwrap();
                if needs[i] {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    result[i] = Some(Tensor::from_kernel(t.shape().to_vec(), d));
                }
                offset += w;
            }
        }
        Op::Embedding { ids, .. } => {
            if needs[0] {
                let table = inputs[0];
                let dim = table.shape()[1];
                let mut d = vec![0.0; table.numel()];
                for (pos, &i) in ids.iter().enumerate() {
                    for (a, b) in d[i * dim..(i + 1) * dim].iter_mut().zip(&g[pos * dim..(pos + 1) * dim]) {
                        *a += b;
                    }
                }
                result[0] = Some(Tensor::from_kernel(table.shape().to_vec(), d));
            }
        }
        Op::Conv1d { stride } => {
            let (x, w) = (inputs[0], inputs[1]);
            let (batch, len, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (width, c_out) = (w.shape()[0], w.shape()[2]);
            let out_len = out.shape()[1];
            let (in_block, out_block, patch) = (len * c_in, out_len * c_out, width * c_in);
            if needs[0] {
                let mut dx = vec![0.0; x.numel()];
                let mut dpatch = vec![0.0; out_len * patch];
                for n in 0..batch {
                    gemm(
                        out_len,
                        c_out,
                        patch,
                        &g[n * out_block..(n + 1) * out_block],
                        (c_out, 1),
                        w.data(),
                        (1, c_out),
                        0.0,
                        &mut dpatch,
                    );
                    let dxb = &mut dx[n * in_block..(n + 1) * in_block];
                    for t in 0..out_len {
                        let start = t * stride * c_in;
                        for (a, b) in dxb[start..start + patch].iter_mut().zip(&dpatch[t * patch..(t + 1) * patch]) {
                            *a += b;
                        }
                    }
                }
                result[0] = Some(Tensor::from_kernel(x.shape().to_vec(), dx));
            }
            if needs[1] {
                let mut dw = vec![0.0; w.numel()];
                for n in 0..batch {
                    gemm(
                        patch,
                        out_len,
                        c_out,
                        &x.data()[n * in_block..(n + 1) * in_block],
                        (1, stride * c_in),
                        &g[n * out_block..(n + 1) * out_block],
                        (c_out, 1),
                        1.0,
                        &mut dw,
                    );
                }
                result[1] = Some(Tensor::from_kernel(w.shape().to_vec(), dw));
            }
            if inputs.len() == 3 && needs[2] {
                let mut db = vec![0.0; c_out];
                for row in g.chunks_exact(c_out) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                result[2] = Some(Tensor::from_kernel(vec![c_out], db));
            }
        }
        Op::MaxPool1d { .. } | Op::TemporalMaxPool => {
            if needs[0] {
                let mut d = vec![0.0; inputs[0].numel()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    d[src] += gi;
                }
                result[0] = Some(Tensor::from_kernel(inputs[0].shape().to_vec(), d));
            }
        }
        Op::GlobalAvgPool => {
            if needs[0] {
                let x = inputs[0];
                let (len, ch) = (x.shape()[1], x.shape()[2]);
                let scale = 1.0 / len as f64;
                let mut d = Vec::with_capacity(x.numel());
                for grow in g.chunks_exact(ch) {
                    for _ in 0..len {
                        d.extend(grow.iter().map(|v| v * scale));
                    }
                }
                result[0] = Some(Tensor::from_kernel(x.shape().to_vec(), d));
            }
        }
        Op::Add => {
            for i in 0..2 {
                if needs[i] {
                    result[i] = Some(grad.clone());
                }
            }
        }
        Op::Mul => {
            for i in 0..2 {
                if needs[i] {
                    let other = inputs[1 - i];
                    let data = other.data().iter().zip(g).map(|(o, gi)| o * gi).collect();
                    result[i] = Some(Tensor::from_kernel(other.shape().to_vec(), data));
                }
            }
        }
        Op::ReduceSum | Op::ReduceMean => {
            if needs[0] {
                let x = inputs[0];
                let mut v = g[0];
                if matches!(op, Op::ReduceMean) {
                    v /= x.numel() as f64;
                }
                result[0] = Some(Tensor::filled(x.shape(), v));
            }
        }
        Op::WeightedBce { labels, weights } => {
            if needs[0] {
                let p = inputs[0];
                let total: f64 = weights.iter().sum();
                let data = p
                    .data()
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&pi, &y), &w)| {
                        if w == 0.0 || !(PROB_EPS..=1.0 - PROB_EPS).contains(&pi) {
                            0.0
                        } else {
                            -g[0] * w / total * (y / pi - (1.0 - y) / (1.0 - pi))
                        }
                    })
                    .collect();
                result[0] = Some(Tensor::from_kernel(p.shape().to_vec(), data));
            }
        }
        Op::L1Norm { lambda } => {
            if needs[0] {
                let x = inputs[0];
                let data = x
                    .data()
                    .iter()
                    .map(|&v| {
                        let s = if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        g[0] * lambda * s
                    })
                    .collect();
                result[0] = Some(Tensor::from_kernel(x.shape().to_vec(), data));
            }
        }
    }
    result
}
