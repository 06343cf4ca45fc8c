//! Reverse-mode differentiation over dense `f64` tensors.

mod ops;
mod tape;
mod tensor;

pub use ops::{Op, Primitive, PROB_EPS};
pub use tape::{NodeId, ParamId, ParamStore, Parameter, Tape};
pub use tensor::Tensor;

use crate::error::Result;

/// Clears every stored gradient. Idempotent.
pub fn zero_grads(params: &mut ParamStore) {
    params.zero_grads();
}

impl Tape {
    /// Looks up a primitive by id and applies it. Primitives that need
    /// attributes must go through [`Tape::apply`].
    pub fn apply_primitive(&mut self, kind: &str, inputs: &[NodeId]) -> Result<NodeId> {
        let op = Op::plain(kind.parse()?)?;
        self.apply(op, inputs)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Linear, &[x, w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Concat, parts)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::ReduceSum, &[x])
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::ReduceMean, &[x])
    }
}
