use std::collections::HashMap;

use super::ops::{self, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Handle to a [`Parameter`] in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

struct Node {
    op: Option<Op>,
    inputs: Vec<NodeId>,
    value: Tensor,
    argmax: Vec<usize>,
    grad: Option<Tensor>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Define-by-run gradient tape. Build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> NodeId {
        self.nodes.push(Node {
            op: None,
            inputs: Vec::new(),
            value,
            argmax: Vec::new(),
            grad: None,
            requires_grad,
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true, None)
    }

    /// Input that never receives a gradient (data, labels).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false, None)
    }

    /// Registers a parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let p = store.get(id);
        let node = self.leaf(p.value.clone(), p.trainable, Some(id));
        self.param_nodes.insert(id, node);
        node
    }

    /// Applies a primitive to existing nodes and records it.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
        let ops::Forward { value, argmax } = ops::forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op: Some(op),
            inputs: inputs.to_vec(),
            value,
            argmax,
            grad: None,
            requires_grad,
            param: None,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Reverse sweep from a scalar `loss`, accumulating into node grads.
    ///
    /// Nodes that do not lie on a path to `loss` keep `grad == None`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let seed = Tensor::filled(root.value.shape(), 1.0);
        accumulate(&mut self.nodes[loss.0].grad, seed);

        for idx in (0..=loss.0).rev() {
            let Some(op) = &self.nodes[idx].op else { continue };
            let Some(grad) = &self.nodes[idx].grad else { continue };
            let node = &self.nodes[idx];
            let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i.0].requires_grad).collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
            let grads = ops::backward(op, &inputs, &node.value, &node.argmax, grad, &needs);
            let targets = node.inputs.clone();
            for (target, g) in targets.into_iter().zip(grads) {
                if let Some(g) = g {
                    accumulate(&mut self.nodes[target.0].grad, g);
                }
            }
        }
        Ok(())
    }

    /// Gradients of every parameter leaf reached by the last backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.nodes.iter().filter_map(|n| Some((n.param?, n.grad.as_ref()?)))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// A named learned tensor.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// Ordered, uniquely named collection of parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None, trainable: true });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces a parameter value; the shape is fixed at creation.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Invalid(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.data_mut()
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Adds gradients from a completed backward pass into the stored grads.
    pub fn accumulate_grads(&mut self, tape: &Tape) {
        for (id, g) in tape.param_grads() {
            accumulate(&mut self.params[id.0].grad, g.clone());
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn loss_gradient_is_one() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let s = tape.apply(Op::ReduceSum, &[x]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(s).unwrap().data(), &[1.0]);
    }

    #[test]
    fn unreachable_nodes_have_no_grad() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0]).unwrap());
        let y = tape.variable(Tensor::vector(vec![2.0]).unwrap());
        let _unused = tape.apply(Op::Relu, &[y]).unwrap();
        let s = tape.apply(Op::ReduceSum, &[x]).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_some());
        assert!(tape.grad(y).is_none());
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![3.0]).unwrap());
        let sq = tape.apply(Op::Mul, &[x, x]).unwrap();
        let s = tape.apply(Op::ReduceSum, &[sq]).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1])).unwrap();
        assert!(store.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn set_value_keeps_shape_fixed() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.set_value(id, Tensor::zeros(&[3])).is_err());
    }
}
