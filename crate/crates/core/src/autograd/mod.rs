//! Tape-based reverse-mode differentiation over the tensor kernels.
//!
//! Forward code is written once against the [`Ops`] trait and runs either
//! eagerly ([`Eager`], plain tensors) or on a [`Graph`] that records every
//! kernel call so [`Graph::backward`] can replay it in reverse.

mod check;
pub mod suite;

use crate::error::{Error, Result};
use crate::tensor::{
    self, BatchNormCache, BatchNormMode, Conv2dSpec, Element, Shape, Tensor, TransposeConv2dSpec,
};
use crate::train::loss;

pub use check::{grad_check, CheckInput, CheckRole, GradCheckOptions, GradCheckReport, ParamCheck, Precision};

/// Forward-pass vocabulary shared by eager and traced execution.
pub trait Ops<T: Element> {
    type Value: Clone;

    fn input(&mut self, t: Tensor<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn shape(&self, v: &Self::Value) -> Shape {
        self.value(v).shape()
    }

    fn conv2d(&mut self, x: &Self::Value, k: &Self::Value, b: &Self::Value, spec: Conv2dSpec) -> Result<Self::Value>;
    fn transpose_conv2d(
        &mut self,
        x: &Self::Value,
        k: &Self::Value,
        b: &Self::Value,
        spec: TransposeConv2dSpec,
    ) -> Result<Self::Value>;
    fn avg_pool2d(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn max_pool2d(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    /// Returns the normalized value and the updated running statistics.
    #[allow(clippy::too_many_arguments)]
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: BatchNormMode,
        momentum: f64,
        epsilon: f64,
    ) -> Result<(Self::Value, Tensor<T>, Tensor<T>)>;
    fn l1_loss(&mut self, prediction: &Self::Value, target: &Self::Value) -> Result<Self::Value>;
    fn pad_replicate(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value>;
    fn crop(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value>;
}

/// Untraced execution: each call just runs the kernel.
#[derive(Default, Debug, Clone, Copy)]
pub struct Eager;

impl<T: Element> Ops<T> for Eager {
    type Value = Tensor<T>;

    fn input(&mut self, t: Tensor<T>) -> Tensor<T> {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn conv2d(&mut self, x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>, spec: Conv2dSpec) -> Result<Tensor<T>> {
        tensor::conv2d(x, k, b, spec)
    }

    fn transpose_conv2d(&mut self, x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>, spec: TransposeConv2dSpec) -> Result<Tensor<T>> {
        tensor::transpose_conv2d(x, k, b, spec)
    }

    fn avg_pool2d(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::avg_pool2d(x)
    }

    fn max_pool2d(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tensor::max_pool2d(x)?.0)
    }

    fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tensor::relu(x))
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tensor::sigmoid(x))
    }

    fn batch_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: BatchNormMode,
        momentum: f64,
        epsilon: f64,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let o = tensor::batch_norm(x, gamma, beta, running_mean, running_var, mode, momentum, epsilon)?;
        Ok((o.output, o.running_mean, o.running_var))
    }

    fn l1_loss(&mut self, prediction: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(T::from_f64(loss::l1_loss(prediction, target)?)))
    }

    fn pad_replicate(&mut self, x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        tensor::pad_replicate(x, h, w)
    }

    fn crop(&mut self, x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        tensor::crop(x, h, w)
    }
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// The kind of kernel a tape node records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    TransposeConv2d,
    AvgPool2d,
    MaxPool2d,
    Relu,
    Sigmoid,
    BatchNorm,
    L1Loss,
    PadReplicate,
    Crop,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::TransposeConv2d => "transpose_conv2d",
            OpKind::AvgPool2d => "avg_pool2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::BatchNorm => "batch_norm",
            OpKind::L1Loss => "l1_loss",
            OpKind::PadReplicate => "pad_replicate",
            OpKind::Crop => "crop",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        [
            OpKind::Conv2d,
            OpKind::TransposeConv2d,
            OpKind::AvgPool2d,
            OpKind::MaxPool2d,
            OpKind::Relu,
            OpKind::Sigmoid,
            OpKind::BatchNorm,
            OpKind::L1Loss,
            OpKind::PadReplicate,
            OpKind::Crop,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, k: NodeId, b: NodeId, spec: Conv2dSpec },
    TransposeConv2d { x: NodeId, k: NodeId, b: NodeId, spec: TransposeConv2dSpec },
    AvgPool2d { x: NodeId },
    MaxPool2d { x: NodeId, argmax: Vec<usize> },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, cache: BatchNormCache },
    L1Loss { prediction: NodeId, target: NodeId },
    PadReplicate { x: NodeId },
    Crop { x: NodeId },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::TransposeConv2d { .. } => OpKind::TransposeConv2d,
            Op::AvgPool2d { .. } => OpKind::AvgPool2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::L1Loss { .. } => OpKind::L1Loss,
            Op::PadReplicate { .. } => OpKind::PadReplicate,
            Op::Crop { .. } => OpKind::Crop,
        }
    }
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op,
}

/// A recorded forward computation. Nodes are appended in evaluation order,
/// so reverse index order is a valid reverse topological order.
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when the node does not influence the differentiated output.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Test hook: doubles every input gradient produced by the backward rule
    /// of `kind`, so gradient checks have a known-bad rule to catch.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Differentiates node `output` with the given seed (`dL/d output`).
    ///
    /// Gradients are returned for every node on a path to `output`, leaves included.
    pub fn backward(&self, output: NodeId, seed: &Tensor<T>) -> Result<Gradients<T>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("node {} is not on this tape", output.0)));
        }
        tensor::expect_same_shape("backward seed", seed, self.val(output))?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.node_backward(node, &g)?;
            let scale = if self.fault == Some(node.op.kind()) { 2.0 } else { 1.0 };
            for (id, c) in contributions {
                let c = if scale != 1.0 { c.map(|v| T::from_f64(v.to_f64() * scale)) } else { c };
                accumulate(&mut grads[id.0], c);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { x, k, b, spec } => {
                let gr = tensor::conv2d_backward(self.val(*x), self.val(*k), *spec, g)?;
                let bias = gr.bias.reshape(self.val(*b).shape())?;
                vec![(*x, gr.input), (*k, gr.kernel), (*b, bias)]
            }
            Op::TransposeConv2d { x, k, b, spec } => {
                let gr = tensor::transpose_conv2d_backward(self.val(*x), self.val(*k), *spec, g)?;
                let bias = gr.bias.reshape(self.val(*b).shape())?;
                vec![(*x, gr.input), (*k, gr.kernel), (*b, bias)]
            }
            Op::AvgPool2d { x } => vec![(*x, tensor::avg_pool2d_backward(self.val(*x).shape(), g)?)],
            Op::MaxPool2d { x, argmax } => {
                vec![(*x, tensor::max_pool2d_backward(self.val(*x).shape(), argmax, g)?)]
            }
            Op::Relu { x } => vec![(*x, tensor::relu_backward(self.val(*x), g)?)],
            Op::Sigmoid { x } => vec![(*x, tensor::sigmoid_backward(&node.value, g)?)],
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (gx, gg, gb) = tensor::batch_norm_backward(self.val(*x), self.val(*gamma), cache, g)?;
                vec![
                    (*x, gx),
                    (*gamma, gg.reshape(self.val(*gamma).shape())?),
                    (*beta, gb.reshape(self.val(*beta).shape())?),
                ]
            }
            Op::L1Loss { prediction, target } => {
                let seed = g.data()[0].to_f64();
                let gp = loss::l1_loss_backward(self.val(*prediction), self.val(*target), seed)?;
                let gt = gp.map(|v| T::from_f64(-v.to_f64()));
                vec![(*prediction, gp), (*target, gt)]
            }
            Op::PadReplicate { x } => vec![(*x, tensor::pad_replicate_backward(self.val(*x).shape(), g)?)],
            Op::Crop { x } => vec![(*x, tensor::crop_backward(self.val(*x).shape(), g)?)],
        })
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, c: Tensor<T>) {
    match slot {
        None => *slot = Some(c),
        Some(acc) => {
            for (a, v) in acc.data_mut().iter_mut().zip(c.data()) {
                *a = T::from_f64(a.to_f64() + v.to_f64());
            }
        }
    }
}

impl<T: Element> Ops<T> for Graph<T> {
    type Value = NodeId;

    fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Leaf)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn conv2d(&mut self, x: &NodeId, k: &NodeId, b: &NodeId, spec: Conv2dSpec) -> Result<NodeId> {
        let y = tensor::conv2d(self.val(*x), self.val(*k), self.val(*b), spec)?;
        Ok(self.push(y, Op::Conv2d { x: *x, k: *k, b: *b, spec }))
    }

    fn transpose_conv2d(&mut self, x: &NodeId, k: &NodeId, b: &NodeId, spec: TransposeConv2dSpec) -> Result<NodeId> {
        let y = tensor::transpose_conv2d(self.val(*x), self.val(*k), self.val(*b), spec)?;
        Ok(self.push(y, Op::TransposeConv2d { x: *x, k: *k, b: *b, spec }))
    }

    fn avg_pool2d(&mut self, x: &NodeId) -> Result<NodeId> {
        let y = tensor::avg_pool2d(self.val(*x))?;
        Ok(self.push(y, Op::AvgPool2d { x: *x }))
    }

    fn max_pool2d(&mut self, x: &NodeId) -> Result<NodeId> {
        let (y, argmax) = tensor::max_pool2d(self.val(*x))?;
        Ok(self.push(y, Op::MaxPool2d { x: *x, argmax }))
    }

    fn relu(&mut self, x: &NodeId) -> Result<NodeId> {
        let y = tensor::relu(self.val(*x));
        Ok(self.push(y, Op::Relu { x: *x }))
    }

    fn sigmoid(&mut self, x: &NodeId) -> Result<NodeId> {
        let y = tensor::sigmoid(self.val(*x));
        Ok(self.push(y, Op::Sigmoid { x: *x }))
    }

    fn batch_norm(
        &mut self,
        x: &NodeId,
        gamma: &NodeId,
        beta: &NodeId,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: BatchNormMode,
        momentum: f64,
        epsilon: f64,
    ) -> Result<(NodeId, Tensor<T>, Tensor<T>)> {
        let o = tensor::batch_norm(
            self.val(*x),
            self.val(*gamma),
            self.val(*beta),
            running_mean,
            running_var,
            mode,
            momentum,
            epsilon,
        )?;
        let id = self.push(
            o.output,
            Op::BatchNorm { x: *x, gamma: *gamma, beta: *beta, cache: o.cache },
        );
        Ok((id, o.running_mean, o.running_var))
    }

    fn l1_loss(&mut self, prediction: &NodeId, target: &NodeId) -> Result<NodeId> {
        let v = loss::l1_loss(self.val(*prediction), self.val(*target))?;
        Ok(self.push(
            Tensor::scalar(T::from_f64(v)),
            Op::L1Loss { prediction: *prediction, target: *target },
        ))
    }

    fn pad_replicate(&mut self, x: &NodeId, h: usize, w: usize) -> Result<NodeId> {
        let y = tensor::pad_replicate(self.val(*x), h, w)?;
        Ok(self.push(y, Op::PadReplicate { x: *x }))
    }

    fn crop(&mut self, x: &NodeId, h: usize, w: usize) -> Result<NodeId> {
        let y = tensor::crop(self.val(*x), h, w)?;
        Ok(self.push(y, Op::Crop { x: *x }))
    }
}

/// A forward computation written once, generic over precision and execution mode.
pub trait Program {
    fn run<T: Element, O: Ops<T>>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<O::Value>;
}

/// Runs `program` on a fresh tape. Returns the output, the tape, and the leaf
/// ids of `inputs` (in order) for gradient lookup.
pub fn forward_traced<T: Element, P: Program>(
    program: &P,
    inputs: &[Tensor<T>],
) -> Result<(Tensor<T>, Graph<T>, Vec<NodeId>)> {
    let mut g = Graph::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = program.run(&mut g, &leaves)?;
    let value = g.val(out).clone();
    Ok((value, g, leaves))
}

pub fn forward_eager<T: Element, P: Program>(program: &P, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
    program.run(&mut Eager, inputs)
}
