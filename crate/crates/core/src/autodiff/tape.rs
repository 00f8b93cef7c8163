use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::element::Element;
use crate::error::{contract, Error, Result};
use crate::kernels::{ConvSpec, PoolKind};
use crate::tensor::Tensor;

use super::param::ParamStore;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Differentiable operation kinds recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Linear,
    Add,
    Mul,
    Relu,
    Sigmoid,
    Sqrt,
    Square,
    Magnitude,
    GlobalAvg,
    GlobalMax,
    Up2,
    Down2,
    Concat,
    Sum,
    ChannelMean,
    PadReplicate,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Linear => "linear",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Magnitude => "magnitude",
            OpKind::GlobalAvg => "global_avg",
            OpKind::GlobalMax => "global_max",
            OpKind::Up2 => "up2_nearest",
            OpKind::Down2 => "down2_max",
            OpKind::Concat => "concat",
            OpKind::Sum => "sum",
            OpKind::ChannelMean => "channel_mean",
            OpKind::PadReplicate => "pad_replicate",
        }
    }

    pub fn parse(name: &str) -> Option<OpKind> {
        ALL_OPS.iter().copied().find(|k| k.name() == name)
    }
}

const ALL_OPS: [OpKind; 18] = [
    OpKind::Leaf,
    OpKind::Conv2d,
    OpKind::Linear,
    OpKind::Add,
    OpKind::Mul,
    OpKind::Relu,
    OpKind::Sigmoid,
    OpKind::Sqrt,
    OpKind::Square,
    OpKind::Magnitude,
    OpKind::GlobalAvg,
    OpKind::GlobalMax,
    OpKind::Up2,
    OpKind::Down2,
    OpKind::Concat,
    OpKind::Sum,
    OpKind::ChannelMean,
    OpKind::PadReplicate,
];

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Backward recipe of one node. Indices refer to earlier nodes.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Conv2d { input: usize, weight: usize, bias: Option<usize>, spec: ConvSpec },
    Linear { x: usize, w: usize, bias: Option<usize> },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Relu { a: usize },
    Sigmoid { a: usize },
    Sqrt { a: usize },
    Square { a: usize },
    Magnitude { gx: usize, gy: usize },
    GlobalPool { a: usize, kind: PoolKind, argmax: Vec<usize> },
    Up2 { a: usize },
    Down2 { a: usize, argmax: Vec<usize> },
    Concat { parts: Vec<usize> },
    Sum { a: usize },
    ChannelMean { a: usize },
    PadReplicate { a: usize, pad: usize },
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Linear { .. } => OpKind::Linear,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Sqrt { .. } => OpKind::Sqrt,
            Op::Square { .. } => OpKind::Square,
            Op::Magnitude { .. } => OpKind::Magnitude,
            Op::GlobalPool { kind: PoolKind::Avg, .. } => OpKind::GlobalAvg,
            Op::GlobalPool { kind: PoolKind::Max, .. } => OpKind::GlobalMax,
            Op::Up2 { .. } => OpKind::Up2,
            Op::Down2 { .. } => OpKind::Down2,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sum { .. } => OpKind::Sum,
            Op::ChannelMean { .. } => OpKind::ChannelMean,
            Op::PadReplicate { .. } => OpKind::PadReplicate,
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Rc<Tensor<T>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) param: Option<String>,
}

/// Branch decisions of the piecewise operations, recorded in creation order
/// when kink tracking is on. Comparing the records of two forward passes
/// tells whether they took the same smooth piece.
#[derive(Debug, Clone, PartialEq)]
pub enum Kink {
    /// `input > 0` per element of a ReLU.
    Signs(Vec<bool>),
    /// Selected source index per output of a max reduction.
    Argmax(Vec<usize>),
    /// `(gx, gy)` per element of the magnitude at tape position `node`,
    /// singular at the origin.
    Planar { node: usize, points: Vec<(f64, f64)> },
}

/// Reverse-mode record of one forward computation.
///
/// Nodes are appended in creation order, so inputs always precede outputs
/// and `backward` simply walks the list in reverse.
pub struct Tape<T: Element> {
    pub(crate) id: u64,
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    kinks: Option<RefCell<Vec<Kink>>>,
    replay: Option<(Vec<Kink>, Cell<usize>)>,
    fault: Option<OpKind>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            kinks: None,
            replay: None,
            fault: None,
        }
    }

    /// A tape that also records [`Kink`]s.
    pub fn tracking_kinks() -> Self {
        Tape { kinks: Some(RefCell::new(Vec::new())), ..Self::new() }
    }

    /// Negative-control hook: the backward rule of `kind` scales its input
    /// gradients by 1.5, which any gradient check must catch.
    pub fn with_faulty_backward(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kinks(&self) -> Vec<Kink> {
        self.kinks.as_ref().map(|k| k.borrow().clone()).unwrap_or_default()
    }

    /// A kink-tracking tape whose ReLUs and max reductions reuse the branch
    /// decisions of `base` instead of deciding afresh, so the forward pass
    /// evaluates the smooth piece `base` was recorded on.
    pub fn replaying(base: Vec<Kink>) -> Self {
        Tape { replay: Some((base, Cell::new(0))), ..Self::tracking_kinks() }
    }

    /// Records the branch decision of a piecewise op. When replaying, returns
    /// the decision of the same op in the base pass (magnitudes have none to
    /// reuse and record their own inputs).
    pub(crate) fn record_kink(&self, make: impl FnOnce() -> Kink) -> Option<Kink> {
        let kinks = self.kinks.as_ref()?;
        let reused = self.replay.as_ref().and_then(|(base, pos)| {
            let i = pos.get();
            pos.set(i + 1);
            base.get(i).filter(|k| !matches!(k, Kink::Planar { .. })).cloned()
        });
        let k = reused.clone().unwrap_or_else(make);
        kinks.borrow_mut().push(k);
        reused
    }

    /// Registers a leaf. Gradients are tracked when `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: Tensor<T>) -> Var<'_, T> {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg, None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, tensor: Tensor<T>) -> Var<'_, T> {
        self.push(tensor, Op::Leaf, false, None)
    }

    /// A gradient-tracked leaf bound to a parameter name.
    pub fn param(&self, name: &str, tensor: Tensor<T>) -> Var<'_, T> {
        self.push(tensor, Op::Leaf, true, Some(name.to_owned()))
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op, requires_grad: bool, param: Option<String>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node { value: Rc::new(value), op, requires_grad, param });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn node_value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn owns(&self, v: &Var<'_, T>) -> bool {
        v.tape.id == self.id
    }

    /// Runs reverse-mode differentiation from the scalar `root`.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        if !self.owns(&root) {
            return Err(Error::Usage("backward root was not produced on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        if root.id >= nodes.len() {
            return Err(Error::Usage(format!("node {} is not on the tape", root.id)));
        }
        let root_value = &nodes[root.id].value;
        if root_value.numel() != 1 {
            return Err(contract!("backward root must be a scalar, got shape {}", root_value.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::ones(root_value.shape()));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut contributions = super::backward::input_grads(&nodes, &node.op, &node.value, &g)?;
            if self.fault == Some(node.op.kind()) {
                for (_, t) in contributions.iter_mut() {
                    *t = t.map(|v| v * T::of(1.5));
                }
            }
            grads[id] = Some(g);
            for (input, contrib) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, &c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.clone().map(|name| (i, name)))
            .collect();
        Ok(Gradients { tape: self.id, grads, params })
    }

    /// Runs `backward` and accumulates parameter gradients into `store`.
    pub fn backward_into(&self, root: Var<'_, T>, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(root)?.accumulate_into(store)
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T: Element> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} on tape {}, {})", self.id, self.tape.id, self.shape())
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.node_value(self.id)
    }

    /// Borrowed view of the value without bumping the refcount.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        let nodes: Ref<'_, Vec<Node<T>>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> crate::tensor::Shape {
        self.with_value(|t| t.shape())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if self.tape.id != other.tape.id {
            return Err(Error::Usage("operands live on different tapes".into()));
        }
        Ok(())
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, String)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the root with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        if v.tape.id != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub(crate) fn by_id(&self, id: usize) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, or zeros if `v` was not reached.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    /// Adds every parameter-bound gradient into the matching slot of `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, name) in &self.params {
            if let Some(g) = &self.grads[*id] {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}
