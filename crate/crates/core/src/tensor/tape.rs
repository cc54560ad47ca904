use super::{Activation, BinaryOp, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Coarse operation family, used for fault injection and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Binary,
    Sum,
    Softmax,
    Permute,
    Reshape,
    Activation,
    Expand,
    LayerNorm,
    BatchNorm,
    Conv1d,
    MaxPool,
    CrossEntropy,
    Scale,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Binary,
        OpKind::Sum,
        OpKind::Softmax,
        OpKind::Permute,
        OpKind::Reshape,
        OpKind::Activation,
        OpKind::Expand,
        OpKind::LayerNorm,
        OpKind::BatchNorm,
        OpKind::Conv1d,
        OpKind::MaxPool,
        OpKind::CrossEntropy,
        OpKind::Scale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Binary => "binary",
            OpKind::Sum => "sum",
            OpKind::Softmax => "softmax",
            OpKind::Permute => "permute",
            OpKind::Reshape => "reshape",
            OpKind::Activation => "activation",
            OpKind::Expand => "expand",
            OpKind::LayerNorm => "layer_norm",
            OpKind::BatchNorm => "batch_norm",
            OpKind::Conv1d => "conv1d",
            OpKind::MaxPool => "max_pool",
            OpKind::CrossEntropy => "cross_entropy",
            OpKind::Scale => "scale",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown op kind '{s}'"))
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
        axis: usize,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Permute {
        input: Var,
        order: Vec<usize>,
    },
    Reshape {
        input: Var,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    /// Per-element expansion `(.., ) -> (.., C)` with saved derivatives.
    Expand {
        input: Var,
        deriv: Vec<f64>,
    },
    /// Normalization over the last axis of a row-major (rows, D) view.
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// Normalization over axis 0 of (B, D). `batch_stats` is false in eval mode.
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Scale {
        input: Var,
        factor: f64,
    },
}

impl Op {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Binary { .. } => OpKind::Binary,
            Op::Sum { .. } => OpKind::Sum,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Permute { .. } => OpKind::Permute,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Activation { .. } => OpKind::Activation,
            Op::Expand { .. } => OpKind::Expand,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::MaxPool { .. } => OpKind::MaxPool,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Scale { .. } => OpKind::Scale,
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Nodes are only ever pushed, so every node's inputs precede it and the
/// reverse sweep in [`Tape::backward`] is a valid topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    /// Accumulated gradients of differentiable leaves, indexed by node.
    pub(crate) leaf_grads: Vec<Option<Vec<f64>>>,
    pub(crate) sign_flip: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a constant input. Gradients are never propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf (a parameter or a checked input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Accumulated gradient of a differentiable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.leaf_grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(
            self.nodes[v.0].value.shape().to_vec(),
            g.clone(),
        ))
    }

    pub(crate) fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0)?.as_deref()
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Negates the gradient produced by every backward rule of `kind`.
    ///
    /// Mutation hook for checking that the gradient checker catches a broken
    /// backward rule; never set in normal operation.
    #[doc(hidden)]
    pub fn inject_sign_flip(&mut self, kind: OpKind) {
        self.sign_flip = Some(kind);
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }
}
