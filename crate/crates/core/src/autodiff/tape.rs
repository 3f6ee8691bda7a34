use std::collections::BTreeMap;

use super::tensor::{gemm, gemm_into, Tensor};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    /// Trainable parameter; always differentiable.
    Param,
    /// Data fed to the graph; differentiable only when asked for.
    Input { differentiable: bool },
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf(LeafKind),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// `[1×n] → [m×n]`
    BroadcastRows(NodeId, usize),
    /// `[m×1] → [m×n]`
    BroadcastCols(NodeId, usize),
    /// scalar → any shape
    Expand(NodeId, Vec<usize>),
    /// `[m×n] → [1×n]`
    SumRows(NodeId),
    /// `[m×n] → [m×1]`
    SumCols(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Pow(NodeId, f64),
    Softplus(NodeId),
    /// `1[x > 0]`, treated as constant by differentiation.
    Step(NodeId),
    /// `1` where `x > 0`, `slope` elsewhere; constant under differentiation.
    LeakyStep(NodeId, f64),
    /// Identity whose gradient is cut.
    Detach(NodeId),
    /// `out[i,j] = ‖x_i − y_j‖²`
    PairwiseSqDist(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Expand(..) => "expand",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Pow(..) => "pow",
            Op::Softplus(..) => "softplus",
            Op::Step(..) => "step",
            Op::LeakyStep(..) => "leaky_step",
            Op::Detach(..) => "detach",
            Op::PairwiseSqDist(..) => "pairwise_sq_dist",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::PairwiseSqDist(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Transpose(a)
            | Op::BroadcastRows(a, _)
            | Op::BroadcastCols(a, _)
            | Op::Expand(a, _)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Pow(a, _)
            | Op::Softplus(a)
            | Op::Step(a)
            | Op::LeakyStep(a, _)
            | Op::Detach(a) => vec![a],
        }
    }

    /// Ops whose output carries no gradient regardless of inputs.
    fn blocks_gradient(&self) -> bool {
        matches!(self, Op::Step(_) | Op::LeakyStep(..) | Op::Detach(_))
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar (or seeded) output with respect to every
/// differentiable leaf of the tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor> {
        self.by_leaf.get(&leaf)
    }

    /// Gradient for `leaf`; panics if the leaf is not differentiable.
    pub fn wrt(&self, leaf: NodeId) -> &Tensor {
        self.by_leaf
            .get(&leaf)
            .unwrap_or_else(|| panic!("node {} is not a differentiable leaf", leaf.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.by_leaf.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

/// Append-only record of tensor operations (a Wengert list).
///
/// Values are computed eagerly as ops are recorded. Leaf values can be
/// swapped with [`Tape::set_leaf`] and the recorded program replayed with
/// [`Tape::forward`]. The reverse pass is available numerically
/// ([`Tape::backward`]) or recorded onto the tape itself
/// ([`Tape::grad_graph`]), which is what makes double backprop possible.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    stale: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// The most recently recorded node.
    pub fn output(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, LeafKind::Param)
    }

    pub fn input(&mut self, value: Tensor, differentiable: bool) -> NodeId {
        self.push_leaf(value, LeafKind::Input { differentiable })
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.input(value, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&mut self, value: Tensor, kind: LeafKind) -> NodeId {
        let requires_grad = match kind {
            LeafKind::Param => true,
            LeafKind::Input { differentiable } => differentiable,
        };
        self.nodes.push(Node { op: Op::Leaf(kind), value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes[id.0].op {
            Op::Leaf(kind) => Some(kind),
            _ => None,
        }
    }

    /// Replaces a leaf value. The tape is stale until [`Tape::forward`] runs.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if !matches!(node.op, Op::Leaf(_)) {
            return Err(Error::usage(format!("node {} is not a leaf", id.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_leaf",
                format!("leaf {} has shape {:?}, got {:?}", id.0, node.value.shape(), value.shape()),
            ));
        }
        node.value = value;
        self.stale = true;
        Ok(())
    }

    /// Sets the given leaves and recomputes every recorded node in order.
    /// Returns the value of the last node.
    pub fn forward(&mut self, leaves: &[(NodeId, Tensor)]) -> Result<&Tensor> {
        for (id, value) in leaves {
            self.set_leaf(*id, value.clone())?;
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.eval(&op)?;
            if !value.is_finite() {
                return Err(Error::NonFinite { node: i, op: op.name() });
            }
            self.nodes[i].value = value;
        }
        self.stale = false;
        self.output()
            .map(|id| self.value(id))
            .ok_or_else(|| Error::usage("forward on an empty tape"))
    }

    // ---- recording ---------------------------------------------------

    fn push(&mut self, op: Op) -> Result<NodeId> {
        if self.stale {
            return Err(Error::usage("recording on a stale tape; run forward first"));
        }
        let value = self.eval(&op)?;
        let idx = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite { node: idx, op: op.name() });
        }
        let requires_grad =
            !op.blocks_gradient() && op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Ok(NodeId(idx))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Scale(a, -1.0))
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Offset(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} · {sb:?}")));
        }
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.require_matrix("transpose", a)?;
        self.push(Op::Transpose(a))
    }

    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != 1 {
            return Err(Error::shape("broadcast_rows", format!("expected [1×n], got {s:?}")));
        }
        self.push(Op::BroadcastRows(a, rows))
    }

    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 2 || s[1] != 1 {
            return Err(Error::shape("broadcast_cols", format!("expected [m×1], got {s:?}")));
        }
        self.push(Op::BroadcastCols(a, cols))
    }

    pub fn expand(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.value(a).len() != 1 {
            return Err(Error::shape("expand", format!("expected a scalar, got {:?}", self.shape(a))));
        }
        self.push(Op::Expand(a, shape.to_vec()))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.require_matrix("sum_rows", a)?;
        self.push(Op::SumRows(a))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.require_matrix("sum_cols", a)?;
        self.push(Op::SumCols(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        self.push(Op::Mean(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }

    pub fn pow(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.push(Op::Pow(a, p))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softplus(a))
    }

    pub fn step(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Step(a))
    }

    pub fn leaky_step(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakyStep(a, slope))
    }

    pub fn detach(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Detach(a))
    }

    pub fn pairwise_sq_dist(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sx.len() != 2 || sy.len() != 2 || sx[1] != sy[1] {
            return Err(Error::shape("pairwise_sq_dist", format!("{sx:?} vs {sy:?}")));
        }
        self.push(Op::PairwiseSqDist(x, y))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn require_matrix(&self, op: &'static str, a: NodeId) -> Result<()> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", self.shape(a))));
        }
        Ok(())
    }

    // ---- evaluation --------------------------------------------------

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |id: NodeId| &self.nodes[id.0].value;
        let out = match *op {
            Op::Leaf(_) => unreachable!("leaves are never evaluated"),
            Op::Add(a, b) => zip(v(a), v(b), |x, y| x + y),
            Op::Sub(a, b) => zip(v(a), v(b), |x, y| x - y),
            Op::Mul(a, b) => zip(v(a), v(b), |x, y| x * y),
            Op::Scale(a, c) => v(a).map(|x| x * c),
            Op::Offset(a, c) => v(a).map(|x| x + c),
            Op::MatMul(a, b) => {
                let (ta, tb) = (v(a), v(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                Tensor::matrix(m, n, gemm(ta.data(), tb.data(), m, k, n))?
            }
            Op::Transpose(a) => v(a).transpose(),
            Op::BroadcastRows(a, m) => {
                let row = v(a).data();
                let mut data = Vec::with_capacity(m * row.len());
                for _ in 0..m {
                    data.extend_from_slice(row);
                }
                Tensor::matrix(m, row.len(), data)?
            }
            Op::BroadcastCols(a, n) => {
                let col = v(a).data();
                let data = col.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
                Tensor::matrix(col.len(), n, data)?
            }
            Op::Expand(a, ref shape) => Tensor::full(shape, v(a).item()),
            Op::SumRows(a) => {
                let t = v(a);
                let mut acc = vec![0.0; t.cols()];
                for i in 0..t.rows() {
                    for (s, x) in acc.iter_mut().zip(t.row(i)) {
                        *s += x;
                    }
                }
                Tensor::matrix(1, t.cols(), acc)?
            }
            Op::SumCols(a) => {
                let t = v(a);
                let data = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
                Tensor::matrix(t.rows(), 1, data)?
            }
            Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
            Op::Mean(a) => {
                let t = v(a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::LeakyRelu(a, s) => v(a).map(|x| if x > 0.0 { x } else { s * x }),
            Op::Tanh(a) => v(a).map(f64::tanh),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Exp(a) => v(a).map(f64::exp),
            Op::Log(a) => v(a).map(f64::ln),
            Op::Pow(a, p) => v(a).map(|x| powf(x, p)),
            Op::Softplus(a) => v(a).map(softplus),
            Op::Step(a) => v(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::LeakyStep(a, s) => v(a).map(|x| if x > 0.0 { 1.0 } else { s }),
            Op::Detach(a) => v(a).clone(),
            Op::PairwiseSqDist(x, y) => pairwise_sq_dist(v(x), v(y)),
        };
        Ok(out)
    }

    // ---- numeric reverse pass ----------------------------------------

    /// Reverse accumulation of `seed · output` into every differentiable leaf.
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if self.stale {
            return Err(Error::usage("backward on a stale tape; run forward first"));
        }
        if seed.shape() != self.shape(output) {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), self.shape(output)),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.data().to_vec());

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf(_)) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.vjp_numeric(i, &g, &mut adj)?;
            // keep the adjoint around only for leaves
            adj[i] = None;
        }

        let mut by_leaf = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf(_) = node.op {
                if node.requires_grad {
                    let data = adj
                        .get_mut(i)
                        .and_then(Option::take)
                        .unwrap_or_else(|| vec![0.0; node.value.len()]);
                    if data.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite { node: i, op: "backward" });
                    }
                    by_leaf.insert(NodeId(i), Tensor::new(node.value.shape().to_vec(), data)?);
                }
            }
        }
        Ok(Gradients { by_leaf })
    }

    /// Gradients of a scalar output with unit seed.
    pub fn grad(&self, output: NodeId) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::usage(format!(
                "grad() needs a scalar output, node {} has shape {:?}",
                output.0,
                self.shape(output)
            )));
        }
        let seed = Tensor::new(self.shape(output).to_vec(), vec![1.0])?;
        self.backward(output, &seed)
    }

    fn vjp_numeric(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let y = node.value.data();

        macro_rules! elementwise {
            ($a:expr, |$gi:ident, $xi:ident, $yi:ident| $e:expr) => {{
                let a = $a;
                if wants(a) {
                    let x = val(a).data();
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .zip(y)
                        .map(|((&$gi, &$xi), &$yi)| {
                            let _ = $yi;
                            let _ = $xi;
                            $e
                        })
                        .collect();
                    accumulate(adj, a, contrib);
                }
            }};
        }

        match node.op {
            Op::Leaf(_) | Op::Step(_) | Op::LeakyStep(..) | Op::Detach(_) => {}
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(adj, a, g.to_vec());
                }
                if wants(b) {
                    accumulate(adj, b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(adj, a, g.to_vec());
                }
                if wants(b) {
                    accumulate(adj, b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let xb = val(b).data();
                    accumulate(adj, a, g.iter().zip(xb).map(|(g, b)| g * b).collect());
                }
                if wants(b) {
                    let xa = val(a).data();
                    accumulate(adj, b, g.iter().zip(xa).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale(a, c) => elementwise!(a, |gi, xi, yi| gi * c),
            Op::Offset(a, _) => elementwise!(a, |gi, xi, yi| gi),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if wants(a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm_into(g, false, tb.data(), true, m, n, k, &mut da);
                    accumulate(adj, a, da);
                }
                if wants(b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm_into(ta.data(), true, g, false, k, m, n, &mut db);
                    accumulate(adj, b, db);
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let gt = Tensor::matrix(r, c, g.to_vec())?.transpose();
                    accumulate(adj, a, gt.into_data());
                }
            }
            Op::BroadcastRows(a, _) => {
                if wants(a) {
                    let n = node.value.cols();
                    let mut acc = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (s, x) in acc.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    accumulate(adj, a, acc);
                }
            }
            Op::BroadcastCols(a, n) => {
                if wants(a) {
                    accumulate(adj, a, g.chunks(n).map(|r| r.iter().sum()).collect());
                }
            }
            Op::Expand(a, _) => {
                if wants(a) {
                    accumulate(adj, a, vec![g.iter().sum()]);
                }
            }
            Op::SumRows(a) => {
                if wants(a) {
                    let m = val(a).rows();
                    let mut d = Vec::with_capacity(m * g.len());
                    for _ in 0..m {
                        d.extend_from_slice(g);
                    }
                    accumulate(adj, a, d);
                }
            }
            Op::SumCols(a) => {
                if wants(a) {
                    let n = val(a).cols();
                    accumulate(adj, a, g.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect());
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    accumulate(adj, a, vec![g[0]; val(a).len()]);
                }
            }
            Op::Mean(a) => {
                if wants(a) {
                    let len = val(a).len();
                    accumulate(adj, a, vec![g[0] / len as f64; len]);
                }
            }
            Op::Relu(a) => elementwise!(a, |gi, xi, yi| if xi > 0.0 { gi } else { 0.0 }),
            Op::LeakyRelu(a, s) => elementwise!(a, |gi, xi, yi| if xi > 0.0 { gi } else { gi * s }),
            Op::Tanh(a) => elementwise!(a, |gi, xi, yi| gi * (1.0 - yi * yi)),
            Op::Sigmoid(a) => elementwise!(a, |gi, xi, yi| gi * (yi * (1.0 - yi))),
            Op::Exp(a) => elementwise!(a, |gi, xi, yi| gi * yi),
            Op::Log(a) => elementwise!(a, |gi, xi, yi| gi * powf(xi, -1.0)),
            Op::Pow(a, p) => elementwise!(a, |gi, xi, yi| if p == 1.0 {
                gi
            } else {
                gi * (powf(xi, p - 1.0) * p)
            }),
            Op::Softplus(a) => elementwise!(a, |gi, xi, yi| gi * sigmoid(xi)),
            Op::PairwiseSqDist(x, yid) => {
                let (tx, ty) = (val(x), val(yid));
                let (m, n, d) = (tx.rows(), ty.rows(), tx.cols());
                if wants(x) {
                    // dX = 2·(rowsum(G) ⊙ X − G·Y)
                    let mut dx = vec![0.0; m * d];
                    gemm_into(g, false, ty.data(), false, m, n, d, &mut dx);
                    for i in 0..m {
                        let rs: f64 = g[i * n..(i + 1) * n].iter().sum();
                        for j in 0..d {
                            let k = i * d + j;
                            dx[k] = (tx.data()[k] * rs - dx[k]) * 2.0;
                        }
                    }
                    accumulate(adj, x, dx);
                }
                if wants(yid) {
                    // dY = 2·(colsum(G) ⊙ Y − Gᵀ·X)
                    let mut dy = vec![0.0; n * d];
                    gemm_into(g, true, tx.data(), false, n, m, d, &mut dy);
                    let mut cs = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (s, v) in cs.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    for (j, &cj) in cs.iter().enumerate().take(n) {
                        for c in 0..d {
                            let k = j * d + c;
                            dy[k] = (ty.data()[k] * cj - dy[k]) * 2.0;
                        }
                    }
                    accumulate(adj, yid, dy);
                }
            }
        }
        Ok(())
    }

    // ---- recorded reverse pass ---------------------------------------

    /// Records the reverse pass of `output` (seeded by `seed`, or by ones for
    /// a scalar output) as new tape nodes and returns the gradient node of
    /// each entry of `wrt`. The returned nodes are ordinary differentiable
    /// nodes, so their own gradients can be taken again.
    pub fn grad_graph(
        &mut self,
        output: NodeId,
        seed: Option<NodeId>,
        wrt: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let seed = match seed {
            Some(s) => {
                if self.shape(s) != self.shape(output) {
                    return Err(Error::shape(
                        "grad_graph",
                        format!("seed {:?} vs output {:?}", self.shape(s), self.shape(output)),
                    ));
                }
                s
            }
            None => {
                let shape = self.shape(output).to_vec();
                self.constant(Tensor::ones(&shape))
            }
        };

        // Only nodes on a path to some `wrt` leaf need adjoints.
        let mut reaches = vec![false; output.0 + 1];
        for i in 0..=output.0 {
            reaches[i] = self.nodes[i].requires_grad
                && (wrt.iter().any(|w| w.0 == i) || self.nodes[i].op.inputs().iter().any(|j| reaches[j.0]));
        }

        let mut adj: BTreeMap<usize, NodeId> = BTreeMap::new();
        adj.insert(output.0, seed);
        for i in (0..=output.0).rev() {
            if !reaches[i] || matches!(self.nodes[i].op, Op::Leaf(_)) {
                continue;
            }
            let Some(g) = adj.remove(&i) else { continue };
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.vjp_graph(NodeId(i), &op, g, &reaches)? {
                let merged = match adj.get(&input.0) {
                    Some(&prev) => self.add(prev, contrib)?,
                    None => contrib,
                };
                adj.insert(input.0, merged);
            }
        }

        wrt.iter()
            .map(|&w| match adj.get(&w.0) {
                Some(&g) => Ok(g),
                None => {
                    let shape = self.shape(w).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Gradient of a per-row scalar output with respect to an input leaf,
    /// recorded on the tape so it stays differentiable in the parameters.
    pub fn input_grad(&mut self, output: NodeId, wrt: NodeId) -> Result<NodeId> {
        let s = self.shape(output);
        if s.len() != 2 || s[1] != 1 {
            return Err(Error::usage(format!(
                "input_grad needs one scalar per row, output has shape {s:?}"
            )));
        }
        match self.leaf_kind(wrt) {
            Some(LeafKind::Input { .. }) => {}
            _ => return Err(Error::usage(format!("node {} is not an input leaf", wrt.0))),
        }
        if !self.requires_grad(wrt) {
            return Err(Error::usage(format!("input leaf {} is not differentiable", wrt.0)));
        }
        Ok(self.grad_graph(output, None, &[wrt])?[0])
    }

    fn vjp_graph(&mut self, y: NodeId, op: &Op, g: NodeId, reaches: &[bool]) -> Result<Vec<(NodeId, NodeId)>> {
        let wants = |_: &Self, id: NodeId| reaches[id.0];
        let mut out = Vec::new();
        match *op {
            Op::Leaf(_) | Op::Step(_) | Op::LeakyStep(..) | Op::Detach(_) => {}
            Op::Add(a, b) => {
                if wants(self, a) {
                    out.push((a, g));
                }
                if wants(self, b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if wants(self, a) {
                    out.push((a, g));
                }
                if wants(self, b) {
                    out.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if wants(self, a) {
                    out.push((a, self.mul(g, b)?));
                }
                if wants(self, b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c)?)),
            Op::Offset(a, _) => out.push((a, g)),
            _ if !op.inputs().iter().any(|&i| wants(self, i)) => {}
            Op::MatMul(a, b) => {
                if wants(self, a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if wants(self, b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g)?)),
            Op::BroadcastRows(a, _) => out.push((a, self.sum_rows(g)?)),
            Op::BroadcastCols(a, _) => out.push((a, self.sum_cols(g)?)),
            Op::Expand(a, _) => {
                let s = self.sum(g)?;
                let shape = self.shape(a).to_vec();
                out.push((a, self.reshape_scalar(s, &shape)?));
            }
            Op::SumRows(a) => {
                let m = self.value(a).rows();
                out.push((a, self.broadcast_rows(g, m)?));
            }
            Op::SumCols(a) => {
                let n = self.value(a).cols();
                out.push((a, self.broadcast_cols(g, n)?));
            }
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.expand(g, &shape)?));
            }
            Op::Mean(a) => {
                let shape = self.shape(a).to_vec();
                let len = self.value(a).len() as f64;
                let e = self.expand(g, &shape)?;
                out.push((a, self.scale(e, 1.0 / len)?));
            }
            Op::Relu(a) => {
                let mask = self.step(a)?;
                out.push((a, self.mul(g, mask)?));
            }
            Op::LeakyRelu(a, s) => {
                let mask = self.leaky_step(a, s)?;
                out.push((a, self.mul(g, mask)?));
            }
            Op::Tanh(a) => {
                let y2 = self.mul(y, y)?;
                let neg = self.scale(y2, -1.0)?;
                let d = self.offset(neg, 1.0)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(y, -1.0)?;
                let one_minus = self.offset(neg, 1.0)?;
                let d = self.mul(y, one_minus)?;
                out.push((a, self.mul(g, d)?));
            }
            Op::Exp(a) => out.push((a, self.mul(g, y)?)),
            Op::Log(a) => {
                let inv = self.pow(a, -1.0)?;
                out.push((a, self.mul(g, inv)?));
            }
            Op::Pow(a, p) => {
                if p == 1.0 {
                    out.push((a, g));
                } else {
                    let pm1 = self.pow(a, p - 1.0)?;
                    let d = self.scale(pm1, p)?;
                    out.push((a, self.mul(g, d)?));
                }
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a)?;
                out.push((a, self.mul(g, s)?));
            }
            Op::PairwiseSqDist(x, yy) => {
                let d = self.value(x).cols();
                if wants(self, x) {
                    let rs = self.sum_cols(g)?;
                    let rs = self.broadcast_cols(rs, d)?;
                    let a1 = self.mul(rs, x)?;
                    let a2 = self.matmul(g, yy)?;
                    let diff = self.sub(a1, a2)?;
                    out.push((x, self.scale(diff, 2.0)?));
                }
                if wants(self, yy) {
                    let gt = self.transpose(g)?;
                    let cs = self.sum_cols(gt)?;
                    let cs = self.broadcast_cols(cs, d)?;
                    let b1 = self.mul(cs, yy)?;
                    let b2 = self.matmul(gt, x)?;
                    let diff = self.sub(b1, b2)?;
                    out.push((yy, self.scale(diff, 2.0)?));
                }
            }
        }
        Ok(out)
    }

    /// Gives a one-element node the (scalar or `[1×1]`) shape of `shape`.
    fn reshape_scalar(&mut self, s: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(s) == shape {
            Ok(s)
        } else {
            self.expand(s, shape)
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, contrib: Vec<f64>) {
    match &mut adj[id.0] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(&contrib) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked at record time")
}

/// Integer exponents go through `powi` so that negative bases stay finite.
fn powf(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn pairwise_sq_dist(x: &Tensor, y: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), y.rows());
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let xi = x.row(i);
        for j in 0..n {
            data.push(xi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum());
        }
    }
    Tensor::matrix(m, n, data).expect("m×n by construction")
}
