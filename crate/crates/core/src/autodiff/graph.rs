//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every input id is smaller than
//! the id of the node consuming it and the insertion order is a topological
//! order. `backward` walks the list once in reverse.

use super::tensor::{gemm, sigmoid, softplus, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Min(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    ScaleBy(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    SumCols(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only list of operations and their cached outputs.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradients for `ids` in order; a parameter the loss never reached is an error.
    pub fn collect(&self, ids: &[NodeId]) -> Result<Vec<Tensor>> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| self.get(id).cloned().ok_or(Error::MissingGradient(i)))
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Input leaf; non-finite data is rejected.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite("graph input".into()));
        }
        Ok(self.constant(value))
    }

    /// A constant copy of `id`'s current value (stops gradient flow).
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    fn binary_same(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::shape(
                op,
                format!("[{}, {}] vs [{}, {}]", va.rows(), va.cols(), vb.rows(), vb.cols()),
            ));
        }
        Ok(())
    }

    fn row_operand(&self, op: &'static str, a: NodeId, row: NodeId) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::shape(
                op,
                format!(
                    "row operand [{}, {}] does not broadcast over [{}, {}]",
                    vr.rows(),
                    vr.cols(),
                    va.rows(),
                    va.cols()
                ),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("[{}, {}] x [{}, {}]", va.rows(), va.cols(), vb.rows(), vb.cols()),
            ));
        }
        let v = gemm(va, false, vb, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_operand("add_row", a, row)?;
        let v = add_row_kernel(self.value(a), self.value(row));
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::AddRow(a, row), v, rg))
    }

    /// `a * row` elementwise with `row` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_operand("mul_row", a, row)?;
        let (va, vr) = (self.value(a), self.value(row));
        let c = va.cols();
        let vals = va
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * vr.values()[i % c])
            .collect();
        let v = Tensor::from_parts(va.rows(), c, vals);
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(Op::MulRow(a, row), v, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("min", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| if x <= y { x } else { y });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Min(a, b), v, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), v, rg)
    }

    /// `a * s` where `s` is a one-element node.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s).item()?;
        let v = self.value(a).map(|x| x * sv);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Op::ScaleBy(a, s), v, rg))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(Op::Exp(a), v, rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(Op::Softplus(a), v, rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(Op::Square(a), v, rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        self.push(Op::Sqrt(a), v, rg)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(Op::Abs(a), v, rg)
    }

    /// Row sums, `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let vals = (0..va.rows()).map(|r| va.row_slice(r).iter().sum()).collect();
        let v = Tensor::from_parts(va.rows(), 1, vals);
        let rg = self.rg(a);
        self.push(Op::SumCols(a), v, rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).values().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Tensor::from_parts(1, 1, vec![s]), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let s = va.values().iter().sum::<f64>() / va.len() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), Tensor::from_parts(1, 1, vec![s]), rg)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{} rows vs {} rows", va.rows(), vb.rows()),
            ));
        }
        let (ca, cb) = (va.cols(), vb.cols());
        let mut vals = Vec::with_capacity(va.rows() * (ca + cb));
        for r in 0..va.rows() {
            vals.extend_from_slice(va.row_slice(r));
            vals.extend_from_slice(vb.row_slice(r));
        }
        let v = Tensor::from_parts(va.rows(), ca + cb, vals);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatCols(a, b), v, rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} outside {} columns", va.cols()),
            ));
        }
        let mut vals = Vec::with_capacity(va.rows() * (end - start));
        for r in 0..va.rows() {
            vals.extend_from_slice(&va.row_slice(r)[start..end]);
        }
        let v = Tensor::from_parts(va.rows(), end - start, vals);
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols(a, start, end), v, rg))
    }

    /// Reverse-mode sweep from a one-element loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(1, 1, vec![1.0]));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let send = |grads: &mut [Option<Tensor>], id: NodeId, t: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(t.values()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(a) {
                    send(grads, a, gemm(g, false, val(b), true));
                }
                if self.rg(b) {
                    send(grads, b, gemm(val(a), true, g, false));
                }
            }
            Op::AddRow(a, r) => {
                send(grads, a, g.clone());
                if self.rg(r) {
                    send(grads, r, col_sums(g));
                }
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (val(a), val(r));
                let c = va.cols();
                if self.rg(a) {
                    let vals = g
                        .values()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * vr.values()[i % c])
                        .collect();
                    send(grads, a, Tensor::from_parts(va.rows(), c, vals));
                }
                if self.rg(r) {
                    send(grads, r, col_sums(&g.zip(va, |x, y| x * y)));
                }
            }
            Op::Add(a, b) => {
                send(grads, a, g.clone());
                send(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                send(grads, a, g.clone());
                if self.rg(b) {
                    send(grads, b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    send(grads, a, g.zip(val(b), |x, y| x * y));
                }
                if self.rg(b) {
                    send(grads, b, g.zip(val(a), |x, y| x * y));
                }
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(a), val(b));
                let mask: Vec<bool> = va.values().iter().zip(vb.values()).map(|(x, y)| x <= y).collect();
                let pick = |first: bool| {
                    let vals = g
                        .values()
                        .iter()
                        .zip(&mask)
                        .map(|(&x, &m)| if m == first { x } else { 0.0 })
                        .collect();
                    Tensor::from_parts(g.rows(), g.cols(), vals)
                };
                if self.rg(a) {
                    send(grads, a, pick(true));
                }
                if self.rg(b) {
                    send(grads, b, pick(false));
                }
            }
            Op::Scale(a, c) => send(grads, a, g.map(|x| x * c)),
            Op::AddScalar(a) => send(grads, a, g.clone()),
            Op::ScaleBy(a, s) => {
                let sv = val(s).values()[0];
                if self.rg(a) {
                    send(grads, a, g.map(|x| x * sv));
                }
                if self.rg(s) {
                    let d: f64 = g.values().iter().zip(val(a).values()).map(|(x, y)| x * y).sum();
                    send(grads, s, Tensor::from_parts(1, 1, vec![d]));
                }
            }
            Op::Tanh(a) => send(grads, a, g.zip(&node.value, |x, y| x * (1.0 - y * y))),
            Op::Relu(a) => send(grads, a, g.zip(val(a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Exp(a) => send(grads, a, g.zip(&node.value, |x, y| x * y)),
            Op::Softplus(a) => send(grads, a, g.zip(val(a), |x, y| x * sigmoid(y))),
            Op::Square(a) => send(grads, a, g.zip(val(a), |x, y| 2.0 * x * y)),
            Op::Sqrt(a) => send(grads, a, g.zip(&node.value, |x, y| x / (2.0 * y))),
            Op::Abs(a) => send(grads, a, g.zip(val(a), |x, y| x * y.signum())),
            Op::SumCols(a) => {
                let va = val(a);
                let c = va.cols();
                let vals = (0..va.len()).map(|i| g.values()[i / c]).collect();
                send(grads, a, Tensor::from_parts(va.rows(), c, vals));
            }
            Op::Sum(a) => {
                let va = val(a);
                send(grads, a, Tensor::full(va.rows(), va.cols(), g.values()[0]));
            }
            Op::Mean(a) => {
                let va = val(a);
                let d = g.values()[0] / va.len() as f64;
                send(grads, a, Tensor::full(va.rows(), va.cols(), d));
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = g.row_slice(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                send(grads, a, Tensor::from_parts(rows, ca, ga));
                send(grads, b, Tensor::from_parts(rows, cb, gb));
            }
            Op::SliceCols(a, start, end) => {
                let va = val(a);
                let c = va.cols();
                let mut vals = vec![0.0; va.len()];
                for r in 0..va.rows() {
                    vals[r * c + start..r * c + end].copy_from_slice(g.row_slice(r));
                }
                send(grads, a, Tensor::from_parts(va.rows(), c, vals));
            }
        }
    }
}

pub(crate) fn add_row_kernel(a: &Tensor, row: &Tensor) -> Tensor {
    let c = a.cols();
    let vals = a
        .values()
        .iter()
        .enumerate()
        .map(|(i, &x)| x + row.values()[i % c])
        .collect();
    Tensor::from_parts(a.rows(), c, vals)
}

fn col_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for r in 0..g.rows() {
        for (o, x) in out.iter_mut().zip(g.row_slice(r)) {
            *o += x;
        }
    }
    Tensor::from_parts(1, c, out)
}
