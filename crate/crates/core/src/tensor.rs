//! Dense f64 tensors with tape-based reverse-mode automatic differentiation.
//!
//! The tape owns every intermediate value; callers hold plain [`NodeId`]
//! handles. A tape records one forward computation and supports exactly one
//! backward pass. All reductions run in fixed left-to-right order so repeated
//! runs are bitwise identical.
//!
//! Shapes are restricted to what the networks need: scalars (`[1]`), vectors
//! (`[n]`) and row-major matrices (`[r, c]`). Forward values stay finite for
//! finite inputs as long as `exp` arguments stay below ~700; `softmax` and
//! `log_softmax` subtract the running maximum and `sigmoid` is evaluated in
//! its numerically safe branch, so pre-activations of any magnitude are fine.

use crate::error::{Error, Result};

/// Identifier of a node recorded on a [`Tape`].
pub type NodeId = usize;

/// A dense row-major f64 tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows of a matrix, or 1 for a vector.
    fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

/// Operations recorded on the tape. Each stores the parent node ids it
/// differentiates into.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[r,c]` matrix plus a `[c]` vector broadcast over rows.
    AddRowVec(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Scale(NodeId, f64),
    /// The constant is folded into the stored value at record time; the
    /// adjoint is the identity, so only the parent id is kept.
    AddConst(NodeId),
    /// `min(x, c)` elementwise; gradient passes where `x <= c`.
    ClampMax(NodeId, f64),
    /// Softmax over the first `valid` entries; the rest are exactly zero.
    Softmax(NodeId, usize),
    LogSoftmax(NodeId),
    Concat(Vec<NodeId>),
    /// Equal-length vectors stacked as the rows of a matrix.
    Stack(Vec<NodeId>),
    Sum(NodeId),
    /// Single element of a vector, as a scalar.
    Pick(NodeId, usize),
    /// Single row of a matrix, as a vector.
    Row(NodeId, usize),
    Transpose(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient map produced by [`Tape::backward`], keyed by node id.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node's value, if any
    /// gradient reached it. Leaves always have an entry (zero if unused).
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }
}

/// Records a forward computation and replays it in reverse for gradients.
///
/// A tape and the node ids it hands out are confined to one thread of
/// execution; run independent tapes for parallel work.
pub struct Tape {
    nodes: Vec<Node>,
    backward_taken: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_taken: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        id
    }

    /// Record an input tensor. Leaves are the only nodes callers typically
    /// query gradients for; constants are just leaves nobody asks about.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.leaf(Tensor::scalar(x))
    }

    /// Matrix product. Accepts `[m,k]x[k,n] -> [m,n]`, `[m,k]x[k] -> [m]`,
    /// `[k]x[k,n] -> [n]` and `[k]x[k] -> [1]` (dot product).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let (m, ka) = (ta.rows(), ta.cols());
        let (kb, n) = if tb.shape.len() == 2 {
            (tb.shape[0], tb.shape[1])
        } else {
            (tb.len(), 1)
        };
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data = matmul_raw(&ta.data, &tb.data, m, ka, n);
        let a_is_vec = ta.shape.len() == 1;
        let b_is_vec = tb.shape.len() == 1;
        let value = match (a_is_vec, b_is_vec) {
            (true, true) => Tensor::scalar(data[0]),
            (false, true) => Tensor::vector(data),
            (true, false) => Tensor::vector(data),
            (false, false) => Tensor::new(vec![m, n], data)?,
        };
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Binary elementwise op over equal shapes, or with one scalar operand
    /// broadcast over the other.
    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let value = if ta.shape == tb.shape {
            let data = ta
                .data
                .iter()
                .zip(&tb.data)
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor {
                shape: ta.shape.clone(),
                data,
            }
        } else if tb.is_scalar() {
            let y = tb.data[0];
            Tensor {
                shape: ta.shape.clone(),
                data: ta.data.iter().map(|&x| f(x, y)).collect(),
            }
        } else if ta.is_scalar() {
            let x = ta.data[0];
            Tensor {
                shape: tb.shape.clone(),
                data: tb.data.iter().map(|&y| f(x, y)).collect(),
            }
        } else {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        };
        Ok(self.push(op, value))
    }

    /// Add a `[c]` vector to every row of an `[r,c]` matrix.
    pub fn add_row_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (tm, tv) = (&self.nodes[m].value, &self.nodes[v].value);
        if tm.shape.len() != 2 || tv.shape.len() != 1 || tm.shape[1] != tv.len() {
            return Err(Error::ShapeMismatch {
                op: "add_row_vec",
                lhs: tm.shape.clone(),
                rhs: tv.shape.clone(),
            });
        }
        let cols = tv.len();
        let mut data = tm.data.clone();
        for (i, x) in data.iter_mut().enumerate() {
            *x += tv.data[i % cols];
        }
        let value = Tensor {
            shape: tm.shape.clone(),
            data,
        };
        Ok(self.push(Op::AddRowVec(m, v), value))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, sigmoid_stable);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.map_unary(a, f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.map_unary(a, |x| x * c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.map_unary(a, |x| x + c);
        self.push(Op::AddConst(a), value)
    }

    /// `min(x, c)` elementwise.
    pub fn clamp_max(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.map_unary(a, |x| x.min(c));
        self.push(Op::ClampMax(a, c), value)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let s = self.scale(a, -1.0);
        self.add_const(s, 1.0)
    }

    fn map_unary(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = &self.nodes[a].value;
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Softmax over a vector, computed with max-subtraction. Output entries
    /// are positive and sum to one.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a].value.len();
        self.softmax_masked(a, n)
    }

    /// Softmax over the first `valid` entries of a vector; remaining entries
    /// (padding) come out exactly zero and receive no gradient.
    pub fn softmax_masked(&mut self, a: NodeId, valid: usize) -> Result<NodeId> {
        let ta = &self.nodes[a].value;
        if ta.shape.len() != 1 || ta.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "softmax expects a non-empty vector, got shape {:?}",
                ta.shape
            )));
        }
        if valid == 0 || valid > ta.len() {
            return Err(Error::InvalidArgument(format!(
                "softmax valid length {} out of range for {} entries",
                valid,
                ta.len()
            )));
        }
        let mut data = vec![0.0; ta.len()];
        softmax_raw(&ta.data[..valid], &mut data[..valid]);
        let value = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(Op::Softmax(a, valid), value))
    }

    /// Log-softmax over a vector, fused so `log(0)` never occurs.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = &self.nodes[a].value;
        if ta.shape.len() != 1 || ta.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "log_softmax expects a non-empty vector, got shape {:?}",
                ta.shape
            )));
        }
        let max = ta.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &x in &ta.data {
            sum += (x - max).exp();
        }
        let lse = max + sum.ln();
        let value = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| x - lse).collect(),
        };
        Ok(self.push(Op::LogSoftmax(a), value))
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let tp = &self.nodes[p].value;
            if tp.shape.len() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "concat expects vectors, got shape {:?}",
                    tp.shape
                )));
            }
            data.extend_from_slice(&tp.data);
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Stack vectors of equal length as the rows of a new matrix.
    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("stack of zero rows".into()));
        }
        let cols = self.nodes[rows[0]].value.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let tr = &self.nodes[r].value;
            if tr.shape.len() != 1 || tr.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: vec![cols],
                    rhs: tr.shape.clone(),
                });
            }
            data.extend_from_slice(&tr.data);
        }
        let value = Tensor::new(vec![rows.len(), cols], data)?;
        Ok(self.push(Op::Stack(rows.to_vec()), value))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let mut acc = 0.0;
        for &x in &self.nodes[a].value.data {
            acc += x;
        }
        self.push(Op::Sum(a), Tensor::scalar(acc))
    }

    /// Element `idx` of a vector, as a scalar.
    pub fn pick(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        let ta = &self.nodes[a].value;
        if idx >= ta.len() {
            return Err(Error::InvalidArgument(format!(
                "pick index {} out of range for {} entries",
                idx,
                ta.len()
            )));
        }
        let value = Tensor::scalar(ta.data[idx]);
        Ok(self.push(Op::Pick(a, idx), value))
    }

    /// Row `r` of a matrix, as a vector.
    pub fn row(&mut self, a: NodeId, r: usize) -> Result<NodeId> {
        let ta = &self.nodes[a].value;
        if ta.shape.len() != 2 || r >= ta.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "row {} out of range for shape {:?}",
                r, ta.shape
            )));
        }
        let cols = ta.shape[1];
        let value = Tensor::vector(ta.data[r * cols..(r + 1) * cols].to_vec());
        Ok(self.push(Op::Row(a, r), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = &self.nodes[a].value;
        if ta.shape.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "transpose expects a matrix, got shape {:?}",
                ta.shape
            )));
        }
        let (r, c) = (ta.shape[0], ta.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.data[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose(a), Tensor::new(vec![c, r], data)?))
    }

    /// Reverse-topological gradient accumulation seeded at `loss`.
    ///
    /// `loss` must be a scalar node on this tape. Exactly one backward pass
    /// per recording; every leaf gets a gradient entry (zero if unused).
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.backward_taken {
            return Err(Error::InvalidState(
                "backward already taken on this tape".into(),
            ));
        }
        if loss >= self.nodes.len() {
            return Err(Error::InvalidState(format!(
                "node {} is not tracked on this tape ({} nodes)",
                loss,
                self.nodes.len()
            )));
        }
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape
            )));
        }
        self.backward_taken = true;

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else { continue };
            self.propagate(id, &g, &mut adj);
            adj[id] = Some(g);
        }

        // Unused leaves still get a zero gradient of their own shape.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && adj[id].is_none() {
                adj[id] = Some(Tensor::zeros(&node.value.shape));
            }
        }
        Ok(Gradients { by_node: adj })
    }

    fn propagate(&self, id: NodeId, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k) = (ta.rows(), ta.cols());
                let n = if tb.shape.len() == 2 { tb.shape[1] } else { 1 };
                // dA = g . B^T ; dB = A^T . g (canonical [m,k]x[k,n] view)
                let bt = transpose_raw(&tb.data, k, n);
                let da = matmul_raw(&g.data, &bt, m, n, k);
                let at = transpose_raw(&ta.data, m, k);
                let db = matmul_raw(&at, &g.data, k, m, n);
                accumulate(adj, *a, &da, &ta.shape);
                accumulate(adj, *b, &db, &tb.shape);
            }
            Op::Add(a, b) => {
                self.acc_broadcast(adj, *a, &g.data, 1.0);
                self.acc_broadcast(adj, *b, &g.data, 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(adj, *a, &g.data, 1.0);
                self.acc_broadcast(adj, *b, &g.data, -1.0);
            }
            Op::Mul(a, b) => {
                let tb = &self.nodes[*b].value;
                let ta = &self.nodes[*a].value;
                let ga: Vec<f64> = if tb.is_scalar() && !ta.is_scalar() {
                    g.data.iter().map(|&x| x * tb.data[0]).collect()
                } else if ta.is_scalar() && !tb.is_scalar() {
                    // out_i = a * b_i ; da = sum(g . b)
                    g.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect()
                } else {
                    g.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect()
                };
                let gb: Vec<f64> = if ta.is_scalar() && !tb.is_scalar() {
                    g.data.iter().map(|&x| x * ta.data[0]).collect()
                } else {
                    g.data.iter().zip(&ta.data).map(|(&x, &y)| x * y).collect()
                };
                self.acc_raw(adj, *a, &ga);
                self.acc_raw(adj, *b, &gb);
            }
            Op::AddRowVec(m, v) => {
                let cols = self.nodes[*v].value.len();
                accumulate(adj, *m, &g.data, &self.nodes[*m].value.shape);
                let mut gv = vec![0.0; cols];
                for (i, &x) in g.data.iter().enumerate() {
                    gv[i % cols] += x;
                }
                accumulate(adj, *v, &gv, &self.nodes[*v].value.shape);
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                let ga: Vec<f64> = g
                    .data
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * (1.0 - yi * yi))
                    .collect();
                self.acc_raw(adj, *a, &ga);
            }
            Op::Sigmoid(a) => {
                let y = &node.value.data;
                let ga: Vec<f64> = g
                    .data
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * yi * (1.0 - yi))
                    .collect();
                self.acc_raw(adj, *a, &ga);
            }
            Op::Exp(a) => {
                let y = &node.value.data;
                let ga: Vec<f64> = g.data.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect();
                self.acc_raw(adj, *a, &ga);
            }
            Op::Scale(a, c) => {
                let ga: Vec<f64> = g.data.iter().map(|&x| x * c).collect();
                self.acc_raw(adj, *a, &ga);
            }
            Op::AddConst(a) => self.acc_raw(adj, *a, &g.data),
            Op::ClampMax(a, c) => {
                let ta = &self.nodes[*a].value;
                let ga: Vec<f64> = g
                    .data
                    .iter()
                    .zip(&ta.data)
                    .map(|(&gi, &xi)| if xi <= *c { gi } else { 0.0 })
                    .collect();
                self.acc_raw(adj, *a, &ga);
            }
            Op::Softmax(a, valid) => {
                let y = &node.value.data;
                let mut dot = 0.0;
                for i in 0..*valid {
                    dot += g.data[i] * y[i];
                }
                let mut ga = vec![0.0; y.len()];
                for i in 0..*valid {
                    ga[i] = y[i] * (g.data[i] - dot);
                }
                self.acc_raw(adj, *a, &ga);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value.data;
                let gsum: f64 = g.data.iter().sum();
                let ga: Vec<f64> = g
                    .data
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi - yi.exp() * gsum)
                    .collect();
                self.acc_raw(adj, *a, &ga);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p].value.len();
                    self.acc_raw(adj, p, &g.data[off..off + n]);
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let cols = node.value.shape[1];
                for (i, &r) in rows.iter().enumerate() {
                    self.acc_raw(adj, r, &g.data[i * cols..(i + 1) * cols]);
                }
            }
            Op::Sum(a) => {
                let ta = &self.nodes[*a].value;
                let ga = vec![g.data[0]; ta.len()];
                self.acc_raw(adj, *a, &ga);
            }
            Op::Pick(a, idx) => {
                let ta = &self.nodes[*a].value;
                let mut ga = vec![0.0; ta.len()];
                ga[*idx] = g.data[0];
                self.acc_raw(adj, *a, &ga);
            }
            Op::Row(a, r) => {
                let ta = &self.nodes[*a].value;
                let cols = ta.shape[1];
                let mut ga = vec![0.0; ta.len()];
                ga[r * cols..(r + 1) * cols].copy_from_slice(&g.data);
                self.acc_raw(adj, *a, &ga);
            }
            Op::Transpose(a) => {
                let (c, r) = (node.value.shape[0], node.value.shape[1]);
                let ga = transpose_raw(&g.data, c, r);
                self.acc_raw(adj, *a, &ga);
            }
        }
    }

    /// Accumulate `sign * g` into a parent that may have been a broadcast
    /// scalar in the forward op.
    fn acc_broadcast(&self, adj: &mut [Option<Tensor>], parent: NodeId, g: &[f64], sign: f64) {
        let tp = &self.nodes[parent].value;
        if tp.is_scalar() && g.len() > 1 {
            let mut s = 0.0;
            for &x in g {
                s += x;
            }
            self.acc_raw(adj, parent, &[s * sign]);
        } else if sign == 1.0 {
            self.acc_raw(adj, parent, g);
        } else {
            let neg: Vec<f64> = g.iter().map(|&x| x * sign).collect();
            self.acc_raw(adj, parent, &neg);
        }
    }

    fn acc_raw(&self, adj: &mut [Option<Tensor>], parent: NodeId, g: &[f64]) {
        let tp = &self.nodes[parent].value;
        // Scalar parents of broadcast ops receive the summed gradient.
        if tp.is_scalar() && g.len() > 1 {
            let mut s = 0.0;
            for &x in g {
                s += x;
            }
            accumulate(adj, parent, &[s], &tp.shape);
        } else {
            accumulate(adj, parent, g, &tp.shape);
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], parent: NodeId, g: &[f64], shape: &[usize]) {
    match &mut adj[parent] {
        Some(t) => {
            for (dst, &src) in t.data.iter_mut().zip(g) {
                *dst += src;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: g.to_vec(),
            });
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn softmax_raw(input: &[f64], out: &mut [f64]) {
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max relative error between tape gradients and central finite differences.
///
/// `f` rebuilds the scalar function on a fresh tape from leaves holding the
/// given points. The error at each coordinate is
/// `|analytic - numeric| / max(1, |analytic|)`; non-finite intermediates are
/// reported as infinity rather than an error.
pub fn grad_check<F>(f: F, points: &[Tensor], h: f64) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |points: &[Tensor]| -> Option<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = f(&mut tape, &ids).ok()?;
        let v = tape.value(loss).item();
        v.is_finite().then_some(v)
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let Ok(loss) = f(&mut tape, &ids) else {
        return f64::INFINITY;
    };
    if !tape.value(loss).item().is_finite() {
        return f64::INFINITY;
    }
    let Ok(grads) = tape.backward(loss) else {
        return f64::INFINITY;
    };

    let mut max_err: f64 = 0.0;
    for (pi, point) in points.iter().enumerate() {
        let analytic = grads.get(ids[pi]).expect("leaf gradient");
        for ci in 0..point.len() {
            let mut plus = points.to_vec();
            plus[pi].data[ci] += h;
            let mut minus = points.to_vec();
            minus[pi].data[ci] -= h;
            let (Some(fp), Some(fm)) = (eval(&plus), eval(&minus)) else {
                return f64::INFINITY;
            };
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data[ci];
            if !a.is_finite() || !numeric.is_finite() {
                return f64::INFINITY;
            }
            let err = (a - numeric).abs() / a.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    max_err
}
