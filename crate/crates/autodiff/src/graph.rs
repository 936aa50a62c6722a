#![allow(clippy::needless_range_loop)] // index loops mirror the math

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tensor::{Data, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    /// Broadcast-add a row vector to every row of a matrix.
    AddRowVec(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Div(NodeId, NodeId),
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Sqrt(NodeId),
    Log(NodeId),
    ClampMin(NodeId, f64),
    Softmax {
        x: NodeId,
        mask: Option<Vec<bool>>,
    },
    /// Max over rows of a matrix (axis 0), restricted to valid rows.
    /// `argmax[c]` records the winning row per column; ties keep the
    /// lowest row index.
    MaxPoolRows {
        x: NodeId,
        argmax: Vec<usize>,
    },
    MeanAll(NodeId),
    SumAll(NodeId),
    /// Mean over one axis of a matrix: axis 0 -> (cols,), axis 1 -> (rows,).
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    EmbeddingLookup {
        table: NodeId,
        indices: Vec<usize>,
    },
    PadRows(NodeId),
    Conv1d {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        width: usize,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Data,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// A dynamically recorded computation graph.
///
/// Operations append nodes in topological order; [`Graph::backward`] walks
/// the recording in reverse and accumulates exact analytic gradients into
/// every `requires_grad` leaf reachable from the loss.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            shape,
            values: Data::Owned(values),
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.node(id).values
    }

    /// Scalar value of a single-element node.
    pub fn value(&self, id: NodeId) -> f64 {
        self.values(id)[0]
    }

    /// Gradient of the last `backward` call w.r.t. `id`, if the node
    /// requires gradients. Leaves that the loss never touched report zeros.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        let node = self.node(id);
        if !node.requires_grad {
            return None;
        }
        node.grad.as_deref()
    }

    // ------------------------------------------------------------------
    // Leaves
    // ------------------------------------------------------------------

    pub fn leaf(&mut self, tensor: &Tensor, requires_grad: bool) -> NodeId {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, tensor: &Tensor) -> NodeId {
        self.leaf(tensor, false)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    /// Leaf backed by a shared buffer; used for model parameters so graphs
    /// never copy the parameter store.
    pub fn leaf_shared(
        &mut self,
        shape: Vec<usize>,
        values: Arc<Vec<f64>>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(TensorError::contract(
                "leaf_shared",
                format!("shape {:?} incompatible with {} values", shape, values.len()),
            ));
        }
        self.nodes.push(Node {
            shape,
            values: Data::Shared(values),
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    // ------------------------------------------------------------------
    // Elementwise / unary
    // ------------------------------------------------------------------

    fn binary_same_shape(
        &mut self,
        opname: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.node(a).shape != self.node(b).shape {
            return Err(TensorError::shape(opname, &self.node(a).shape, &self.node(b).shape));
        }
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(self.node(a).shape.clone(), values, rg, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let values: Vec<f64> = self.values(x).iter().map(|&v| f(v)).collect();
        let rg = self.requires(x);
        self.push(self.node(x).shape.clone(), values, rg, op)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v + c, Op::AddConst(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        // NaN propagates so divergence stays observable downstream
        self.unary(
            x,
            |v| if v > 0.0 || v.is_nan() { v } else { 0.0 },
            Op::Relu(x),
        )
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn clamp_min(&mut self, x: NodeId, min: f64) -> NodeId {
        // f64::max would swallow NaN; keep it visible
        self.unary(
            x,
            move |v| if v >= min || v.is_nan() { v } else { min },
            Op::ClampMin(x, min),
        )
    }

    /// Broadcast-add row vector `v` (cols,) to every row of matrix `x`.
    pub fn add_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        let (xs, vs) = (self.node(x).shape.clone(), self.node(v).shape.clone());
        if xs.len() != 2 || vs.len() != 1 || xs[1] != vs[0] {
            return Err(TensorError::shape("add_row_vec", &xs, &vs));
        }
        let cols = xs[1];
        let vv = self.values(v).to_vec();
        let values: Vec<f64> = self
            .values(x)
            .iter()
            .enumerate()
            .map(|(i, &a)| a + vv[i % cols])
            .collect();
        let rg = self.requires(x) || self.requires(v);
        Ok(self.push(xs, values, rg, Op::AddRowVec(x, v)))
    }

    // ------------------------------------------------------------------
    // Linear algebra
    // ------------------------------------------------------------------

    /// Matrix product supporting (m,k)x(k,n), (k,)x(k,n) and (m,k)x(k,).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        let (m, k, n, out_shape) = match (ash.len(), bsh.len()) {
            (2, 2) if ash[1] == bsh[0] => (ash[0], ash[1], bsh[1], vec![ash[0], bsh[1]]),
            (1, 2) if ash[0] == bsh[0] => (1, ash[0], bsh[1], vec![bsh[1]]),
            (2, 1) if ash[1] == bsh[0] => (ash[0], ash[1], 1, vec![ash[0]]),
            _ => return Err(TensorError::shape("matmul", &ash, &bsh)),
        };
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow.iter()) {
                    *o += aip * bpj;
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out_shape, out, rg, Op::Matmul(a, b)))
    }

    /// Vector dot product; yields a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if ash.len() != 1 || bsh.len() != 1 || ash[0] != bsh[0] {
            return Err(TensorError::shape("dot", &ash, &bsh));
        }
        let v: f64 = self
            .values(a)
            .iter()
            .zip(self.values(b).iter())
            .map(|(&x, &y)| x * y)
            .sum();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(vec![1], vec![v], rg, Op::Dot(a, b)))
    }

    /// Elementwise division; `b` may also be a scalar node.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ash, bsh) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        let scalar_rhs = self.node(b).values.len() == 1;
        if !scalar_rhs && ash != bsh {
            return Err(TensorError::shape("div", &ash, &bsh));
        }
        let bv = self.values(b).to_vec();
        let values: Vec<f64> = self
            .values(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x / if scalar_rhs { bv[0] } else { bv[i] })
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(ash, values, rg, Op::Div(a, b)))
    }

    // ------------------------------------------------------------------
    // Structure
    // ------------------------------------------------------------------

    /// Concatenate 1-D nodes into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::contract("concat", "no inputs"));
        }
        let mut values = Vec::new();
        let mut rg = false;
        for &p in parts {
            if self.node(p).shape.len() != 1 {
                return Err(TensorError::shape("concat", &self.node(p).shape, &[]));
            }
            values.extend_from_slice(self.values(p));
            rg |= self.requires(p);
        }
        Ok(self.push(vec![values.len()], values, rg, Op::Concat(parts.to_vec())))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(TensorError::contract("stack_rows", "no inputs"));
        }
        let cols = self.node(rows[0]).shape.clone();
        if cols.len() != 1 {
            return Err(TensorError::shape("stack_rows", &cols, &[]));
        }
        let cols = cols[0];
        let mut values = Vec::with_capacity(rows.len() * cols);
        let mut rg = false;
        for &r in rows {
            if self.node(r).shape != [cols] {
                return Err(TensorError::shape("stack_rows", &self.node(r).shape, &[cols]));
            }
            values.extend_from_slice(self.values(r));
            rg |= self.requires(r);
        }
        Ok(self.push(vec![rows.len(), cols], values, rg, Op::StackRows(rows.to_vec())))
    }

    /// Extract one row of a matrix as a vector.
    pub fn row(&mut self, x: NodeId, row: usize) -> Result<NodeId> {
        let sh = self.node(x).shape.clone();
        if sh.len() != 2 || row >= sh[0] {
            return Err(TensorError::contract("row", format!("row {row} of shape {sh:?}")));
        }
        let cols = sh[1];
        let values = self.values(x)[row * cols..(row + 1) * cols].to_vec();
        let rg = self.requires(x);
        Ok(self.push(vec![cols], values, rg, Op::Row(x, row)))
    }

    /// Append `extra` all-zero rows to a matrix.
    pub fn pad_rows(&mut self, x: NodeId, extra: usize) -> Result<NodeId> {
        let sh = self.node(x).shape.clone();
        if sh.len() != 2 {
            return Err(TensorError::shape("pad_rows", &sh, &[]));
        }
        let mut values = self.values(x).to_vec();
        values.extend(std::iter::repeat_n(0.0, extra * sh[1]));
        let rg = self.requires(x);
        Ok(self.push(vec![sh[0] + extra, sh[1]], values, rg, Op::PadRows(x)))
    }

    // ------------------------------------------------------------------
    // Reductions / nonlinear blocks
    // ------------------------------------------------------------------

    /// Softmax over a vector. With a mask, probability mass is distributed
    /// over the unmasked entries only and masked outputs are exactly 0.
    pub fn softmax(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let sh = self.node(x).shape.clone();
        if sh.len() != 1 {
            return Err(TensorError::shape("softmax", &sh, &[]));
        }
        let n = sh[0];
        if let Some(m) = mask {
            if m.len() != n {
                return Err(TensorError::contract("softmax", "mask length mismatch"));
            }
            if !m.iter().any(|&v| v) {
                return Err(TensorError::contract("softmax", "all positions masked"));
            }
        }
        let xv = self.values(x);
        let valid = |i: usize| mask.is_none_or(|m| m[i]);
        let mut max = f64::NEG_INFINITY;
        for i in 0..n {
            if valid(i) && xv[i] > max {
                max = xv[i];
            }
        }
        let mut values = vec![0.0; n];
        let mut denom = 0.0;
        for i in 0..n {
            if valid(i) {
                let e = (xv[i] - max).exp();
                values[i] = e;
                denom += e;
            }
        }
        for v in values.iter_mut() {
            *v /= denom;
        }
        let rg = self.requires(x);
        Ok(self.push(
            sh,
            values,
            rg,
            Op::Softmax {
                x,
                mask: mask.map(|m| m.to_vec()),
            },
        ))
    }

    /// Column-wise max over the rows of a matrix, restricted to rows where
    /// `valid` is true (all rows when `None`). Ties go to the lowest row.
    pub fn max_pool_rows(&mut self, x: NodeId, valid: Option<&[bool]>) -> Result<NodeId> {
        let sh = self.node(x).shape.clone();
        if sh.len() != 2 {
            return Err(TensorError::shape("max_pool_rows", &sh, &[]));
        }
        let (rows, cols) = (sh[0], sh[1]);
        if let Some(v) = valid {
            if v.len() != rows {
                return Err(TensorError::contract("max_pool_rows", "valid length mismatch"));
            }
        }
        let row_ok = |r: usize| valid.is_none_or(|v| v[r]);
        if !(0..rows).any(row_ok) {
            return Err(TensorError::contract("max_pool_rows", "no valid rows"));
        }
        let xv = self.values(x);
        let mut values = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![usize::MAX; cols];
        for r in 0..rows {
            if !row_ok(r) {
                continue;
            }
            for c in 0..cols {
                let v = xv[r * cols + c];
                // strict > keeps the lowest row index on ties
                if argmax[c] == usize::MAX || v > values[c] {
                    values[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.requires(x);
        Ok(self.push(vec![cols], values, rg, Op::MaxPoolRows { x, argmax }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v: f64 = self.values(x).iter().sum();
        let rg = self.requires(x);
        self.push(vec![1], vec![v], rg, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let vals = self.values(x);
        let v: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let rg = self.requires(x);
        self.push(vec![1], vec![v], rg, Op::MeanAll(x))
    }

    /// Mean over one axis of a matrix.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let sh = self.node(x).shape.clone();
        if sh.len() != 2 || axis > 1 {
            return Err(TensorError::contract("mean_axis", format!("axis {axis} of {sh:?}")));
        }
        let (rows, cols) = (sh[0], sh[1]);
        let xv = self.values(x);
        let values = if axis == 0 {
            (0..cols)
                .map(|c| (0..rows).map(|r| xv[r * cols + c]).sum::<f64>() / rows as f64)
                .collect::<Vec<_>>()
        } else {
            (0..rows)
                .map(|r| xv[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64)
                .collect::<Vec<_>>()
        };
        let rg = self.requires(x);
        let out_len = values.len();
        Ok(self.push(vec![out_len], values, rg, Op::MeanAxis { x, axis }))
    }

    /// Gather rows of an embedding table; gradients scatter-add back.
    pub fn embedding_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let sh = self.node(table).shape.clone();
        if sh.len() != 2 {
            return Err(TensorError::shape("embedding_lookup", &sh, &[]));
        }
        let (vocab, dim) = (sh[0], sh[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::contract(
                "embedding_lookup",
                format!("index {bad} out of range for table with {vocab} rows"),
            ));
        }
        let tv = self.values(table);
        let mut values = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            values.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rg = self.requires(table);
        Ok(self.push(
            vec![indices.len(), dim],
            values,
            rg,
            Op::EmbeddingLookup {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Valid (no padding) 1-D convolution over time.
    ///
    /// `x` is (time, dim), `weight` is (channels, width*dim) and `bias` is
    /// (channels,); the output is (time-width+1, channels).
    pub fn conv1d(&mut self, x: NodeId, weight: NodeId, bias: NodeId, width: usize) -> Result<NodeId> {
        let xs = self.node(x).shape.clone();
        let ws = self.node(weight).shape.clone();
        let bs = self.node(bias).shape.clone();
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(TensorError::shape("conv1d", &xs, &ws));
        }
        let (time, dim) = (xs[0], xs[1]);
        let channels = ws[0];
        if ws[1] != width * dim || bs[0] != channels || width == 0 {
            return Err(TensorError::shape("conv1d", &ws, &[channels, width * dim]));
        }
        if time < width {
            return Err(TensorError::contract(
                "conv1d",
                format!("input length {time} shorter than filter width {width}"),
            ));
        }
        let out_len = time - width + 1;
        let xv = self.values(x);
        let wv = self.values(weight);
        let bv = self.values(bias);
        let span = width * dim;
        let mut values = vec![0.0; out_len * channels];
        for t in 0..out_len {
            // row-major windows are contiguous
            let window = &xv[t * dim..t * dim + span];
            let orow = &mut values[t * channels..(t + 1) * channels];
            for c in 0..channels {
                let wrow = &wv[c * span..(c + 1) * span];
                let mut acc = bv[c];
                for (a, b) in window.iter().zip(wrow.iter()) {
                    acc += a * b;
                }
                orow[c] = acc;
            }
        }
        let rg = self.requires(x) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            vec![out_len, channels],
            values,
            rg,
            Op::Conv1d {
                x,
                weight,
                bias,
                width,
            },
        ))
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Accumulate d(loss)/d(leaf) into every reachable `requires_grad` leaf.
    ///
    /// `loss` must be a scalar node; calling backward twice on one graph is
    /// an error.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::contract("backward", "backward already ran on this graph"));
        }
        if self.node(loss).values.len() != 1 {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.node(loss).shape),
            ));
        }
        self.backward_done = true;
        // allocate zero grads for every requires_grad leaf so disconnected
        // leaves report zeros rather than nothing
        for node in self.nodes.iter_mut() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                node.grad = Some(vec![0.0; node.values.len()]);
            }
        }
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f64> {
        let len = self.nodes[id.0].values.len();
        self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; len])
    }

    fn add_grad(&mut self, id: NodeId, contrib: &[f64]) {
        if !self.requires(id) {
            return;
        }
        let buf = self.grad_buf(id);
        for (g, c) in buf.iter_mut().zip(contrib.iter()) {
            *g += c;
        }
    }

    fn backprop_node(&mut self, idx: usize) {
        let g = self.nodes[idx].grad.clone().expect("grad present");
        // detach the op so gradient accumulation can borrow self mutably
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.add_grad(a, &g);
                self.add_grad(b, &g);
            }
            &Op::Sub(a, b) => {
                self.add_grad(a, &g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.add_grad(b, &neg);
            }
            &Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(self.values(b).iter()).map(|(&gv, &bv)| gv * bv).collect();
                let gb: Vec<f64> = g.iter().zip(self.values(a).iter()).map(|(&gv, &av)| gv * av).collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            &Op::Scale(x, c) => {
                let gx: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                self.add_grad(x, &gx);
            }
            &Op::AddConst(x) => {
                self.add_grad(x, &g);
            }
            &Op::AddRowVec(x, v) => {
                self.add_grad(x, &g);
                let cols = self.nodes[idx].shape[1];
                let mut gv = vec![0.0; cols];
                for (i, &gi) in g.iter().enumerate() {
                    gv[i % cols] += gi;
                }
                self.add_grad(v, &gv);
            }
            &Op::Matmul(a, b) => {
                let ash = self.node(a).shape.clone();
                let bsh = self.node(b).shape.clone();
                let (m, k) = if ash.len() == 2 { (ash[0], ash[1]) } else { (1, ash[0]) };
                let n = if bsh.len() == 2 { bsh[1] } else { 1 };
                let av = self.values(a).to_vec();
                let bv = self.values(b).to_vec();
                // dA = G * B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bv[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                // dB = A^T * G
                let mut gb = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            &Op::Dot(a, b) => {
                let ga: Vec<f64> = self.values(b).iter().map(|&v| v * g[0]).collect();
                let gb: Vec<f64> = self.values(a).iter().map(|&v| v * g[0]).collect();
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            &Op::Div(a, b) => {
                let scalar_rhs = self.node(b).values.len() == 1;
                let bv = self.values(b).to_vec();
                let av = self.values(a).to_vec();
                let ga: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv / if scalar_rhs { bv[0] } else { bv[i] })
                    .collect();
                let gb: Vec<f64> = if scalar_rhs {
                    let acc: f64 = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| -gv * av[i] / (bv[0] * bv[0]))
                        .sum();
                    vec![acc]
                } else {
                    g.iter()
                        .enumerate()
                        .map(|(i, &gv)| -gv * av[i] / (bv[i] * bv[i]))
                        .collect()
                };
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.node(p).values.len();
                    self.add_grad(p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::StackRows(rows) => {
                let cols = self.nodes[idx].shape[1];
                for (r, &id) in rows.iter().enumerate() {
                    self.add_grad(id, &g[r * cols..(r + 1) * cols]);
                }
            }
            &Op::Row(x, row) => {
                let cols = self.node(x).shape[1];
                let mut gx = vec![0.0; self.node(x).values.len()];
                gx[row * cols..(row + 1) * cols].copy_from_slice(&g);
                self.add_grad(x, &gx);
            }
            &Op::PadRows(x) => {
                let len = self.node(x).values.len();
                self.add_grad(x, &g[..len]);
            }
            &Op::Tanh(x) => {
                let y = self.values(NodeId(idx)).to_vec();
                let gx: Vec<f64> = g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * (1.0 - yv * yv)).collect();
                self.add_grad(x, &gx);
            }
            &Op::Sigmoid(x) => {
                let y = self.values(NodeId(idx)).to_vec();
                let gx: Vec<f64> = g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv * (1.0 - yv)).collect();
                self.add_grad(x, &gx);
            }
            &Op::Relu(x) => {
                let xv = self.values(x).to_vec();
                let gx: Vec<f64> = g.iter().zip(xv.iter()).map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 }).collect();
                self.add_grad(x, &gx);
            }
            &Op::Sqrt(x) => {
                let y = self.values(NodeId(idx)).to_vec();
                let gx: Vec<f64> = g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * 0.5 / yv).collect();
                self.add_grad(x, &gx);
            }
            &Op::Log(x) => {
                let xv = self.values(x).to_vec();
                let gx: Vec<f64> = g.iter().zip(xv.iter()).map(|(&gv, &v)| gv / v).collect();
                self.add_grad(x, &gx);
            }
            &Op::ClampMin(x, min) => {
                let xv = self.values(x).to_vec();
                let gx: Vec<f64> = g.iter().zip(xv.iter()).map(|(&gv, &v)| if v > min { gv } else { 0.0 }).collect();
                self.add_grad(x, &gx);
            }
            Op::Softmax { x, mask } => {
                let x = *x;
                let y = self.values(NodeId(idx)).to_vec();
                let inner: f64 = g.iter().zip(y.iter()).map(|(&gv, &yv)| gv * yv).sum();
                let gx: Vec<f64> = g
                    .iter()
                    .zip(y.iter())
                    .enumerate()
                    .map(|(i, (&gv, &yv))| {
                        if mask.as_ref().is_none_or(|m| m[i]) {
                            yv * (gv - inner)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.add_grad(x, &gx);
            }
            Op::MaxPoolRows { x, argmax } => {
                let x = *x;
                let cols = argmax.len();
                let mut gx = vec![0.0; self.node(x).values.len()];
                for (c, &r) in argmax.iter().enumerate() {
                    gx[r * cols + c] += g[c];
                }
                self.add_grad(x, &gx);
            }
            &Op::SumAll(x) => {
                let gx = vec![g[0]; self.node(x).values.len()];
                self.add_grad(x, &gx);
            }
            &Op::MeanAll(x) => {
                let n = self.node(x).values.len();
                let gx = vec![g[0] / n as f64; n];
                self.add_grad(x, &gx);
            }
            &Op::MeanAxis { x, axis } => {
                let sh = self.node(x).shape.clone();
                let (rows, cols) = (sh[0], sh[1]);
                let mut gx = vec![0.0; rows * cols];
                if axis == 0 {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] = g[c] / rows as f64;
                        }
                    }
                } else {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] = g[r] / cols as f64;
                        }
                    }
                }
                self.add_grad(x, &gx);
            }
            Op::EmbeddingLookup { table, indices } => {
                let table = *table;
                if self.requires(table) {
                    let dim = self.node(table).shape[1];
                    let mut gt = vec![0.0; self.node(table).values.len()];
                    for (pos, &i) in indices.iter().enumerate() {
                        let src = &g[pos * dim..(pos + 1) * dim];
                        let dst = &mut gt[i * dim..(i + 1) * dim];
                        for (d, s) in dst.iter_mut().zip(src.iter()) {
                            *d += s;
                        }
                    }
                    self.add_grad(table, &gt);
                }
            }
            &Op::Conv1d { x, weight, bias, width } => {
                let xs = self.node(x).shape.clone();
                let (_, dim) = (xs[0], xs[1]);
                let channels = self.node(weight).shape[0];
                let span = width * dim;
                let out_len = self.nodes[idx].shape[0];
                let xv = self.values(x).to_vec();
                let wv = self.values(weight).to_vec();
                if self.requires(bias) {
                    let mut gb = vec![0.0; channels];
                    for t in 0..out_len {
                        for c in 0..channels {
                            gb[c] += g[t * channels + c];
                        }
                    }
                    self.add_grad(bias, &gb);
                }
                if self.requires(weight) {
                    let mut gw = vec![0.0; channels * span];
                    for t in 0..out_len {
                        let window = &xv[t * dim..t * dim + span];
                        for c in 0..channels {
                            let gv = g[t * channels + c];
                            if gv == 0.0 {
                                continue;
                            }
                            let wrow = &mut gw[c * span..(c + 1) * span];
                            for (wg, &inv) in wrow.iter_mut().zip(window.iter()) {
                                *wg += gv * inv;
                            }
                        }
                    }
                    self.add_grad(weight, &gw);
                }
                if self.requires(x) {
                    let mut gx = vec![0.0; xv.len()];
                    for t in 0..out_len {
                        let gslice = &g[t * channels..(t + 1) * channels];
                        let xwin = &mut gx[t * dim..t * dim + span];
                        for (c, &gv) in gslice.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let wrow = &wv[c * span..(c + 1) * span];
                            for (xg, &wvv) in xwin.iter_mut().zip(wrow.iter()) {
                                *xg += gv * wvv;
                            }
                        }
                    }
                    self.add_grad(x, &gx);
                }
            }
        }
        self.nodes[idx].op = op;
    }
}
