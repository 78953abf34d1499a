//! Append-only computation graph with reverse-mode differentiation.
//!
//! Every node's value is computed when the node is created. Nodes are never
//! mutated afterwards, and inputs always have smaller ids than the nodes that
//! consume them, so the node order is a topological order.
//!
//! Gradients are themselves built out of graph nodes. Passing
//! `create_graph = true` to [`Graph::grad`] keeps them differentiable, which is
//! how an unrolled inner loop (`θ' = θ − α·∇L(θ)`) gets its second-order term
//! when the outer loss is differentiated with respect to `θ`.

use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// `op(a) · op(b)` where `op` optionally transposes.
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `[n, d] + [1, d]`, the row vector broadcast down the rows.
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    /// Indicator of positive entries. Has zero derivative.
    Step(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Scalar broadcast to `shape`.
    Fill(NodeId, Rc<[usize]>),
    /// `[n, d] -> [1, d]`.
    SumRows(NodeId),
    /// `[1, d] -> [n, d]`.
    RepeatRows(NodeId, usize),
    /// `[n, c] -> [n, 1]`.
    RowSum(NodeId),
    /// `[n, 1] -> [n, c]`.
    RepeatCols(NodeId, usize),
    Softmax(NodeId),
    /// Mean softmax cross-entropy of `[n, c]` logits against integer targets.
    SoftmaxXent {
        logits: NodeId,
        targets: Rc<[usize]>,
    },
    ColSlice {
        a: NodeId,
        start: usize,
        len: usize,
    },
    /// Embeds `a` as columns `start..start+a.cols` of a zero matrix with `total` columns.
    ColPad {
        a: NodeId,
        start: usize,
        total: usize,
    },
    /// `param − lr · grad`.
    SgdUpdate {
        param: NodeId,
        grad: NodeId,
        lr: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Fill(..) => "fill",
            Op::SumRows(_) => "sum_rows",
            Op::RepeatRows(..) => "repeat_rows",
            Op::RowSum(_) => "row_sum",
            Op::RepeatCols(..) => "repeat_cols",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::ColSlice { .. } => "col_slice",
            Op::ColPad { .. } => "col_pad",
            Op::SgdUpdate { .. } => "sgd_update",
        }
    }

    fn inputs(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul { a, b, .. } => [Some(a), Some(b)],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => [Some(a), Some(b)],
            Op::SgdUpdate { param, grad, .. } => [Some(param), Some(grad)],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Fill(a, _)
            | Op::SumRows(a)
            | Op::RepeatRows(a, _)
            | Op::RowSum(a)
            | Op::RepeatCols(a, _)
            | Op::Softmax(a)
            | Op::SoftmaxXent { logits: a, .. }
            | Op::ColSlice { a, .. }
            | Op::ColPad { a, .. } => [Some(a), None],
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<GraphNode>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() == 2 {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })
    }
}

fn matmul_value(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(shape_err("matmul", a, b));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { ad[p * ac + i] } else { ad[i * ac + p] };
            if av == 0.0 {
                continue;
            }
            if tb {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += av * bd[j * bc + p];
                }
            } else {
                let brow = &bd[p * bc..(p + 1) * bc];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

fn zip_value(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
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

    /// Drops every node with id `>= len`. Ids handed out after `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Copies the value of `id` into a fresh constant, severing every gradient path.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(GraphNode {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Tensor) -> NodeId {
        let rg = match &op {
            Op::Step(_) => false,
            other => other
                .inputs()
                .iter()
                .flatten()
                .any(|&i| self.nodes[i.0].requires_grad),
        };
        self.push(op, value, rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let v = matmul_value(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push_op(Op::MatMul { a, b, ta, tb }, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_value("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push_op(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_value("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push_op(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = zip_value("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push_op(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push_op(Op::Scale(a, s), v)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        require_matrix("add_row", av)?;
        if rv.rank() != 2 || rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let v = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push_op(Op::AddRow(a, row), v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push_op(Op::Relu(a), v)
    }

    fn step(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
        self.push_op(Op::Step(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push_op(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push_op(Op::Mean(a), v)
    }

    fn fill(&mut self, a: NodeId, shape: Rc<[usize]>) -> Result<NodeId> {
        let t = self.value(a);
        if t.len() != 1 {
            return Err(Error::Shape {
                op: "fill",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = Tensor::full(&shape, t.item());
        Ok(self.push_op(Op::Fill(a, shape), v))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("sum_rows", t)?;
        let c = t.cols();
        let mut out = vec![0.0; c];
        for row in t.data().chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let v = Tensor::from_parts(vec![1, c], out);
        Ok(self.push_op(Op::SumRows(a), v))
    }

    fn repeat_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || t.rows() != 1 {
            return Err(Error::Shape {
                op: "repeat_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![n],
            });
        }
        let c = t.cols();
        let v = Tensor::from_parts(vec![n, c], t.data().repeat(n));
        Ok(self.push_op(Op::RepeatRows(a, n), v))
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("row_sum", t)?;
        let c = t.cols();
        let out: Vec<f64> = t.data().chunks(c).map(|r| r.iter().sum()).collect();
        let v = Tensor::from_parts(vec![t.rows(), 1], out);
        Ok(self.push_op(Op::RowSum(a), v))
    }

    fn repeat_cols(&mut self, a: NodeId, c: usize) -> Result<NodeId> {
        let t = self.value(a);
        if t.rank() != 2 || t.cols() != 1 {
            return Err(Error::Shape {
                op: "repeat_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![c],
            });
        }
        let out = t.data().iter().flat_map(|&x| std::iter::repeat_n(x, c)).collect();
        let v = Tensor::from_parts(vec![t.rows(), c], out);
        Ok(self.push_op(Op::RepeatCols(a, c), v))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        require_matrix("softmax", self.value(a))?;
        let v = softmax_rows(self.value(a));
        Ok(self.push_op(Op::Softmax(a), v))
    }

    /// Mean cross-entropy `−log softmax(logits)[i, targets[i]]` over rows.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let t = self.value(logits);
        require_matrix("softmax_xent", t)?;
        let (n, c) = (t.rows(), t.cols());
        if targets.len() != n {
            return Err(Error::Shape {
                op: "softmax_xent",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::invalid(format!("target {bad} out of range for {c} classes")));
        }
        let mut total = 0.0;
        for (row, &y) in t.data().chunks(c).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let v = Tensor::scalar(total / n as f64);
        Ok(self.push_op(
            Op::SoftmaxXent {
                logits,
                targets: targets.into(),
            },
            v,
        ))
    }

    pub fn col_slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("col_slice", t)?;
        if len == 0 || start + len > t.cols() {
            return Err(Error::Shape {
                op: "col_slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(t.rows() * len);
        for row in t.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let v = Tensor::from_parts(vec![t.rows(), len], out);
        Ok(self.push_op(Op::ColSlice { a, start, len }, v))
    }

    fn col_pad(&mut self, a: NodeId, start: usize, total: usize) -> Result<NodeId> {
        let t = self.value(a);
        require_matrix("col_pad", t)?;
        let len = t.cols();
        if start + len > total {
            return Err(Error::Shape {
                op: "col_pad",
                lhs: t.shape().to_vec(),
                rhs: vec![start, total],
            });
        }
        let mut out = vec![0.0; t.rows() * total];
        for (dst, src) in out.chunks_mut(total).zip(t.data().chunks(len)) {
            dst[start..start + len].copy_from_slice(src);
        }
        let v = Tensor::from_parts(vec![t.rows(), total], out);
        Ok(self.push_op(Op::ColPad { a, start, total }, v))
    }

    /// `param − lr · grad` as a differentiable node.
    pub fn sgd_update(&mut self, param: NodeId, grad: NodeId, lr: f64) -> Result<NodeId> {
        let v = zip_value("sgd_update", self.value(param), self.value(grad), |p, g| p - lr * g)?;
        Ok(self.push_op(Op::SgdUpdate { param, grad, lr }, v))
    }

    /// Vector-Jacobian products of node `id` given its output cotangent `g`.
    fn vjp(&mut self, id: NodeId, g: NodeId, want: [bool; 2]) -> Result<[Option<NodeId>; 2]> {
        let op = self.nodes[id.0].op.clone();
        let out = match op {
            Op::Leaf | Op::Step(_) => [None, None],
            Op::MatMul { a, b, ta, tb } => {
                let ga = if want[0] {
                    Some(if ta {
                        self.matmul_t(b, g, tb, true)?
                    } else {
                        self.matmul_t(g, b, false, !tb)?
                    })
                } else {
                    None
                };
                let gb = if want[1] {
                    Some(if tb {
                        self.matmul_t(g, a, true, ta)?
                    } else {
                        self.matmul_t(a, g, !ta, false)?
                    })
                } else {
                    None
                };
                [ga, gb]
            }
            Op::Add(..) => [Some(g), Some(g)],
            Op::Sub(..) => [Some(g), want[1].then(|| self.scale(g, -1.0))],
            Op::Mul(a, b) => {
                let ga = if want[0] { Some(self.mul(g, b)?) } else { None };
                let gb = if want[1] { Some(self.mul(g, a)?) } else { None };
                [ga, gb]
            }
            Op::Scale(_, s) => [Some(self.scale(g, s)), None],
            Op::AddRow(..) => {
                let gb = if want[1] { Some(self.sum_rows(g)?) } else { None };
                [Some(g), gb]
            }
            Op::Relu(a) => {
                let mask = self.step(a);
                [Some(self.mul(g, mask)?), None]
            }
            Op::Sum(a) => {
                let shape: Rc<[usize]> = self.shape(a).into();
                [Some(self.fill(g, shape)?), None]
            }
            Op::Mean(a) => {
                let shape: Rc<[usize]> = self.shape(a).into();
                let n = self.value(a).len() as f64;
                let gs = self.scale(g, 1.0 / n);
                [Some(self.fill(gs, shape)?), None]
            }
            Op::Fill(..) => [Some(self.sum(g)), None],
            Op::SumRows(a) => {
                let n = self.value(a).rows();
                [Some(self.repeat_rows(g, n)?), None]
            }
            Op::RepeatRows(..) => [Some(self.sum_rows(g)?), None],
            Op::RowSum(a) => {
                let c = self.value(a).cols();
                [Some(self.repeat_cols(g, c)?), None]
            }
            Op::RepeatCols(..) => [Some(self.row_sum(g)?), None],
            Op::Softmax(_) => {
                // s ⊙ (g − rowsum(g ⊙ s))
                let gs = self.mul(g, id)?;
                let r = self.row_sum(gs)?;
                let c = self.value(id).cols();
                let rb = self.repeat_cols(r, c)?;
                let d = self.sub(g, rb)?;
                [Some(self.mul(id, d)?), None]
            }
            Op::SoftmaxXent { logits, targets } => {
                // (softmax − onehot) / n, scaled by the upstream scalar
                let s = self.softmax(logits)?;
                let (n, c) = (self.value(logits).rows(), self.value(logits).cols());
                let mut onehot = vec![0.0; n * c];
                for (i, &y) in targets.iter().enumerate() {
                    onehot[i * c + y] = 1.0;
                }
                let oh = self.constant(Tensor::from_parts(vec![n, c], onehot));
                let d = self.sub(s, oh)?;
                let d = self.scale(d, 1.0 / n as f64);
                let gf = self.fill(g, Rc::from([n, c].as_slice()))?;
                [Some(self.mul(d, gf)?), None]
            }
            Op::ColSlice { a, start, .. } => {
                let total = self.value(a).cols();
                [Some(self.col_pad(g, start, total)?), None]
            }
            Op::ColPad { a, start, .. } => {
                let len = self.value(a).cols();
                [Some(self.col_slice(g, start, len)?), None]
            }
            Op::SgdUpdate { lr, .. } => [Some(g), want[1].then(|| self.scale(g, -lr))],
        };
        Ok(out)
    }

    /// Gradients of scalar `loss` with respect to each node in `wrt`.
    ///
    /// With `create_graph` the returned nodes stay connected to the graph and can be
    /// differentiated again. Without it they are detached constants and the
    /// intermediate backward nodes are dropped. A node in `wrt` that the loss does not
    /// depend on (or that does not require grad) gets a zero gradient.
    pub fn grad(&mut self, loss: NodeId, wrt: &[NodeId], create_graph: bool) -> Result<Vec<NodeId>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let base = self.nodes.len();
        let n = loss.0 + 1;

        // Only nodes with a requires_grad path down to some `wrt` node are visited.
        let mut relevant = vec![false; n];
        for &w in wrt {
            if w.0 < n && self.nodes[w.0].requires_grad {
                relevant[w.0] = true;
            }
        }
        for i in 0..n {
            if relevant[i] {
                continue;
            }
            let node = &self.nodes[i];
            if node.requires_grad && node.op.inputs().iter().flatten().any(|p| relevant[p.0]) {
                relevant[i] = true;
            }
        }

        let mut adj: Vec<Option<NodeId>> = vec![None; n];
        if relevant[loss.0] {
            adj[loss.0] = Some(self.constant(Tensor::full(lv.shape(), 1.0)));
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let inputs = self.nodes[i].op.inputs();
            let want = [
                inputs[0].is_some_and(|p| relevant[p.0]),
                inputs[1].is_some_and(|p| relevant[p.0]),
            ];
            if !want[0] && !want[1] {
                continue;
            }
            let contrib = self.vjp(NodeId(i), g, want)?;
            for k in 0..2 {
                let (Some(p), Some(c)) = (inputs[k], contrib[k]) else { continue };
                if !want[k] {
                    continue;
                }
                adj[p.0] = Some(match adj[p.0] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        let results: Vec<Option<NodeId>> = wrt
            .iter()
            .map(|w| if w.0 < n { adj[w.0] } else { None })
            .collect();
        if create_graph {
            Ok(results
                .into_iter()
                .zip(wrt)
                .map(|(r, &w)| match r {
                    Some(id) => id,
                    None => {
                        let z = Tensor::zeros(self.shape(w));
                        self.constant(z)
                    }
                })
                .collect())
        } else {
            let values: Vec<Tensor> = results
                .iter()
                .zip(wrt)
                .map(|(r, &w)| match r {
                    Some(id) => self.value(*id).clone(),
                    None => Tensor::zeros(self.shape(w)),
                })
                .collect();
            self.nodes.truncate(base);
            Ok(values.into_iter().map(|v| self.constant(v)).collect())
        }
    }

    /// Reverse accumulation of `loss` into the leaves in `wrt`; returns gradient values
    /// and leaves the graph as it was.
    pub fn backward(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let base = self.nodes.len();
        let ids = self.grad(loss, wrt, false)?;
        let out = ids.iter().map(|&id| self.value(id).clone()).collect();
        self.nodes.truncate(base);
        Ok(out)
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }
}
