//! Reverse-mode tape.
//!
//! Every operation appends one node holding its forward value and whatever
//! the backward rule needs. Node ids increase monotonically, so the tape is a
//! topological order by construction and [`Graph::backward`] is a single
//! reverse sweep.

use std::cell::{Ref, RefCell};

use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::{DType, Tensor};
use crate::error::{HireError, Result};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    MeanRows(NodeId),
    MeanCols(NodeId),
    Sum(NodeId),
    L2NormRows { x: NodeId, norms: Vec<f64>, clamped: Vec<bool> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    RowMax { x: NodeId, argmax: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Axis argument of [`Graph::concat`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// One tape. Values are immutable once recorded.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<IndexMap<String, NodeId>>,
    dtype: DType,
    track_params: bool,
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new(dtype: DType) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(IndexMap::new()),
            dtype,
            track_params: true,
        }
    }

    /// A tape whose parameters are recorded as constants; nothing on it
    /// requires a gradient.
    pub fn inference(dtype: DType) -> Self {
        Graph {
            track_params: false,
            ..Self::new(dtype)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, mut data: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        self.dtype.round_slice(&mut data);
        let value = Tensor::new(&shape, data)
            .expect("op produced inconsistent shape")
            .with_dtype(self.dtype);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn leaf(&self, t: &Tensor, requires_grad: bool) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, requires_grad)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    /// Records an input; its gradient is readable through [`Gradients::wrt`]
    /// when `t.requires_grad()` is set.
    pub fn input(&self, t: &Tensor) -> Var<'_> {
        self.leaf(t, t.requires_grad())
    }

    /// Records (once per tape) the named parameter of `store`.
    pub fn param(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { graph: self, id });
        }
        let t = store
            .get(name)
            .ok_or_else(|| HireError::UnknownParam(name.to_string()))?;
        let v = self.leaf(t, self.track_params);
        self.params.borrow_mut().insert(name.to_string(), v.id);
        Ok(v)
    }

    fn value(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, x: Var<'_>, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let (shape, data) = {
            let v = self.value(x.id);
            (v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
        };
        self.push(shape, data, op, self.needs_grad(x.id))
    }

    fn binary(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'_>> {
        let (shape, data) = {
            let va = self.value(a.id);
            let vb = self.value(b.id);
            if va.dims2() != vb.dims2() {
                return Err(HireError::shape(name, va.shape(), vb.shape()));
            }
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (va.shape().to_vec(), data)
        };
        let rg = self.needs_grad(a.id) || self.needs_grad(b.id);
        Ok(self.push(shape, data, op, rg))
    }

    pub fn matmul<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        let (p, r, data) = {
            let va = self.value(a.id);
            let vb = self.value(b.id);
            let (p, q) = va.dims2();
            let (q2, r) = vb.dims2();
            if q != q2 {
                return Err(HireError::shape("matmul", va.shape(), vb.shape()));
            }
            (p, r, matmul_raw(va.data(), vb.data(), p, q, r))
        };
        let rg = self.needs_grad(a.id) || self.needs_grad(b.id);
        Ok(self.push(vec![p, r], data, Op::MatMul(a.id, b.id), rg))
    }

    pub fn transpose<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        let (r, c, data) = {
            let v = self.value(x.id);
            let (r, c) = v.dims2();
            (r, c, transpose_raw(v.data(), r, c))
        };
        self.push(vec![c, r], data, Op::Transpose(x.id), self.needs_grad(x.id))
    }

    pub fn add<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.binary(a, b, "add", Op::Add(a.id, b.id), |x, y| x + y)
    }

    pub fn sub<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.binary(a, b, "sub", Op::Sub(a.id, b.id), |x, y| x - y)
    }

    pub fn hadamard<'g>(&'g self, a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.binary(a, b, "hadamard", Op::Hadamard(a.id, b.id), |x, y| x * y)
    }

    pub fn scale<'g>(&'g self, x: Var<'g>, c: f64) -> Var<'g> {
        self.unary(x, Op::Scale(x.id, c), |a| a * c)
    }

    pub fn add_scalar<'g>(&'g self, x: Var<'g>, c: f64) -> Var<'g> {
        self.unary(x, Op::AddScalar(x.id), |a| a + c)
    }

    pub fn relu<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        self.unary(x, Op::Relu(x.id), |a| a.max(0.0))
    }

    pub fn tanh<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        self.unary(x, Op::Tanh(x.id), f64::tanh)
    }

    pub fn sigmoid<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        self.unary(x, Op::Sigmoid(x.id), stable_sigmoid)
    }

    pub fn exp<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        self.unary(x, Op::Exp(x.id), f64::exp)
    }

    pub fn log<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        self.unary(x, Op::Log(x.id), f64::ln)
    }

    /// Row-wise softmax. `valid[i * cols + j] == false` pins that entry to
    /// exactly zero and removes it from the row normalizer.
    pub fn softmax_rows<'g>(&'g self, x: Var<'g>, valid: Option<&[bool]>) -> Result<Var<'g>> {
        let (shape, data) = {
            let v = self.value(x.id);
            let (r, c) = v.dims2();
            if let Some(m) = valid {
                if m.len() != r * c {
                    return Err(HireError::shape("softmax_rows", v.shape(), &[m.len()]));
                }
            }
            (v.shape().to_vec(), softmax_raw(v.data(), r, c, valid)?)
        };
        Ok(self.push(shape, data, Op::Softmax(x.id), self.needs_grad(x.id)))
    }

    /// `1 × cols` mean over rows.
    pub fn mean_rows<'g>(&'g self, x: Var<'g>) -> Result<Var<'g>> {
        let (c, data) = {
            let v = self.value(x.id);
            let (r, c) = v.dims2();
            if v.is_empty() {
                return Err(HireError::Empty("mean_rows"));
            }
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, a) in out.iter_mut().zip(v.row(i)) {
                    *o += a;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            (c, out)
        };
        Ok(self.push(vec![1, c], data, Op::MeanRows(x.id), self.needs_grad(x.id)))
    }

    /// `rows × 1` mean over columns.
    pub fn mean_cols<'g>(&'g self, x: Var<'g>) -> Result<Var<'g>> {
        let (r, data) = {
            let v = self.value(x.id);
            let (r, c) = v.dims2();
            if v.is_empty() {
                return Err(HireError::Empty("mean_cols"));
            }
            let out = (0..r)
                .map(|i| v.row(i).iter().sum::<f64>() / c as f64)
                .collect();
            (r, out)
        };
        Ok(self.push(vec![r, 1], data, Op::MeanCols(x.id), self.needs_grad(x.id)))
    }

    pub fn sum<'g>(&'g self, x: Var<'g>) -> Var<'g> {
        let s = self.value(x.id).data().iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x.id), self.needs_grad(x.id))
    }

    /// Scales every row to unit Euclidean norm. A row with norm exactly zero
    /// is an error.
    pub fn l2_normalize_rows<'g>(&'g self, x: Var<'g>) -> Result<Var<'g>> {
        self.normalize_impl(x, None)
    }

    /// Like [`Graph::l2_normalize_rows`] but divides by `max(norm, eps)`, so
    /// zero rows map to zero instead of failing.
    pub fn l2_normalize_rows_clamped<'g>(&'g self, x: Var<'g>, eps: f64) -> Result<Var<'g>> {
        self.normalize_impl(x, Some(eps))
    }

    fn normalize_impl<'g>(&'g self, x: Var<'g>, eps: Option<f64>) -> Result<Var<'g>> {
        let (shape, data, norms, clamped) = {
            let v = self.value(x.id);
            let (r, c) = v.dims2();
            let mut norms = Vec::with_capacity(r);
            let mut clamped = Vec::with_capacity(r);
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = v.row(i);
                let mut n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
                if !n.is_finite() {
                    return Err(HireError::ZeroNorm { row: i });
                }
                let clamp = match eps {
                    Some(e) if n < e => {
                        n = e;
                        true
                    }
                    None if n == 0.0 => return Err(HireError::ZeroNorm { row: i }),
                    _ => false,
                };
                norms.push(n);
                clamped.push(clamp);
                out.extend(row.iter().map(|a| a / n));
            }
            (v.shape().to_vec(), out, norms, clamped)
        };
        Ok(self.push(
            shape,
            data,
            Op::L2NormRows {
                x: x.id,
                norms,
                clamped,
            },
            self.needs_grad(x.id),
        ))
    }

    /// Concatenation. Rank-1 parts joined along `Axis::Rows` stay rank-1
    /// (their only axis).
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: Axis) -> Result<Var<'g>> {
        if parts.is_empty() {
            return Err(HireError::Empty("concat"));
        }
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let rg = ids.iter().any(|&i| self.needs_grad(i));
        let nodes = self.nodes.borrow();
        let all_vectors = ids.iter().all(|&i| nodes[i].value.shape().len() == 1);
        let dims: Vec<(usize, usize)> = ids.iter().map(|&i| nodes[i].value.dims2()).collect();
        let (shape, data, op) = match (axis, all_vectors) {
            (Axis::Rows, false) => {
                let c = dims[0].1;
                if let Some(bad) = dims.iter().find(|d| d.1 != c) {
                    return Err(HireError::shape("concat", &[dims[0].0, c], &[bad.0, bad.1]));
                }
                let r: usize = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(r * c);
                for &i in &ids {
                    data.extend_from_slice(nodes[i].value.data());
                }
                (vec![r, c], data, Op::ConcatRows(ids))
            }
            (Axis::Cols, _) | (Axis::Rows, true) => {
                let r = dims[0].0;
                if let Some(bad) = dims.iter().find(|d| d.0 != r) {
                    return Err(HireError::shape("concat", &[r, dims[0].1], &[bad.0, bad.1]));
                }
                let c: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    for &i in &ids {
                        data.extend_from_slice(nodes[i].value.row(row));
                    }
                }
                let shape = if all_vectors { vec![c] } else { vec![r, c] };
                (shape, data, Op::ConcatCols(ids))
            }
        };
        drop(nodes);
        Ok(self.push(shape, data, op, rg))
    }

    /// `rows × 1` row maxima; the gradient flows to the first maximal entry.
    pub fn row_max<'g>(&'g self, x: Var<'g>) -> Result<Var<'g>> {
        let (r, data, argmax) = {
            let v = self.value(x.id);
            let (r, c) = v.dims2();
            if c == 0 {
                return Err(HireError::Empty("row_max"));
            }
            let mut data = Vec::with_capacity(r);
            let mut argmax = Vec::with_capacity(r);
            for i in 0..r {
                let row = v.row(i);
                let mut best = 0;
                for j in 1..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                argmax.push(best);
                data.push(row[best]);
            }
            (r, data, argmax)
        };
        Ok(self.push(
            vec![r, 1],
            data,
            Op::RowMax { x: x.id, argmax },
            self.needs_grad(x.id),
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Only nodes that require a gradient and lie upstream of `loss` are
    /// visited, each exactly once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(HireError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(gout);
                continue;
            }
            let mut send = |target: NodeId, delta: Vec<f64>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(delta),
                }
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let va = &nodes[*a].value;
                    let vb = &nodes[*b].value;
                    let (p, q) = va.dims2();
                    let r = vb.dims2().1;
                    if nodes[*a].requires_grad {
                        // dA = dC · Bᵀ
                        let bt = transpose_raw(vb.data(), q, r);
                        send(*a, matmul_raw(&gout, &bt, p, r, q));
                    }
                    if nodes[*b].requires_grad {
                        // dB = Aᵀ · dC
                        let at = transpose_raw(va.data(), p, q);
                        send(*b, matmul_raw(&at, &gout, q, p, r));
                    }
                }
                Op::Transpose(x) => {
                    let (r, c) = out.dims2();
                    send(*x, transpose_raw(&gout, r, c));
                }
                Op::Add(a, b) => {
                    send(*a, gout.clone());
                    send(*b, gout.clone());
                }
                Op::Sub(a, b) => {
                    send(*a, gout.clone());
                    send(*b, gout.iter().map(|g| -g).collect());
                }
                Op::Hadamard(a, b) => {
                    let va = nodes[*a].value.data();
                    let vb = nodes[*b].value.data();
                    send(*a, gout.iter().zip(vb).map(|(g, y)| g * y).collect());
                    send(*b, gout.iter().zip(va).map(|(g, x)| g * x).collect());
                }
                Op::Scale(x, c) => send(*x, gout.iter().map(|g| g * c).collect()),
                Op::AddScalar(x) => send(*x, gout.clone()),
                Op::Relu(x) => {
                    let vx = nodes[*x].value.data();
                    send(
                        *x,
                        gout.iter()
                            .zip(vx)
                            .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Tanh(x) => send(
                    *x,
                    gout.iter()
                        .zip(out.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                ),
                Op::Sigmoid(x) => send(
                    *x,
                    gout.iter()
                        .zip(out.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect(),
                ),
                Op::Exp(x) => send(*x, gout.iter().zip(out.data()).map(|(g, y)| g * y).collect()),
                Op::Log(x) => {
                    let vx = nodes[*x].value.data();
                    send(*x, gout.iter().zip(vx).map(|(g, a)| g / a).collect());
                }
                Op::Softmax(x) => {
                    let (r, c) = out.dims2();
                    let y = out.data();
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: f64 = gout[row.clone()]
                            .iter()
                            .zip(&y[row.clone()])
                            .map(|(g, p)| g * p)
                            .sum();
                        for k in row {
                            dx[k] = y[k] * (gout[k] - dot);
                        }
                    }
                    send(*x, dx);
                }
                Op::MeanRows(x) => {
                    let (r, c) = nodes[*x].value.dims2();
                    let mut dx = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        dx.extend(gout.iter().map(|g| g / r as f64));
                    }
                    send(*x, dx);
                }
                Op::MeanCols(x) => {
                    let (r, c) = nodes[*x].value.dims2();
                    let mut dx = Vec::with_capacity(r * c);
                    for g in gout.iter().take(r) {
                        dx.extend(std::iter::repeat(g / c as f64).take(c));
                    }
                    send(*x, dx);
                }
                Op::Sum(x) => {
                    let n = nodes[*x].value.len();
                    send(*x, vec![gout[0]; n]);
                }
                Op::L2NormRows { x, norms, clamped } => {
                    let (r, c) = out.dims2();
                    let y = out.data();
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let row = i * c..(i + 1) * c;
                        let dot: f64 = gout[row.clone()]
                            .iter()
                            .zip(&y[row.clone()])
                            .map(|(g, p)| g * p)
                            .sum();
                        for k in row {
                            dx[k] = if clamped[i] {
                                gout[k] / norms[i]
                            } else {
                                (gout[k] - y[k] * dot) / norms[i]
                            };
                        }
                    }
                    send(*x, dx);
                }
                Op::ConcatRows(ids) => {
                    let mut offset = 0;
                    for &i in ids {
                        let n = nodes[i].value.len();
                        send(i, gout[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::ConcatCols(ids) => {
                    let (r, c) = out.dims2();
                    let mut offset = 0;
                    for &i in ids {
                        let w = nodes[i].value.dims2().1;
                        let mut part = Vec::with_capacity(r * w);
                        for row in 0..r {
                            part.extend_from_slice(&gout[row * c + offset..row * c + offset + w]);
                        }
                        send(i, part);
                        offset += w;
                    }
                }
                Op::RowMax { x, argmax } => {
                    let (r, c) = nodes[*x].value.dims2();
                    let mut dx = vec![0.0; r * c];
                    for (i, &j) in argmax.iter().enumerate() {
                        dx[i * c + j] = gout[i];
                    }
                    send(*x, dx);
                }
            }
            grads[id] = Some(gout);
        }

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        let shapes = nodes[..=loss.id]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }
}

/// Result of one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, NodeId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, when `v` required one and
    /// lies upstream of the loss.
    pub fn wrt(&self, v: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(v.id)?.as_ref()?;
        Tensor::new(&self.shapes[v.id], g.clone()).ok()
    }

    /// Adds every parameter gradient into the matching slot of `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (name, id) in &self.params {
            if let Some(Some(g)) = self.grads.get(*id) {
                store
                    .get_mut(name)
                    .ok_or_else(|| HireError::UnknownParam(name.clone()))?
                    .accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Names of parameters that received a gradient on this sweep.
    pub fn touched_params(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|(_, id)| matches!(self.grads.get(*id), Some(Some(_))))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(self.id).shape().to_vec()
    }

    pub fn dims2(&self) -> (usize, usize) {
        self.graph.value(self.id).dims2()
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        self.graph.value(self.id)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.graph.value(self.id).clone()
    }

    pub fn item(&self) -> f64 {
        self.graph.value(self.id).data()[0]
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.matmul(self, rhs)
    }

    pub fn t(self) -> Var<'g> {
        self.graph.transpose(self)
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.add(self, rhs)
    }

    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.sub(self, rhs)
    }

    pub fn hadamard(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.hadamard(self, rhs)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.graph.scale(self, c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.graph.add_scalar(self, c)
    }

    pub fn relu(self) -> Var<'g> {
        self.graph.relu(self)
    }

    pub fn tanh(self) -> Var<'g> {
        self.graph.tanh(self)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.graph.sigmoid(self)
    }

    pub fn exp(self) -> Var<'g> {
        self.graph.exp(self)
    }

    pub fn log(self) -> Var<'g> {
        self.graph.log(self)
    }

    pub fn softmax_rows(self, valid: Option<&[bool]>) -> Result<Var<'g>> {
        self.graph.softmax_rows(self, valid)
    }

    pub fn mean_rows(self) -> Result<Var<'g>> {
        self.graph.mean_rows(self)
    }

    pub fn mean_cols(self) -> Result<Var<'g>> {
        self.graph.mean_cols(self)
    }

    pub fn sum(self) -> Var<'g> {
        self.graph.sum(self)
    }

    pub fn l2_normalize(self) -> Result<Var<'g>> {
        self.graph.l2_normalize_rows(self)
    }

    pub fn l2_normalize_clamped(self, eps: f64) -> Result<Var<'g>> {
        self.graph.l2_normalize_rows_clamped(self, eps)
    }

    pub fn row_max(self) -> Result<Var<'g>> {
        self.graph.row_max(self)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

pub(crate) fn softmax_raw(x: &[f64], r: usize, c: usize, valid: Option<&[bool]>) -> Result<Vec<f64>> {
    let ok = |k: usize| valid.map_or(true, |m| m[k]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = i * c..(i + 1) * c;
        let max = row
            .clone()
            .filter(|&k| ok(k))
            .map(|k| x[k])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(HireError::DegenerateRow { row: i });
        }
        let mut z = 0.0;
        for k in row.clone() {
            if ok(k) {
                let e = (x[k] - max).exp();
                out[k] = e;
                z += e;
            }
        }
        for k in row {
            out[k] /= z;
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
