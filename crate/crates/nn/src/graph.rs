//! Reverse-mode tape. A [`Graph`] records operations on matrices while
//! computing their values; [`Graph::backward`] replays it in reverse and
//! returns the gradient of every parameter that was used.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    gemm_acc, gemm_at_acc, gemm_bt_acc, layer_norm_rows, sigmoid, softmax_rows, transpose, unfold, Tensor, TensorError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    LayerNorm(NodeId, Vec<f64>),
    Gather(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Unfold(NodeId, usize),
    CrossEntropy(NodeId, Vec<usize>, Tensor),
    Sum(NodeId),
}

struct Node {
    /// Empty for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.store.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value: Some(value), op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.params.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.params.insert(id, n);
        n
    }

    pub fn try_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.try_matmul(a, b).expect("matmul shapes")
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = transpose(self.value(a));
        self.push(v, Op::Transpose(a))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.shape() == bv.shape(), "{}", shape_err(op, av, bv));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data).unwrap()
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, "add", |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, "mul", |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    fn row_broadcast(&self, a: NodeId, row: NodeId, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, rv) = (self.value(a), self.value(row));
        assert!(rv.rows() == 1 && rv.cols() == av.cols(), "{}", shape_err(op, av, rv));
        let mut out = av.clone();
        let c = av.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, &r) in chunk.iter_mut().zip(rv.data()) {
                *x = f(*x, r);
            }
        }
        out
    }

    /// `a + row` with `row` (1×c) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.row_broadcast(a, row, "add_row", |x, r| x + r);
        self.push(v, Op::AddRow(a, row))
    }

    /// `a ⊙ row` with `row` (1×c) broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.row_broadcast(a, row, "mul_row", |x, r| x * r);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise normalization without gain or bias.
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let (v, inv) = layer_norm_rows(self.value(a));
        self.push(v, Op::LayerNorm(a, inv))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let t = self.value(table);
        let c = t.cols();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= t.rows() {
                return Err(TensorError::Index { index: i, len: t.rows() });
            }
            out.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(vec![ids.len(), c], out)?;
        Ok(self.push(v, Op::Gather(table, ids.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            let c = v.cols();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c].copy_from_slice(v.row(r));
            }
            offset += c;
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            out.extend_from_slice(v.data());
        }
        let rows = out.len() / cols;
        self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let rows = v.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(Tensor::matrix(rows, len, out), Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        assert!(start + len <= v.rows(), "slice_rows out of range");
        let c = v.cols();
        let out = v.data()[start * c..(start + len) * c].to_vec();
        self.push(Tensor::matrix(len, c, out), Op::SliceRows(a, start))
    }

    pub fn unfold(&mut self, a: NodeId, k: usize) -> Result<NodeId, TensorError> {
        let v = unfold(self.value(a), k)?;
        Ok(self.push(v, Op::Unfold(a, k)))
    }

    /// Mean token cross-entropy of row-wise logits against `targets`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId, TensorError> {
        let l = self.value(logits);
        if l.rows() != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: l.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l.cols()) {
            return Err(TensorError::Index {
                index: bad,
                len: l.cols(),
            });
        }
        let probs = softmax_rows(l);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -probs.get(r, t).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / targets.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, targets.to_vec(), probs)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gradients of the scalar `loss` with respect to every parameter node.
    pub fn backward(&self, loss: NodeId) -> Vec<(ParamId, Tensor)> {
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads, &mut out);
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>], out: &mut Vec<(ParamId, Tensor)>) {
        let acc = |grads: &mut [Option<Tensor>], n: NodeId, t: Tensor| match &mut grads[n.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        let y = self.value(NodeId(i));
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(p) => out.push((*p, g.clone())),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut da = vec![0.0; m * k];
                gemm_bt_acc(g.data(), bv.data(), &mut da, m, k, n);
                let mut db = vec![0.0; k * n];
                gemm_at_acc(av.data(), g.data(), &mut db, m, k, n);
                acc(grads, *a, Tensor::matrix(m, k, da));
                acc(grads, *b, Tensor::matrix(k, n, db));
            }
            Op::Transpose(a) => acc(grads, *a, transpose(g)),
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::AddRow(a, r) => {
                acc(grads, *a, g.clone());
                acc(grads, *r, column_sums(g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(grads, *a, zip(g, bv, |x, y| x * y));
                acc(grads, *b, zip(g, av, |x, y| x * y));
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                let c = av.cols();
                let mut da = g.clone();
                for chunk in da.data_mut().chunks_mut(c) {
                    for (x, &s) in chunk.iter_mut().zip(rv.data()) {
                        *x *= s;
                    }
                }
                acc(grads, *a, da);
                acc(grads, *r, column_sums(&zip(g, av, |x, y| x * y)));
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|x| x * s)),
            Op::Sigmoid(a) => acc(grads, *a, zip(g, y, |d, s| d * s * (1.0 - s))),
            Op::Tanh(a) => acc(grads, *a, zip(g, y, |d, t| d * (1.0 - t * t))),
            Op::Relu(a) => acc(grads, *a, zip(g, self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::Softmax(a) => {
                let c = y.cols();
                let mut dx = g.clone();
                for (dr, yr) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                    for (d, &yv) in dr.iter_mut().zip(yr) {
                        *d = yv * (*d - dot);
                    }
                }
                acc(grads, *a, dx);
            }
            Op::LayerNorm(a, inv) => {
                let c = y.cols();
                let n = c as f64;
                let mut dx = g.clone();
                for ((dr, yr), &s) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)).zip(inv) {
                    let mean_d = dr.iter().sum::<f64>() / n;
                    let mean_dy = dr.iter().zip(yr).map(|(d, y)| d * y).sum::<f64>() / n;
                    for (d, &yv) in dr.iter_mut().zip(yr) {
                        *d = s * (*d - mean_d - yv * mean_dy);
                    }
                }
                acc(grads, *a, dx);
            }
            Op::Gather(table, ids) => {
                let t = self.value(*table);
                let c = t.cols();
                let mut dt = Tensor::zeros(t.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (x, &d) in dt.data_mut()[id * c..(id + 1) * c].iter_mut().zip(g.row(r)) {
                        *x += d;
                    }
                }
                acc(grads, *table, dt);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let rows = g.rows();
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    acc(grads, p, Tensor::new(self.value(p).shape().to_vec(), d).unwrap());
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let d = g.data()[offset..offset + n].to_vec();
                    acc(grads, p, Tensor::new(self.value(p).shape().to_vec(), d).unwrap());
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (c, len) = (av.cols(), g.cols());
                let mut da = Tensor::zeros(av.shape());
                for r in 0..g.rows() {
                    da.data_mut()[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                }
                acc(grads, *a, da);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut da = Tensor::zeros(av.shape());
                da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(grads, *a, da);
            }
            Op::Unfold(a, k) => {
                let av = self.value(*a);
                let (m, d) = (av.rows(), av.cols());
                let half = k / 2;
                let mut da = Tensor::zeros(av.shape());
                for i in 0..m {
                    for j in 0..*k {
                        let src = i as isize + j as isize - half as isize;
                        if src < 0 || src >= m as isize {
                            continue;
                        }
                        let src = src as usize;
                        let from = &g.data()[(i * k + j) * d..(i * k + j + 1) * d];
                        for (x, &v) in da.data_mut()[src * d..(src + 1) * d].iter_mut().zip(from) {
                            *x += v;
                        }
                    }
                }
                acc(grads, *a, da);
            }
            Op::CrossEntropy(logits, targets, probs) => {
                let scale = g.item() / targets.len() as f64;
                let mut d = probs.clone();
                let c = d.cols();
                for (r, &t) in targets.iter().enumerate() {
                    d.data_mut()[r * c + t] -= 1.0;
                }
                d.scale_assign(scale);
                acc(grads, *logits, d);
            }
            Op::Sum(a) => acc(grads, *a, Tensor::filled(self.value(*a).shape(), g.item())),
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn column_sums(g: &Tensor) -> Tensor {
    let c = g.cols();
    let mut out = vec![0.0; c];
    for row in g.data().chunks(c) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::matrix(1, c, out)
}
