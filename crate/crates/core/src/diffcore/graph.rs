use crate::diffcore::kernels::{self, add_assign};
use crate::diffcore::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation catalog. Axis-taking ops and the matrix ops work on 2-D tensors;
/// a 1-D tensor of length `n` is accepted wherever a `1×n` matrix is.
#[derive(Clone, Debug, PartialEq)]
pub enum Op<T> {
    Leaf,
    /// Copies its input and blocks gradient flow.
    Detach,
    MatMul,
    /// `a · bᵀ`
    MatMulNT,
    Add,
    Sub,
    /// Elementwise product of equal-shape tensors.
    Mul,
    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    AddRow,
    Scale(T),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    /// Mean over one axis, keeping it with size 1.
    MeanPool { axis: usize },
    Sum,
    Softmax { causal: bool },
    LogSoftmax,
    /// Pairwise cosine similarity between the rows of two matrices.
    Cosine,
    /// Inputs: `x`, `gamma`, `beta`.
    LayerNorm,
    Gelu,
    /// Row gather from a table; `None` yields a zero row (padding).
    Gather { indices: Vec<Option<usize>> },
    /// Mean token cross-entropy of logits against target ids.
    CrossEntropy { targets: Vec<usize> },
    /// Mean over rows of `KL(P‖Q)` given row-wise log-probabilities of `P` and `Q`.
    Kl,
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Detach => "detach",
            Op::MatMul => "matmul",
            Op::MatMulNT => "matmul_nt",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddRow => "add_row",
            Op::Scale(_) => "scale",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::MeanPool { .. } => "mean_pool",
            Op::Sum => "sum",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::Cosine => "cosine",
            Op::LayerNorm => "layer_norm",
            Op::Gelu => "gelu",
            Op::Gather { .. } => "gather",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Kl => "kl",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so the node vector is always a topological order.
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    pub fn op(&self, v: Var) -> &Op<T> {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut() {
            *g = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push(Op::Leaf, Vec::new(), value, requires_grad))
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, TensorError> {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<Var>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, inputs, value, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and records the node.
    pub fn apply(&mut self, op: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(TensorError::shape(op.name(), format!("unknown node {}", v.0)));
            }
        }
        let value = self.eval(&op, inputs)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad =
            !matches!(op, Op::Detach | Op::Leaf) && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(op, inputs.to_vec(), value, requires_grad))
    }

    fn arity(op: &Op<T>, inputs: &[Var]) -> Result<(), TensorError> {
        let want = match op {
            Op::Leaf => 0,
            Op::Concat { .. } => return if inputs.is_empty() { Err(TensorError::arity("concat", 1, 0)) } else { Ok(()) },
            Op::MatMul | Op::MatMulNT | Op::Add | Op::Sub | Op::Mul | Op::AddRow | Op::Cosine | Op::Kl => 2,
            Op::LayerNorm => 3,
            _ => 1,
        };
        if inputs.len() != want {
            return Err(TensorError::arity(op.name(), want, inputs.len()));
        }
        Ok(())
    }

    fn eval(&self, op: &Op<T>, inputs: &[Var]) -> Result<Tensor<T>, TensorError> {
        Self::arity(op, inputs)?;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let name = op.name();
        match op {
            Op::Leaf => Err(TensorError::shape(name, "leaves are created with Graph::leaf".into())),
            Op::Detach => Ok(val(0).clone()),
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                let ((m, k), (k2, n)) = (dims2(a), dims2(b));
                if k != k2 || a.ndim() > 2 || b.ndim() > 2 {
                    return Err(TensorError::shape(name, format!("{:?} x {:?}", a.shape(), b.shape())));
                }
                let mut out = vec![T::zero(); m * n];
                kernels::matmul_acc(a.data(), b.data(), &mut out, m, k, n);
                Tensor::matrix(m, n, out)
            }
            Op::MatMulNT => {
                let (a, b) = (val(0), val(1));
                let ((m, k), (n, k2)) = (dims2(a), dims2(b));
                if k != k2 || a.ndim() > 2 || b.ndim() > 2 {
                    return Err(TensorError::shape(name, format!("{:?} x {:?}ᵀ", a.shape(), b.shape())));
                }
                let mut out = vec![T::zero(); m * n];
                kernels::matmul_nt_acc(a.data(), b.data(), &mut out, m, k, n);
                Tensor::matrix(m, n, out)
            }
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (val(0), val(1));
                if a.shape() != b.shape() {
                    return Err(TensorError::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let f: fn(T, T) -> T = match op {
                    Op::Add => |x, y| x + y,
                    Op::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::AddRow => {
                let (x, b) = (val(0), val(1));
                let (m, n) = dims2(x);
                if b.numel() != n || b.rows() != 1 {
                    return Err(TensorError::shape(name, format!("{:?} + row {:?}", x.shape(), b.shape())));
                }
                let mut data = x.data().to_vec();
                for i in 0..m {
                    add_assign(&mut data[i * n..(i + 1) * n], b.data());
                }
                Tensor::new(x.shape().to_vec(), data)
            }
            Op::Scale(c) => Ok(val(0).map(|x| x * *c)),
            Op::Concat { axis } => {
                let parts: Vec<&Tensor<T>> = (0..inputs.len()).map(val).collect();
                concat(parts, *axis)
            }
            Op::Slice { axis, start, end } => slice(val(0), *axis, *start, *end),
            Op::MeanPool { axis } => {
                let x = val(0);
                let (m, n) = dims2(x);
                match axis {
                    0 if m > 0 => {
                        let mut out = vec![T::zero(); n];
                        for i in 0..m {
                            add_assign(&mut out, x.row(i));
                        }
                        let inv = T::lit(1.0 / m as f64);
                        out.iter_mut().for_each(|v| *v *= inv);
                        Tensor::matrix(1, n, out)
                    }
                    1 if n > 0 => {
                        let inv = T::lit(1.0 / n as f64);
                        let out = (0..m).map(|i| x.row(i).iter().copied().sum::<T>() * inv).collect();
                        Tensor::matrix(m, 1, out)
                    }
                    _ => Err(TensorError::shape(name, format!("axis {axis} of {:?}", x.shape()))),
                }
            }
            Op::Sum => Ok(Tensor::scalar(val(0).data().iter().copied().sum())),
            Op::Softmax { causal } => {
                let x = val(0);
                let (m, n) = dims2(x);
                let mut data = x.data().to_vec();
                kernels::softmax_rows(&mut data, m, n, *causal);
                Tensor::new(x.shape().to_vec(), data)
            }
            Op::LogSoftmax => {
                let x = val(0);
                let (m, n) = dims2(x);
                let mut data = x.data().to_vec();
                kernels::log_softmax_rows(&mut data, m, n);
                Tensor::new(x.shape().to_vec(), data)
            }
            Op::Cosine => {
                let (a, b) = (val(0), val(1));
                let ((m, d), (n, d2)) = (dims2(a), dims2(b));
                if d != d2 {
                    return Err(TensorError::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let na = row_norms(a, name)?;
                let nb = row_norms(b, name)?;
                let mut out = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = kernels::dot(a.row(i), b.row(j)) / (na[i] * nb[j]);
                    }
                }
                Tensor::matrix(m, n, out)
            }
            Op::LayerNorm => {
                let (x, g, b) = (val(0), val(1), val(2));
                let (m, n) = dims2(x);
                if g.numel() != n || b.numel() != n {
                    return Err(TensorError::shape(name, format!("{:?} with gain {:?}", x.shape(), g.shape())));
                }
                let mut out = vec![T::zero(); m * n];
                kernels::layer_norm_rows(x.data(), g.data(), b.data(), &mut out, m, n);
                Tensor::new(x.shape().to_vec(), out)
            }
            Op::Gelu => Ok(val(0).map(kernels::gelu)),
            Op::Gather { indices } => {
                let table = val(0);
                let (rows, d) = dims2(table);
                let mut out = vec![T::zero(); indices.len() * d];
                for (r, idx) in indices.iter().enumerate() {
                    if let Some(i) = *idx {
                        if i >= rows {
                            return Err(TensorError::IndexOutOfRange { op: name, index: i, bound: rows });
                        }
                        out[r * d..(r + 1) * d].copy_from_slice(table.row(i));
                    }
                }
                if indices.is_empty() {
                    return Ok(Tensor::zeros(&[0, d]));
                }
                Tensor::matrix(indices.len(), d, out)
            }
            Op::CrossEntropy { targets } => {
                let x = val(0);
                let (m, v) = dims2(x);
                if targets.len() != m || m == 0 {
                    return Err(TensorError::shape(name, format!("{m} rows vs {} targets", targets.len())));
                }
                let mut total = T::zero();
                for (i, &t) in targets.iter().enumerate() {
                    if t >= v {
                        return Err(TensorError::IndexOutOfRange { op: name, index: t, bound: v });
                    }
                    let row = x.row(i);
                    total += log_sum_exp(row) - row[t];
                }
                Ok(Tensor::scalar(total / T::lit(m as f64)))
            }
            Op::Kl => {
                let (p, q) = (val(0), val(1));
                if p.shape() != q.shape() || p.rows() == 0 {
                    return Err(TensorError::shape(name, format!("{:?} vs {:?}", p.shape(), q.shape())));
                }
                let total: T = p.data().iter().zip(q.data()).map(|(&lp, &lq)| lp.exp() * (lp - lq)).sum();
                Ok(Tensor::scalar(total / T::lit(p.rows() as f64)))
            }
        }
    }

    /// Reverse-mode pass from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                match &mut self.leaf_grads[id] {
                    Some(acc) => add_assign(acc, &g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            let contribs = self.local_grads(id, &g);
            let node = &self.nodes[id];
            for (input, contrib) in node.inputs.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => add_assign(acc, &c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each of its inputs.
    fn local_grads(&self, id: usize, g: &[T]) -> Vec<Option<Vec<T>>> {
        let node = &self.nodes[id];
        let inp = |i: usize| &self.nodes[node.inputs[i].0];
        let wants = |i: usize| inp(i).requires_grad;
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Detach => vec![None; node.inputs.len()],
            Op::MatMul => {
                let (a, b) = (&inp(0).value, &inp(1).value);
                let ((m, k), (_, n)) = (dims2(a), dims2(b));
                let da = wants(0).then(|| {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_nt_acc(g, b.data(), &mut da, m, n, k);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn_acc(a.data(), g, &mut db, m, k, n);
                    db
                });
                vec![da, db]
            }
            Op::MatMulNT => {
                let (a, b) = (&inp(0).value, &inp(1).value);
                let ((m, k), (n, _)) = (dims2(a), dims2(b));
                let da = wants(0).then(|| {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_acc(g, b.data(), &mut da, m, n, k);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); n * k];
                    kernels::matmul_tn_acc(g, a.data(), &mut db, m, n, k);
                    db
                });
                vec![da, db]
            }
            Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
            Op::Sub => vec![Some(g.to_vec()), Some(g.iter().map(|&x| -x).collect())],
            Op::Mul => {
                let (a, b) = (inp(0).value.data(), inp(1).value.data());
                vec![
                    wants(0).then(|| g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect()),
                    wants(1).then(|| g.iter().zip(a).map(|(&gv, &av)| gv * av).collect()),
                ]
            }
            Op::AddRow => {
                let (m, n) = dims2(out);
                let db = wants(1).then(|| {
                    let mut db = vec![T::zero(); n];
                    for i in 0..m {
                        add_assign(&mut db, &g[i * n..(i + 1) * n]);
                    }
                    db
                });
                vec![Some(g.to_vec()), db]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|&x| x * *c).collect())],
            Op::Concat { axis } => {
                let (m, n) = dims2(out);
                let mut res = Vec::with_capacity(node.inputs.len());
                let mut offset = 0;
                for i in 0..node.inputs.len() {
                    let (pm, pn) = dims2(&inp(i).value);
                    let part = if *axis == 0 {
                        let s = g[offset * n..(offset + pm) * n].to_vec();
                        offset += pm;
                        s
                    } else {
                        let mut s = Vec::with_capacity(pm * pn);
                        for r in 0..m {
                            s.extend_from_slice(&g[r * n + offset..r * n + offset + pn]);
                        }
                        offset += pn;
                        s
                    };
                    res.push(wants(i).then_some(part));
                }
                res
            }
            Op::Slice { axis, start, end } => {
                let x = &inp(0).value;
                let (m, n) = dims2(x);
                let mut dx = vec![T::zero(); m * n];
                if *axis == 0 {
                    dx[start * n..end * n].copy_from_slice(g);
                } else {
                    let w = end - start;
                    for r in 0..m {
                        dx[r * n + start..r * n + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                }
                vec![Some(dx)]
            }
            Op::MeanPool { axis } => {
                let x = &inp(0).value;
                let (m, n) = dims2(x);
                let mut dx = vec![T::zero(); m * n];
                if *axis == 0 {
                    let inv = T::lit(1.0 / m as f64);
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = g[j] * inv;
                        }
                    }
                } else {
                    let inv = T::lit(1.0 / n as f64);
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = g[i] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::Sum => vec![Some(vec![g[0]; inp(0).value.numel()])],
            Op::Softmax { .. } => {
                let (m, n) = dims2(out);
                let y = out.data();
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let s = kernels::dot(&g[r.clone()], &y[r.clone()]);
                    for j in r {
                        dx[j] = y[j] * (g[j] - s);
                    }
                }
                vec![Some(dx)]
            }
            Op::LogSoftmax => {
                let (m, n) = dims2(out);
                let y = out.data();
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let s: T = g[r.clone()].iter().copied().sum();
                    for j in r {
                        dx[j] = g[j] - y[j].exp() * s;
                    }
                }
                vec![Some(dx)]
            }
            Op::Cosine => {
                let (a, b) = (&inp(0).value, &inp(1).value);
                let ((m, d), (n, _)) = (dims2(a), dims2(b));
                // Zero rows were rejected in the forward pass.
                let na = row_norms(a, "cosine").unwrap_or_default();
                let nb = row_norms(b, "cosine").unwrap_or_default();
                let c = out.data();
                let mut da = vec![T::zero(); m * d];
                let mut db = vec![T::zero(); n * d];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == T::zero() {
                            continue;
                        }
                        let cij = c[i * n + j];
                        let (ai, bj) = (a.row(i), b.row(j));
                        let (ia, ib) = (T::one() / na[i], T::one() / nb[j]);
                        for t in 0..d {
                            let ah = ai[t] * ia;
                            let bh = bj[t] * ib;
                            da[i * d + t] += gij * (bh - cij * ah) * ia;
                            db[j * d + t] += gij * (ah - cij * bh) * ib;
                        }
                    }
                }
                vec![wants(0).then_some(da), wants(1).then_some(db)]
            }
            Op::LayerNorm => {
                let (x, gamma) = (&inp(0).value, &inp(1).value);
                let (m, n) = dims2(x);
                let nn = T::lit(n as f64);
                let eps = T::lit(kernels::LAYER_NORM_EPS);
                let mut dx = vec![T::zero(); m * n];
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                let mut xhat = vec![T::zero(); n];
                let mut dxhat = vec![T::zero(); n];
                for i in 0..m {
                    let row = x.row(i);
                    let mean = row.iter().copied().sum::<T>() / nn;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nn;
                    let inv = T::one() / (var + eps).sqrt();
                    let gr = &g[i * n..(i + 1) * n];
                    for j in 0..n {
                        xhat[j] = (row[j] - mean) * inv;
                        dxhat[j] = gr[j] * gamma.data()[j];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                    }
                    let s1: T = dxhat.iter().copied().sum();
                    let s2 = kernels::dot(&dxhat, &xhat);
                    for j in 0..n {
                        dx[i * n + j] = inv / nn * (nn * dxhat[j] - s1 - xhat[j] * s2);
                    }
                }
                vec![wants(0).then_some(dx), wants(1).then_some(dgamma), wants(2).then_some(dbeta)]
            }
            Op::Gelu => {
                let x = inp(0).value.data();
                vec![Some(x.iter().zip(g).map(|(&xv, &gv)| gv * kernels::gelu_grad(xv)).collect())]
            }
            Op::Gather { indices } => {
                let table = &inp(0).value;
                let (rows, d) = dims2(table);
                let mut dt = vec![T::zero(); rows * d];
                for (r, idx) in indices.iter().enumerate() {
                    if let Some(i) = *idx {
                        add_assign(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
                vec![Some(dt)]
            }
            Op::CrossEntropy { targets } => {
                let x = &inp(0).value;
                let (m, v) = dims2(x);
                let scale = g[0] / T::lit(m as f64);
                let mut dx = x.data().to_vec();
                kernels::softmax_rows(&mut dx, m, v, false);
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * v + t] -= T::one();
                }
                dx.iter_mut().for_each(|e| *e *= scale);
                vec![Some(dx)]
            }
            Op::Kl => {
                let (p, q) = (&inp(0).value, &inp(1).value);
                let scale = g[0] / T::lit(p.rows() as f64);
                let dp = wants(0).then(|| {
                    p.data()
                        .iter()
                        .zip(q.data())
                        .map(|(&lp, &lq)| scale * lp.exp() * (lp - lq + T::one()))
                        .collect()
                });
                let dq = wants(1).then(|| p.data().iter().map(|&lp| -scale * lp.exp()).collect());
                vec![dp, dq]
            }
        }
    }

    // Convenience wrappers over `apply`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::MatMulNT, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        self.apply(Op::AddRow, &[x, row])
    }
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.apply(Op::Scale(c), &[x])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        self.apply(Op::Concat { axis }, parts)
    }
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        self.apply(Op::Slice { axis, start, end }, &[x])
    }
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.apply(Op::MeanPool { axis }, &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(Op::Sum, &[x])
    }
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(Op::Softmax { causal: false }, &[x])
    }
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(Op::Softmax { causal: true }, &[x])
    }
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(Op::LogSoftmax, &[x])
    }
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.apply(Op::Cosine, &[a, b])
    }
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        self.apply(Op::LayerNorm, &[x, gamma, beta])
    }
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(Op::Gelu, &[x])
    }
    pub fn gather(&mut self, table: Var, indices: Vec<Option<usize>>) -> Result<Var, TensorError> {
        self.apply(Op::Gather { indices }, &[table])
    }
    /// Embedding lookup: one table row per id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.gather(table, ids.iter().map(|&i| Some(i)).collect())
    }
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, TensorError> {
        self.apply(Op::CrossEntropy { targets }, &[logits])
    }
    pub fn kl(&mut self, log_p: Var, log_q: Var) -> Result<Var, TensorError> {
        self.apply(Op::Kl, &[log_p, log_q])
    }
    pub fn detach(&mut self, x: Var) -> Result<Var, TensorError> {
        self.apply(Op::Detach, &[x])
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max
}

fn row_norms<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<Vec<T>, TensorError> {
    (0..x.rows())
        .map(|i| {
            let r = x.row(i);
            let n = kernels::dot(r, r).sqrt();
            if n == T::zero() {
                Err(TensorError::ZeroVector { op, row: i })
            } else {
                Ok(n)
            }
        })
        .collect()
}

fn concat<T: Scalar>(parts: Vec<&Tensor<T>>, axis: usize) -> Result<Tensor<T>, TensorError> {
    let n0 = parts[0].cols();
    let m0 = parts[0].rows();
    match axis {
        0 => {
            if let Some(p) = parts.iter().find(|p| p.cols() != n0) {
                return Err(TensorError::shape("concat", format!("axis 0: {} cols vs {}", p.cols(), n0)));
            }
            let rows: usize = parts.iter().map(|p| p.rows()).sum();
            let mut data = Vec::with_capacity(rows * n0);
            for p in &parts {
                data.extend_from_slice(p.data());
            }
            Tensor::matrix(rows, n0, data)
        }
        1 => {
            if let Some(p) = parts.iter().find(|p| p.rows() != m0) {
                return Err(TensorError::shape("concat", format!("axis 1: {} rows vs {}", p.rows(), m0)));
            }
            let cols: usize = parts.iter().map(|p| p.cols()).sum();
            let mut data = Vec::with_capacity(m0 * cols);
            for r in 0..m0 {
                for p in &parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Tensor::matrix(m0, cols, data)
        }
        _ => Err(TensorError::shape("concat", format!("axis {axis}"))),
    }
}

fn slice<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>, TensorError> {
    let (m, n) = dims2(x);
    let bound = match axis {
        0 => m,
        1 => n,
        _ => return Err(TensorError::shape("slice", format!("axis {axis}"))),
    };
    if start >= end || end > bound {
        return Err(TensorError::shape("slice", format!("[{start}, {end}) on axis {axis} of {:?}", x.shape())));
    }
    if axis == 0 {
        Tensor::matrix(end - start, n, x.data()[start * n..end * n].to_vec())
    } else {
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        Tensor::matrix(m, w, data)
    }
}
