use super::tensor::{Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("batch norm in training mode needs at least 2 rows per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    pub rows: usize,
}

#[derive(Debug)]
pub enum BatchNormMode<'a, T> {
    Train { eps: T },
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    Concat(Vec<Var>),
    Reshape(Var),
    Narrow { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    MaxAxis1 { x: Var, argmax: Vec<usize> },
    RowNorm(Var),
    RowSumSquares(Var),
    Sum(Var),
    Mean(Var),
    SumSquares(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, training: bool },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order;
/// [`Graph::backward`] walks it in reverse and accumulates gradients
/// additively at fan-out.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    record: bool,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let rows = if cols == 0 { 0 } else { shape.iter().product::<usize>() / cols };
    (rows, cols)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), record: true, backward_done: false }
    }

    /// A graph that keeps values only; nothing is differentiable.
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), record: false, backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. It participates in differentiation when its
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        let requires_grad = self.record && tensor.requires_grad;
        tensor.grad = None;
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn param(&mut self, tensor: &Tensor<T>) -> Var {
        let t = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec()).with_grad();
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// The gradient of `v`, zeros if it received none.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<T> {
        self.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); self.value(v).numel()])
    }

    /// Leaf tensor with its accumulated gradient attached.
    pub fn tensor_with_grad(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        let mut t = node.value.clone();
        t.requires_grad = node.requires_grad;
        t.grad = node.grad.clone();
        t
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> AutodiffError {
        AutodiffError::Shape { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a), (k as isize, 1), self.data(b), (n as isize, 1), T::zero(), &mut out);
        Ok(self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(self.shape_err("batch_matmul", a, b));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..bs {
            T::gemm(
                m,
                k,
                n,
                &da[i * m * k..],
                (k as isize, 1),
                &db[i * k * n..],
                (n as isize, 1),
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push(Tensor::new(vec![bs, m, n], out), Op::BatchMatMul(a, b), &[a, b]))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(name, a, b));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::new(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `[C]` bias to every row of a `[..., C]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(self.shape_err("add_bias", x, bias));
        }
        let c = sb[0];
        let b = self.data(bias);
        let mut data = self.data(x).to_vec();
        for row in data.chunks_exact_mut(c.max(1)) {
            row.iter_mut().zip(b).for_each(|(v, &bv)| *v += bv);
        }
        let t = Tensor::new(self.shape(x).to_vec(), data);
        Ok(self.push(t, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let data = self.data(x).iter().map(|&v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data);
        self.push(t, Op::Scale(x, factor), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::new(self.shape(x).to_vec(), self.data(x).iter().map(|&v| f(v)).collect())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v.tanh());
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(AutodiffError::Invalid(format!("softmax axis {axis} invalid for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.data(x);
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| src[at(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out), Op::Softmax { x, axis }, &[x]))
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| AutodiffError::Invalid("concat of nothing".into()))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        for &p in &parts[1..] {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || &s[..lead.len()] != lead {
                return Err(self.shape_err("concat", first, p));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(Tensor::new(shape, out), Op::Concat(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(AutodiffError::Shape { op: "reshape", lhs: self.shape(x).to_vec(), rhs: shape });
        }
        let t = Tensor::new(shape, self.data(x).to_vec());
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, cols) = rows_cols(&shape);
        if start + len > cols || len == 0 {
            return Err(AutodiffError::Invalid(format!("narrow [{start}, {}) out of last axis {cols}", start + len)));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let mut new_shape = shape;
        *new_shape.last_mut().expect("rank >= 1") = len;
        Ok(self.push(Tensor::new(new_shape, out), Op::Narrow { x, start }, &[x]))
    }

    /// Selects rows (last axis kept) of a tensor viewed as `[rows, C]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Invalid(format!("gather row {bad} out of {rows}")));
        }
        let src = self.data(x);
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![index.len(), cols], out);
        Ok(self.push(t, Op::GatherRows { x, index: index.to_vec() }, &[x]))
    }

    /// `[G, K, C] -> [G, C]` elementwise max over the middle axis.
    pub fn max_axis1(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(AutodiffError::Invalid(format!("max_axis1 expects [G, K>0, C], got {shape:?}")));
        }
        let (g, k, c) = (shape[0], shape[1], shape[2]);
        let src = self.data(x);
        let mut out = vec![T::zero(); g * c];
        let mut argmax = vec![0usize; g * c];
        for gi in 0..g {
            for ci in 0..c {
                let mut best = 0;
                let mut best_v = src[gi * k * c + ci];
                for ki in 1..k {
                    let v = src[gi * k * c + ki * c + ci];
                    if v > best_v {
                        best_v = v;
                        best = ki;
                    }
                }
                out[gi * c + ci] = best_v;
                argmax[gi * c + ci] = best;
            }
        }
        Ok(self.push(Tensor::new(vec![g, c], out), Op::MaxAxis1 { x, argmax }, &[x]))
    }

    /// Euclidean norm of every row of a `[R, C]` tensor.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(x));
        let src = self.data(x);
        let out = (0..rows).map(|r| src[r * cols..(r + 1) * cols].iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        self.push(Tensor::new(vec![rows], out), Op::RowNorm(x), &[x])
    }

    pub fn row_sum_squares(&mut self, x: Var) -> Var {
        let (rows, cols) = rows_cols(self.shape(x));
        let src = self.data(x);
        let out = (0..rows).map(|r| src[r * cols..(r + 1) * cols].iter().map(|&v| v * v).sum::<T>()).collect();
        self.push(Tensor::new(vec![rows], out), Op::RowSumSquares(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).numel().max(1)).expect("count");
        let s = self.data(x).iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().map(|&v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(x), &[x])
    }

    /// Batch normalization over every non-channel axis of `[..., C]`.
    ///
    /// In training mode the returned statistics are those of the batch; the
    /// caller owns any running-average bookkeeping.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (rows, c) = rows_cols(self.shape(x));
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(self.shape_err("batch_norm", x, p));
            }
        }
        let src = self.data(x);
        let (mean, var, eps, training) = match mode {
            BatchNormMode::Train { eps } => {
                if rows < 2 {
                    return Err(AutodiffError::BatchTooSmall(rows));
                }
                let n = T::from_usize(rows).expect("count");
                let mut mean = vec![T::zero(); c];
                for row in src.chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![T::zero(); c];
                for row in src.chunks_exact(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);
                (mean, var, eps, true)
            }
            BatchNormMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(AutodiffError::Invalid(format!(
                        "running stats length {} for {c} channels",
                        mean.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let keep = self.record && [x, gamma, beta].iter().any(|&v| self.requires_grad(v));
        let mut xhat = vec![T::zero(); if keep { rows * c } else { 0 }];
        let mut out = vec![T::zero(); rows * c];
        if keep {
            for ((orow, hrow), srow) in
                out.chunks_exact_mut(c.max(1)).zip(xhat.chunks_exact_mut(c.max(1))).zip(src.chunks_exact(c.max(1)))
            {
                for ch in 0..c {
                    let h = (srow[ch] - mean[ch]) * inv_std[ch];
                    hrow[ch] = h;
                    orow[ch] = g[ch] * h + b[ch];
                }
            }
        } else {
            let scale: Vec<T> = g.iter().zip(&inv_std).map(|(&gv, &s)| gv * s).collect();
            let shift: Vec<T> = (0..c).map(|ch| b[ch] - mean[ch] * scale[ch]).collect();
            for (orow, srow) in out.chunks_exact_mut(c.max(1)).zip(src.chunks_exact(c.max(1))) {
                for ch in 0..c {
                    orow[ch] = srow[ch] * scale[ch] + shift[ch];
                }
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out);
        let stats = training.then_some(BatchStats { mean, var, rows });
        let v = self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, training }, &[x, gamma, beta]);
        Ok((v, stats))
    }

    /// Reverse-mode sweep from a scalar `loss`. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Intermediate gradients are consumed here; only leaves keep theirs.
            let Some(g) = node.grad.take() else { continue };
            let contributions = backward_op(&node.op, &node.value, g, before);
            for (v, delta) in contributions {
                let target = &mut before[v.0];
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backward_op<T: Real>(op: &Op<T>, out: &Tensor<T>, grad: Vec<T>, nodes: &[Node<T>]) -> Vec<(Var, Vec<T>)> {
    let g = grad.as_slice();
    let wants = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| nodes[v.0].value.data();
    let shape = |v: Var| nodes[v.0].value.shape();
    let mut res = Vec::new();
    match *op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k, n) = (shape(a)[0], shape(a)[1], shape(b)[1]);
            if wants(a) {
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, g, (n as isize, 1), val(b), (1, n as isize), T::zero(), &mut da);
                res.push((a, da));
            }
            if wants(b) {
                let mut db = vec![T::zero(); k * n];
                T::gemm(k, m, n, val(a), (1, k as isize), g, (n as isize, 1), T::zero(), &mut db);
                res.push((b, db));
            }
        }
        Op::BatchMatMul(a, b) => {
            let (bs, m, k, n) = (shape(a)[0], shape(a)[1], shape(a)[2], shape(b)[2]);
            if wants(a) {
                let mut da = vec![T::zero(); bs * m * k];
                for i in 0..bs {
                    T::gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..],
                        (n as isize, 1),
                        &val(b)[i * k * n..],
                        (1, n as isize),
                        T::zero(),
                        &mut da[i * m * k..(i + 1) * m * k],
                    );
                }
                res.push((a, da));
            }
            if wants(b) {
                let mut db = vec![T::zero(); bs * k * n];
                for i in 0..bs {
                    T::gemm(
                        k,
                        m,
                        n,
                        &val(a)[i * m * k..],
                        (1, k as isize),
                        &g[i * m * n..],
                        (n as isize, 1),
                        T::zero(),
                        &mut db[i * k * n..(i + 1) * k * n],
                    );
                }
                res.push((b, db));
            }
        }
        Op::Add(a, b) => match (wants(a), wants(b)) {
            (true, true) => {
                res.push((a, g.to_vec()));
                res.push((b, grad));
            }
            (true, false) => res.push((a, grad)),
            (false, true) => res.push((b, grad)),
            (false, false) => {}
        },
        Op::Sub(a, b) => {
            if wants(a) {
                res.push((a, g.to_vec()));
            }
            if wants(b) {
                res.push((b, g.iter().map(|&v| -v).collect()));
            }
        }
        Op::Mul(a, b) => {
            if wants(a) {
                res.push((a, g.iter().zip(val(b)).map(|(&d, &y)| d * y).collect()));
            }
            if wants(b) {
                res.push((b, g.iter().zip(val(a)).map(|(&d, &x)| d * x).collect()));
            }
        }
        Op::AddBias(x, bias) => {
            if wants(bias) {
                let c = shape(bias)[0];
                let mut db = vec![T::zero(); c];
                for row in g.chunks(c) {
                    db.iter_mut().zip(row).for_each(|(s, &d)| *s += d);
                }
                res.push((bias, db));
            }
            if wants(x) {
                res.push((x, grad));
            }
        }
        Op::Scale(x, factor) => res.push((x, g.iter().map(|&d| d * factor).collect())),
        Op::Relu(x) => {
            res.push((x, g.iter().zip(out.data()).map(|(&d, &y)| if y > T::zero() { d } else { T::zero() }).collect()))
        }
        Op::Sigmoid(x) => res.push((x, g.iter().zip(out.data()).map(|(&d, &y)| d * y * (T::one() - y)).collect())),
        Op::Tanh(x) => res.push((x, g.iter().zip(out.data()).map(|(&d, &y)| d * (T::one() - y * y)).collect())),
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_split(out.shape(), axis);
            let y = out.data();
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * len * inner + k * inner + i;
                    let dot: T = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..len {
                        dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            res.push((x, dx));
        }
        Op::Concat(ref parts) => {
            let total = out.last_dim();
            let rows = out.numel() / total.max(1);
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.last_dim();
                if wants(p) {
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    res.push((p, dp));
                }
                offset += w;
            }
        }
        Op::Reshape(x) => res.push((x, grad)),
        Op::Narrow { x, start } => {
            let (rows, cols) = rows_cols(shape(x));
            let len = out.last_dim();
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                dx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            res.push((x, dx));
        }
        Op::GatherRows { x, ref index } => {
            let (rows, cols) = rows_cols(shape(x));
            let mut dx = vec![T::zero(); rows * cols];
            for (j, &i) in index.iter().enumerate() {
                dx[i * cols..(i + 1) * cols].iter_mut().zip(&g[j * cols..(j + 1) * cols]).for_each(|(s, &d)| *s += d);
            }
            res.push((x, dx));
        }
        Op::MaxAxis1 { x, ref argmax } => {
            let s = shape(x);
            let (k, c) = (s[1], s[2]);
            let mut dx = vec![T::zero(); s.iter().product()];
            for (j, (&d, &ki)) in g.iter().zip(argmax).enumerate() {
                let (gi, ci) = (j / c, j % c);
                dx[gi * k * c + ki * c + ci] = d;
            }
            res.push((x, dx));
        }
        Op::RowNorm(x) => {
            let (rows, cols) = rows_cols(shape(x));
            let src = val(x);
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let norm = out.data()[r];
                if norm > T::zero() {
                    for c in 0..cols {
                        dx[r * cols + c] = g[r] * src[r * cols + c] / norm;
                    }
                }
            }
            res.push((x, dx));
        }
        Op::RowSumSquares(x) => {
            let cols = rows_cols(shape(x)).1;
            let two = T::one() + T::one();
            res.push((x, val(x).iter().enumerate().map(|(i, &v)| two * v * g[i / cols]).collect()));
        }
        Op::Sum(x) => res.push((x, vec![g[0]; val(x).len()])),
        Op::Mean(x) => {
            let n = T::from_usize(val(x).len().max(1)).expect("count");
            res.push((x, vec![g[0] / n; val(x).len()]));
        }
        Op::SumSquares(x) => {
            let two = T::one() + T::one();
            res.push((x, val(x).iter().map(|&v| two * v * g[0]).collect()));
        }
        Op::BatchNorm { x, gamma, beta, ref xhat, ref inv_std, training } => {
            let c = inv_std.len().max(1);
            let rows = xhat.len() / c;
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for (grow, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for ch in 0..c {
                    dgamma[ch] += grow[ch] * hrow[ch];
                    dbeta[ch] += grow[ch];
                }
            }
            if wants(x) {
                let gam = val(gamma);
                let scale: Vec<T> = gam.iter().zip(inv_std).map(|(&a, &b)| a * b).collect();
                let mut dx = vec![T::zero(); rows * c];
                if training {
                    let n = T::from_usize(rows).expect("count");
                    let mean_b: Vec<T> = dbeta.iter().map(|&v| v / n).collect();
                    let mean_g: Vec<T> = dgamma.iter().map(|&v| v / n).collect();
                    for ((drow, grow), hrow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c))
                    {
                        for ch in 0..c {
                            drow[ch] = scale[ch] * (grow[ch] - mean_b[ch] - hrow[ch] * mean_g[ch]);
                        }
                    }
                } else {
                    for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        for ch in 0..c {
                            drow[ch] = grow[ch] * scale[ch];
                        }
                    }
                }
                res.push((x, dx));
            }
            if wants(gamma) {
                res.push((gamma, dgamma));
            }
            if wants(beta) {
                res.push((beta, dbeta));
            }
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 4], &[2.0; 4]));
        let y = g.softmax(x, 1).unwrap();
        assert_eq!(g.data(y), &[0.25; 4]);
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[4], &[-2.0, -0.5, 0.5, 3.0]).with_grad());
        let y = g.relu(x);
        assert_eq!(g.data(y), &[0.0, 0.0, 0.5, 3.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn dot_product_gradient_is_other_operand() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]).with_grad());
        let y = g.leaf(t(&[3], &[4.0, -5.0, 6.0]).with_grad());
        let p = g.mul(x, y).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, -5.0, 6.0]);
        assert_eq!(g.grad(y).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[3.0, -1.0]).with_grad());
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0, -1.0]);
    }

    #[test]
    fn second_backward_fails() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1], &[1.0]).with_grad());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(AutodiffError::BackwardTwice));
    }

    #[test]
    fn non_scalar_loss_fails() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert_eq!(g.backward(x), Err(AutodiffError::NonScalarLoss(vec![2])));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(err, AutodiffError::Shape { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] });
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.data(c), &[17.0, 39.0]);
    }

    #[test]
    fn batch_norm_single_row_training_fails() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 2]));
        let ga = g.constant(Tensor::full(vec![2], 1.0));
        let be = g.constant(Tensor::zeros(vec![2]));
        let err = g.batch_norm(x, ga, be, BatchNormMode::Train { eps: 1e-5 }).unwrap_err();
        assert_eq!(err, AutodiffError::BatchTooSmall(1));
    }

    #[test]
    fn batch_norm_eval_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3, 2], &[-1.0, 0.5, 0.0, 1.5, 1.0, -2.0]));
        let ga = g.constant(Tensor::full(vec![2], 1.0));
        let be = g.constant(Tensor::zeros(vec![2]));
        let (y, stats) =
            g.batch_norm(x, ga, be, BatchNormMode::Eval { mean: &[0.0, 0.0], var: &[1.0, 1.0], eps: 0.0 }).unwrap();
        assert!(stats.is_none());
        assert_eq!(g.data(y), g.data(x));
    }

    #[test]
    fn no_grad_graph_records_nothing() {
        let mut g = Graph::<f64>::no_grad();
        let x = g.leaf(t(&[1], &[1.0]).with_grad());
        assert!(!g.requires_grad(x));
    }
}
