use super::tensor::{matmul_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Floor applied to row norms by [`Tape::l2norm_rows`].
pub const L2NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Log(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanRows(Var),
    L2NormRows(Var),
    FrobeniusSq(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run record of primitive operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and `backward` walks it in reverse. A tape is built per
/// forward pass and dropped afterwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul_raw(self.value(a).data(), m, k, self.value(b).data(), n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let value = Tensor::new(vec![n, m], transpose_raw(self.value(a).data(), m, n))?;
        Ok(self.push_op(value, Op::Transpose(a), &[a]))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push_op(value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Adds a bias vector of width `cols` to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if self.value(bias).numel() != c {
            return Err(Error::dim("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, bv) in data[i * c..(i + 1) * c].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(value, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if !src.is_finite() {
            return Err(Error::Numeric {
                op: "softmax_rows",
                detail: "non-finite input".into(),
            });
        }
        let (r, c) = src.dims2()?;
        let mut data = src.data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push_op(value, Op::SoftmaxRows(x), &[x]))
    }

    /// Concatenates along the feature axis. Zero-width parts are allowed.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of no tensors".into()))?;
        let (r, _) = self.dims(*first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = self.dims(*p)?;
            if pr != r {
                return Err(Error::dim("concat_cols", self.shape(*first), self.shape(*p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![r, total], data)?;
        Ok(self.push_op(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of no tensors".into()))?;
        let (_, c) = self.dims(*first)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pr, pc) = self.dims(*p)?;
            if pc != c {
                return Err(Error::dim("concat_rows", self.shape(*first), self.shape(*p)));
            }
            rows += pr;
            data.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::new(vec![rows, c], data)?;
        Ok(self.push_op(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `[start, start + len)` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if start + len > r {
            return Err(Error::dim("slice_rows", self.shape(x), &[start, len]));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::new(vec![len, c], data)?;
        Ok(self.push_op(value, Op::SliceRows(x, start), &[x]))
    }

    /// Average over rows, producing a `1 × cols` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        if r == 0 {
            return Err(Error::Contract("mean_rows over zero rows".into()));
        }
        let mut data = vec![0.0; c];
        for row in self.value(x).data().chunks(c.max(1)).take(r) {
            for (o, v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut data {
            *o /= r as f64;
        }
        let value = Tensor::new(vec![1, c], data)?;
        Ok(self.push_op(value, Op::MeanRows(x), &[x]))
    }

    /// Maps each row `v` to `v / max(‖v‖₂, 1e-12)`.
    pub fn l2norm_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x)?;
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let norm = row_norm(row).max(L2NORM_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push_op(value, Op::L2NormRows(x), &[x]))
    }

    /// Squared Frobenius norm as a scalar.
    pub fn frobenius_sq(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().map(|v| v * v).sum();
        self.push_op(Tensor::scalar(total), Op::FrobeniusSq(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Row lookup into an embedding table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table)?;
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::dim("gather_rows", self.shape(table), &[i]));
            }
            data.extend_from_slice(self.value(table).row(i));
        }
        let value = Tensor::new(vec![indices.len(), c], data)?;
        Ok(self.push_op(value, Op::GatherRows(table, indices.to_vec()), &[table]))
    }

    /// Reverse pass from a scalar. Gradients accumulate into every
    /// `requires_grad` node until [`Tape::zero_grad`] is called.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                        *a += v;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(&contribution) {
                        *a += c;
                    }
                }
                slot => *slot = Some(contribution),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let map = |v: Var, f: &dyn Fn(usize, f64) -> f64| -> Vec<f64> {
            g.iter()
                .enumerate()
                .map(|(i, gi)| f(i, *gi))
                .take(val(v).len())
                .collect()
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let (_, n) = self.dims(*b)?;
                if self.nodes[a.0].requires_grad {
                    let bt = transpose_raw(val(*b), k, n);
                    send(*a, matmul_raw(g, m, n, &bt, k));
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose_raw(val(*a), m, k);
                    send(*b, matmul_raw(&at, k, m, g, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a)?;
                send(*a, transpose_raw(g, n, m));
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                send(*a, map(*a, &|i, gi| gi * bv[i]));
                send(*b, map(*b, &|i, gi| gi * av[i]));
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|v| v * s).collect()),
            Op::AddRowBias(x, b) => {
                let (r, c) = self.dims(*x)?;
                send(*x, g.to_vec());
                let mut gb = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in gb.iter_mut().zip(&g[i * c..(i + 1) * c]) {
                        *o += v;
                    }
                }
                send(*b, gb);
            }
            Op::Relu(a) => {
                let av = val(*a);
                send(*a, map(*a, &|i, gi| if av[i] > 0.0 { gi } else { 0.0 }));
            }
            Op::Tanh(a) => send(*a, map(*a, &|i, gi| gi * (1.0 - out[i] * out[i]))),
            Op::Sigmoid(a) => send(*a, map(*a, &|i, gi| gi * out[i] * (1.0 - out[i]))),
            Op::Abs(a) => {
                let av = val(*a);
                send(*a, map(*a, &|i, gi| gi * sign(av[i])));
            }
            Op::Log(a) => {
                let av = val(*a);
                send(*a, map(*a, &|i, gi| gi / av[i]));
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = self.dims(*x)?;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let y = &out[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] = y[j] * (gr[j] - dot);
                    }
                }
                send(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2()?;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.dims(*p)?;
                    let mut gp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    send(*p, gp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    send(*p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let (_, c) = self.dims(*x)?;
                let mut gx = vec![0.0; val(*x).len()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                send(*x, gx);
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x)?;
                let inv = 1.0 / r as f64;
                let gx = (0..r * c).map(|i| g[i % c] * inv).collect();
                send(*x, gx);
            }
            Op::L2NormRows(x) => {
                let (r, c) = self.dims(*x)?;
                let xv = val(*x);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let y = &out[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let norm = row_norm(row);
                    if norm > L2NORM_EPS {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] = (gr[j] - y[j] * dot) / norm;
                        }
                    } else {
                        for j in 0..c {
                            gx[i * c + j] = gr[j] / L2NORM_EPS;
                        }
                    }
                }
                send(*x, gx);
            }
            Op::FrobeniusSq(x) => send(*x, val(*x).iter().map(|v| 2.0 * v * g[0]).collect()),
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::GatherRows(table, indices) => {
                let (_, c) = self.dims(*table)?;
                let mut gt = vec![0.0; val(*table).len()];
                for (k, &row) in indices.iter().enumerate() {
                    for j in 0..c {
                        gt[row * c + j] += g[k * c + j];
                    }
                }
                send(*table, gt);
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}
