use std::borrow::Cow;
use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{contract, dim_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulT,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    Sigmoid,
    Tanh,
    Gelu,
    LogSigmoid,
    Softmax,
    LayerNorm,
    Gather,
    SumRows,
    SumAll,
    CrossEntropy,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    Pick,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SumRows(Var),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Pick {
        x: Var,
        index: usize,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Gelu(..) => OpKind::Gelu,
            Op::LogSigmoid(..) => OpKind::LogSigmoid,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gather { .. } => OpKind::Gather,
            Op::SumRows(..) => OpKind::SumRows,
            Op::SumAll(..) => OpKind::SumAll,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::Pick { .. } => OpKind::Pick,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::LogSigmoid(a)
            | Op::Softmax(a)
            | Op::SumRows(a)
            | Op::SumAll(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::SliceRows { x, .. } | Op::SliceCols { x, .. } | Op::Pick { x, .. } => vec![*x],
        }
    }
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that asked for one.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Tape of operations for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. Leaves may borrow tensors (model parameters) for the
/// lifetime `'p`; everything else is owned. A graph is single-owner.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Owned leaf.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Owned(t), requires_grad)
    }

    /// Leaf borrowing an existing tensor, typically a model parameter.
    pub fn param(&mut self, t: &'p Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Borrowed(t), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.input(t, false)
    }

    fn push_leaf(&mut self, value: Cow<'p, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("{:?}", op.kind())));
        }
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(contract!("variable {} does not belong to this graph", v.0));
        }
        Ok(())
    }

    fn matrix(&self, v: Var) -> Result<&Tensor<T>> {
        self.check_var(v)?;
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(dim_err!("expected a matrix, got shape {:?}", t.shape()));
        }
        Ok(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.matrix(a)?, self.matrix(b)?);
        if ta.cols() != tb.rows() {
            return Err(dim_err!("matmul {:?} x {:?}", ta.shape(), tb.shape()));
        }
        let out = ta.matmul(tb)?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.matrix(a)?, self.matrix(b)?);
        if ta.cols() != tb.cols() {
            return Err(dim_err!("matmul_t {:?} x {:?}^T", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = Tensor::zeros(m, n);
        T::gemm(
            m,
            k,
            n,
            ta.data(),
            k as isize,
            1,
            tb.data(),
            1,
            k as isize,
            T::zero(),
            out.data_mut(),
        );
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.matrix(a)?.transpose()?;
        self.push(out, Op::Transpose(a))
    }

    fn elementwise(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let out = self.value(a).zip_map(self.value(b), f)?;
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.matrix(a)?, self.matrix(row)?);
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(dim_err!("add_row {:?} + {:?}", ta.shape(), tr.shape()));
        }
        let mut out = ta.clone();
        let c = ta.cols();
        for r in 0..ta.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&tr.data()[..c]) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.check_var(a)?;
        let out = self.value(a).map(|v| v * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let out = self.value(a).map(|v| v.tanh());
        self.push(out, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let (c, k, half) = (T::c(GELU_C), T::c(GELU_K), T::c(0.5));
        let out = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    /// `log(sigmoid(x))`, computed without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let out = self.value(a).map(log_sigmoid);
        self.push(out, Op::LogSigmoid(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.matrix(a)?;
        let mut out = t.clone();
        for r in 0..t.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise layer normalization with affine `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.matrix(x)?, self.matrix(gamma)?, self.matrix(beta)?);
        let c = tx.cols();
        if tg.shape() != [1, c] || tb.shape() != [1, c] {
            return Err(dim_err!(
                "layer_norm over {:?} with gain {:?} and bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            ));
        }
        let n = T::from_usize(c).unwrap();
        let eps = T::c(eps);
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut rstd = Vec::with_capacity(tx.rows());
        let mut out = Tensor::zeros(tx.rows(), c);
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            let o = out.row_mut(r);
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat.push(h);
                o[j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.matrix(table)?;
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= t.rows() {
                return Err(dim_err!("gather index {} out of {} rows", id, t.rows()));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::matrix(ids.len(), c, data)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Sum over rows: `r x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.matrix(a)?;
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, &v) in out.data_mut().iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.matrix(logits)?;
        if targets.len() != t.rows() || t.rows() == 0 {
            return Err(dim_err!(
                "cross_entropy over {:?} with {} targets",
                t.shape(),
                targets.len()
            ));
        }
        let mut probs = t.data().to_vec();
        let c = t.cols();
        let mut total = T::zero();
        for (r, &target) in targets.iter().enumerate() {
            if target >= c {
                return Err(dim_err!("target class {} out of {}", target, c));
            }
            let row = &mut probs[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            total += lse - row[target];
            softmax_in_place(row);
        }
        let out = Tensor::scalar(total / T::from_usize(targets.len()).unwrap());
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err!("concat of nothing"));
        }
        let cols = self.matrix(parts[0])?.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.matrix(p)?;
            if t.cols() != cols {
                return Err(dim_err!("concat_rows with {} vs {} columns", t.cols(), cols));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err!("concat of nothing"));
        }
        let rows = self.matrix(parts[0])?.rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.matrix(p)?;
            if t.rows() != rows {
                return Err(dim_err!("concat_cols with {} vs {} rows", t.rows(), rows));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + c].copy_from_slice(t.row(r));
            }
            offset += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.matrix(x)?.slice_rows(start, len)?;
        self.push(out, Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.matrix(x)?;
        if start + len > t.cols() {
            return Err(dim_err!(
                "column slice {}..{} of {:?}",
                start,
                start + len,
                t.shape()
            ));
        }
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    /// Single element (flat index) as a `1 x 1` scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        if index >= t.numel() {
            return Err(dim_err!("pick {} of {} elements", index, t.numel()));
        }
        let out = Tensor::scalar(t.data()[index]);
        self.push(out, Op::Pick { x, index })
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Returns gradients for every leaf created with `requires_grad`. The
    /// graph is left untouched, so calling this twice yields identical
    /// results.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_var(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(contract!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(
            self.value(loss).shape().to_vec(),
            vec![T::one()],
        )?);
        let mut leaves = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaves.insert(Var(i), g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads: leaves })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &*node.value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| &*self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    // dA = dC * B^T
                    let mut da = Tensor::zeros(m, k);
                    T::gemm(m, n, k, g.data(), n as isize, 1, tb.data(), 1, n as isize, T::zero(), da.data_mut());
                    accumulate(grads, *a, da)?;
                }
                if wants(*b) {
                    // dB = A^T * dC
                    let mut db = Tensor::zeros(k, n);
                    T::gemm(k, m, n, ta.data(), 1, k as isize, g.data(), n as isize, 1, T::zero(), db.data_mut());
                    accumulate(grads, *b, db)?;
                }
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if wants(*a) {
                    // dA = dC * B
                    let mut da = Tensor::zeros(m, k);
                    T::gemm(m, n, k, g.data(), n as isize, 1, tb.data(), k as isize, 1, T::zero(), da.data_mut());
                    accumulate(grads, *a, da)?;
                }
                if wants(*b) {
                    // dB = dC^T * A
                    let mut db = Tensor::zeros(n, k);
                    T::gemm(n, m, k, g.data(), 1, n as isize, ta.data(), k as isize, 1, T::zero(), db.data_mut());
                    accumulate(grads, *b, db)?;
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()?)?,
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?)?;
                }
                if wants(*b) {
                    accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?)?;
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(grads, *a, g.clone())?;
                }
                if wants(*row) {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *row, dr)?;
                }
            }
            Op::Scale(a, k) => accumulate(grads, *a, g.map(|v| v * *k))?,
            Op::Sigmoid(a) => {
                accumulate(grads, *a, g.zip_map(y, |g, s| g * s * (T::one() - s))?)?;
            }
            Op::Tanh(a) => {
                accumulate(grads, *a, g.zip_map(y, |g, t| g * (T::one() - t * t))?)?;
            }
            Op::Gelu(a) => {
                let (c, k, half) = (T::c(GELU_C), T::c(GELU_K), T::c(0.5));
                let three = T::c(3.0);
                let d = g.zip_map(val(*a), |g, x| {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                    g * (half * (T::one() + t) + half * x * dt)
                })?;
                accumulate(grads, *a, d)?;
            }
            Op::LogSigmoid(a) => {
                accumulate(grads, *a, g.zip_map(val(*a), |g, x| g * sigmoid(-x))?)?;
            }
            Op::Softmax(a) => {
                let mut d = Tensor::zeros_like(y);
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for (o, (&p, &q)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(grads, *a, d)?;
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = y.cols();
                let n = T::from_usize(c).unwrap();
                let tg = val(*gamma);
                if wants(*gamma) || wants(*beta) {
                    let mut dg = Tensor::zeros(1, c);
                    let mut db = Tensor::zeros(1, c);
                    for r in 0..y.rows() {
                        for j in 0..c {
                            let gv = g.data()[r * c + j];
                            dg.data_mut()[j] += gv * xhat[r * c + j];
                            db.data_mut()[j] += gv;
                        }
                    }
                    if wants(*gamma) {
                        accumulate(grads, *gamma, dg)?;
                    }
                    if wants(*beta) {
                        accumulate(grads, *beta, db)?;
                    }
                }
                if wants(*x) {
                    let mut dx = Tensor::zeros_like(y);
                    let mut dxhat = vec![T::zero(); c];
                    for r in 0..y.rows() {
                        let xh = &xhat[r * c..(r + 1) * c];
                        for j in 0..c {
                            dxhat[j] = g.data()[r * c + j] * tg.data()[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, dx)?;
                }
            }
            Op::Gather { table, ids } => {
                let t = val(*table);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &v) in d.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, d)?;
            }
            Op::SumRows(a) => {
                let t = val(*a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    d.row_mut(r).copy_from_slice(g.data());
                }
                accumulate(grads, *a, d)?;
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                accumulate(grads, *a, val(*a).map(|_| gv))?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let t = val(*logits);
                let c = t.cols();
                let k = g.data()[0] / T::from_usize(targets.len()).unwrap();
                let mut d = Tensor::matrix(t.rows(), c, probs.clone())?;
                for (r, &target) in targets.iter().enumerate() {
                    d.data_mut()[r * c + target] -= T::one();
                }
                d.scale_in_place(k);
                accumulate(grads, *logits, d)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = val(p).rows();
                    if wants(p) {
                        accumulate(grads, p, g.slice_rows(offset, rows)?)?;
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    if wants(p) {
                        let mut d = Tensor::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(grads, p, d)?;
                    }
                    offset += cols;
                }
            }
            Op::SliceRows { x, start } => {
                let t = val(*x);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                let c = t.cols();
                d.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                accumulate(grads, *x, d)?;
            }
            Op::SliceCols { x, start } => {
                let t = val(*x);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                let len = g.cols();
                for r in 0..t.rows() {
                    d.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, d)?;
            }
            Op::Pick { x, index } => {
                let mut d = Tensor::zeros_like(val(*x));
                d.data_mut()[*index] = g.data()[0];
                accumulate(grads, *x, d)?;
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, d: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
