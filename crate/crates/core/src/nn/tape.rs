//! Reverse-mode differentiation over 2-D values.

use std::borrow::Cow;

use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    Clip(Var, f64, f64),
    Min(Var, Var),
    /// Block-diagonal left product: each run of `k` rows is multiplied by the `k × k` operator.
    Propagate(Var, Cow<'a, [f64]>, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op<'a>,
}

/// Records operations for one forward pass and one backward pass.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

/// `c += a · b` for row-major `a` (m×k) and `b` (k×n), with optional transposes.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // Strides of the logical (untransposed) operands.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover every index reachable through the given
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [f64]>, op: Op<'a>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value from {op:?}");
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Constant input (no gradient is reported for it, though one is computed).
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::shape("input", format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(self.push(rows, cols, Cow::Owned(data), Op::Leaf))
    }

    pub fn input_slice(&mut self, rows: usize, cols: usize, data: &'a [f64]) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::shape("input", format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(self.push(rows, cols, Cow::Borrowed(data), Op::Leaf))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, Cow::Owned(vec![0.0; rows * cols]), Op::Leaf)
    }

    /// Borrows a parameter tensor as a leaf whose gradient is collected.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let t: &'a Tensor = store.get(id);
        let (r, c) = t.rows_cols();
        self.push(r, c, Cow::Borrowed(t.data()), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, self.value(a), false, self.value(b), false, &mut out);
        Ok(self.push(m, n, Cow::Owned(out), Op::MatMul(a, b)))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::shape("add_row", format!("{r}x{c} + {:?}", self.shape(row))));
        }
        let bias = self.value(row);
        let out: Vec<f64> = self.value(a).iter().enumerate().map(|(i, x)| x + bias[i % c]).collect();
        Ok(self.push(r, c, Cow::Owned(out), Op::AddRow(a, row)))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op<'a>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (r, c) {
            return Err(Error::shape(name, format!("{r}x{c} vs {:?}", self.shape(b))));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(r, c, Cow::Owned(out), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties take the gradient through `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("min", a, b, f64::min, Op::Min(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op<'a>) -> Var {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(r, c, Cow::Owned(out), op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clip(a, lo, hi))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(r, c, Cow::Owned(out), Op::LogSoftmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(rows, cols, Cow::Owned(out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("columns {start}..{} of {c}", start + len)));
        }
        let v = self.value(a);
        let out: Vec<f64> = (0..r).flat_map(|i| v[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.push(r, len, Cow::Owned(out), Op::SliceCols(a, start)))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        Ok(self.push(len, c, Cow::Owned(out), Op::SliceRows(a, start)))
    }

    /// Picks column `idx[r]` of every row, giving an `r × 1` column.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.len() != r || idx.iter().any(|&i| i >= c) {
            return Err(Error::shape("gather", format!("{} indices into {r}x{c}", idx.len())));
        }
        let v = self.value(a);
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| v[i * c + j]).collect();
        Ok(self.push(r, 1, Cow::Owned(out), Op::Gather(a, idx.to_vec())))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(1, 1, Cow::Owned(vec![m]), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum::<f64>();
        self.push(1, 1, Cow::Owned(vec![s]), Op::Sum(a))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c != rows * cols {
            return Err(Error::shape("reshape", format!("{r}x{c} to {rows}x{cols}")));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(rows, cols, Cow::Owned(out), Op::Reshape(a)))
    }

    /// Applies a `k × k` operator to each consecutive block of `k` rows of `a`.
    pub fn propagate(&mut self, a: Var, op: Cow<'a, [f64]>, k: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if op.len() != k * k || k == 0 || r % k != 0 {
            return Err(Error::shape("propagate", format!("operator of {} values, k={k}, input {r}x{c}", op.len())));
        }
        let mut out = vec![0.0; r * c];
        let v = self.value(a);
        for b in 0..r / k {
            let span = b * k * c..(b + 1) * k * c;
            gemm_acc(k, k, c, &op, false, &v[span.clone()], false, &mut out[span]);
        }
        Ok(self.push(r, c, Cow::Owned(out), Op::Propagate(a, op, k)))
    }

    /// Back-propagates from the scalar `loss`. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (rows, cols) = (node.rows, node.cols);
            let y = &node.value;
            let len_of = |v: Var| self.nodes[v.0].value.len();
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                    let n = cols;
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = acc(&mut grads, *a, m * k);
                    gemm_acc(m, n, k, &g, false, bv, true, ga);
                    let gb = acc(&mut grads, *b, k * n);
                    gemm_acc(k, m, n, av, true, &g, false, gb);
                }
                Op::AddRow(a, row) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, d)| *x += d);
                    let gr = acc(&mut grads, *row, cols);
                    for (j, d) in g.iter().enumerate() {
                        gr[j % cols] += d;
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, d)| *x += d);
                    let gb = acc(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(x, d)| *x += sign * d);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
                Op::Min(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let take_a: Vec<bool> = av.iter().zip(bv.iter()).map(|(x, y)| x <= y).collect();
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        if take_a[j] {
                            ga[j] += g[j];
                        }
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for j in 0..g.len() {
                        if !take_a[j] {
                            gb[j] += g[j];
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, d)| *x += s * d);
                }
                Op::Relu(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        if y[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j];
                    }
                }
                Op::Clip(a, lo, hi) => {
                    let av = &self.nodes[a.0].value;
                    let pass: Vec<bool> = av.iter().map(|x| *x >= *lo && *x <= *hi).collect();
                    let ga = acc(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        if pass[j] {
                            ga[j] += g[j];
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let gs: f64 = g[span.clone()].iter().sum();
                        for j in span {
                            ga[j] += g[j] - y[j].exp() * gs;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = (self.nodes[p.0].rows, self.nodes[p.0].cols);
                        let gp = acc(&mut grads, *p, pr * pc);
                        for r in 0..pr {
                            for c in 0..pc {
                                gp[r * pc + c] += g[r * cols + off + c];
                            }
                        }
                        off += pc;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = self.nodes[a.0].cols;
                    let ga = acc(&mut grads, *a, len_of(*a));
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * ac + start + c] += g[r * cols + c];
                        }
                    }
                }
                Op::SliceRows(a, start) => {
                    let ga = acc(&mut grads, *a, len_of(*a));
                    let off = start * cols;
                    ga[off..off + g.len()].iter_mut().zip(&g).for_each(|(x, d)| *x += d);
                }
                Op::Gather(a, idx) => {
                    let ac = self.nodes[a.0].cols;
                    let ga = acc(&mut grads, *a, len_of(*a));
                    for (r, &j) in idx.iter().enumerate() {
                        ga[r * ac + j] += g[r];
                    }
                }
                Op::Mean(a) => {
                    let n = len_of(*a);
                    let ga = acc(&mut grads, *a, n);
                    let d = g[0] / n as f64;
                    ga.iter_mut().for_each(|x| *x += d);
                }
                Op::Sum(a) => {
                    let ga = acc(&mut grads, *a, len_of(*a));
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Reshape(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, d)| *x += d);
                }
                Op::Propagate(a, op, k) => {
                    let k = *k;
                    let ga = acc(&mut grads, *a, g.len());
                    for b in 0..rows / k {
                        let span = b * k * cols..(b + 1) * k * cols;
                        gemm_acc(k, k, cols, op, true, &g[span.clone()], false, &mut ga[span]);
                    }
                }
            }
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, zero if `v` did not contribute.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients laid out like `store`, summed over every leaf
    /// that borrowed the same parameter.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                out[id.index()].iter_mut().zip(g).for_each(|(o, d)| *o += d);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn matmul_values_and_transposed_backward() {
        let mut t = Tape::new();
        let a = t.input(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = t.input(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[4.0, 5.0, 10.0, 11.0]);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        // d(sum AB)/dA = 1 · Bᵀ: each row of A gets the row sums of B.
        assert_eq!(g.wrt(a).unwrap(), &[1.0, 1.0, 2.0, 1.0, 1.0, 2.0]);
        assert_eq!(g.wrt(b).unwrap(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn backward_is_single_use() {
        let mut t = Tape::new();
        let a = t.input(1, 1, vec![2.0]).unwrap();
        let b = t.mul(a, a).unwrap();
        let g = t.backward(b).unwrap();
        assert_eq!(g.wrt(a).unwrap(), &[4.0]);
        assert!(matches!(t.backward(b), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.zeros(2, 3);
        let b = t.zeros(2, 3);
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        assert!(t.add_row(a, b).is_err());
        assert!(t.gather(a, &[0, 3]).is_err());
        assert!(t.slice_cols(a, 2, 2).is_err());
        assert!(t.slice_rows(a, 1, 2).is_err());
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let mut t = Tape::new();
        let a = t.input(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]).unwrap();
        let l = t.log_softmax(a);
        let e = t.exp(l);
        let v = t.value(e);
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-12);
        assert!((v[5] - 1.0).abs() < 1e-12);
    }

    /// Every op's gradient against central differences on one composite graph.
    #[test]
    fn composite_graph_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x0: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op: Vec<f64> = vec![0.5, 0.5, 0.25, 0.75];
        let f = |x: &[f64]| {
            let mut t = Tape::new();
            let a = t.input(4, 3, x.to_vec()).unwrap();
            let w = t.input(3, 3, vec![0.3, -0.2, 0.1, 0.5, 0.4, -0.6, -0.1, 0.2, 0.7]).unwrap();
            let bias = t.input(1, 3, vec![0.1, -0.1, 0.05]).unwrap();
            let h = t.matmul(a, w).unwrap();
            let h = t.add_row(h, bias).unwrap();
            let p = t.propagate(h, Cow::Borrowed(&op), 2).unwrap();
            let s1 = t.sigmoid(p);
            let s2 = t.tanh(h);
            let m = t.mul(s1, s2).unwrap();
            let r = t.relu(h);
            let sum = t.add(m, r).unwrap();
            let d = t.sub(sum, s1).unwrap();
            let cc = t.concat_cols(&[d, h]).unwrap();
            let sl = t.slice_cols(cc, 1, 4).unwrap();
            let rs = t.reshape(sl, 8, 2).unwrap();
            let sr = t.slice_rows(rs, 1, 6).unwrap();
            let ls = t.log_softmax(sr);
            let gt = t.gather(ls, &[0, 1, 1, 0, 0, 1]).unwrap();
            let ex = t.exp(gt);
            let cl = t.clip(ex, 0.3, 0.7);
            let sc = t.scale(ex, 0.5);
            let mn = t.min(cl, sc).unwrap();
            let loss = t.mean(mn);
            let v = t.scalar(loss);
            let g = t.backward(loss).unwrap();
            (v, g.wrt(a).unwrap().to_vec())
        };
        let report = grad_check(f, &x0, 1e-5);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
