//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation appends a node to the [`Tape`] holding its forward value and
//! the handles of its inputs. [`Tape::backward`] sweeps the nodes in reverse
//! creation order and returns gradients for every leaf registered as
//! trainable. The tape is rebuilt for each loss evaluation.
//!
//! ```
//! use netude::autodiff::Tape;
//! use netude::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![2.0]), true).unwrap();
//! let y = tape.leaf(Tensor::from_vec(vec![3.0]), true).unwrap();
//! let z = tape.mul(x, y).unwrap();
//! let root = tape.sum(z);
//! let grads = tape.backward(root).unwrap();
//! assert_eq!(grads[x].data(), &[3.0]);
//! assert_eq!(grads[y].data(), &[2.0]);
//! ```

use std::collections::BTreeMap;
use std::ops::Index;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    MatVec(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Sum(Var),
    MeanSqErr(Var, Var),
    L1Sum(Var),
    Reshape(Var),
    GatherRows(Var, Arc<[usize]>),
    ConcatCols(Var, Var),
    SelectCol(Var, usize),
    PairAggregate { edge: Var, adj: Var, n: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    /// True when some trainable leaf is an ancestor (or the node itself).
    needs_grad: bool,
}

/// Append-only computation graph.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root keyed by trainable leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(&var)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.grads.iter()
    }

    /// Removes and returns the gradient for `var`.
    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.remove(&var)
    }
}

impl Index<Var> for Gradients {
    type Output = Tensor;

    fn index(&self, var: Var) -> &Tensor {
        self.grads
            .get(&var)
            .expect("no gradient recorded for this handle (not a trainable leaf)")
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Invalid(format!(
            "{op} expects a 2-D tensor, got shape {:?}",
            t.shape()
        ))),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `c += alpha * a * b` with explicit row/column strides, `a` is `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every index touched by the kernel.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Registers an input. Trainable leaves receive a gradient from [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "leaf of shape {:?}",
                value.shape()
            )));
        }
        Ok(self.push(Op::Leaf { trainable }, value, trainable))
    }

    /// Shorthand for a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same(name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = ta.with_data(data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, value, needs))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let value = ta.with_data(ta.data().iter().map(|&x| f(x)).collect());
        let needs = self.needs(a);
        self.push(op, value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    /// Adds a constant tensor that takes no part in differentiation.
    pub fn add_const(&mut self, a: Var, offset: &Tensor) -> Result<Var> {
        let ta = self.value(a);
        check_same("add_const", ta, offset)?;
        let data = ta
            .data()
            .iter()
            .zip(offset.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = ta.with_data(data);
        let needs = self.needs(a);
        Ok(self.push(Op::AddConst(a), value, needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), |x| leaky_relu(x, slope))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// `w [m x n] . x [n] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        let (m, n) = matrix_dims("matvec", tw)?;
        if tx.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                left: tw.shape().to_vec(),
                right: tx.shape().to_vec(),
            });
        }
        let (wd, xd) = (tw.data(), tx.data());
        let out = (0..m)
            .map(|i| {
                wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(xd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let needs = self.needs(w) || self.needs(x);
        Ok(self.push(Op::MatVec(w, x), Tensor::from_vec(out), needs))
    }

    /// Batched affine layer: `x [rows x in] . w^T + b` with `w [out x in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (rows, fan_in) = matrix_dims("linear", tx)?;
        let (fan_out, w_in) = matrix_dims("linear", tw)?;
        if w_in != fan_in {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: tx.shape().to_vec(),
                right: tw.shape().to_vec(),
            });
        }
        if tb.shape() != [fan_out] {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                left: tw.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(tb.data());
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            tx.data(),
            (fan_in, 1),
            tw.data(),
            (1, fan_in),
            &mut out,
            (fan_out, 1),
        );
        let value = Tensor::new(vec![rows, fan_out], out)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Linear { x, w, b }, value, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(s), needs)
    }

    /// Mean of squared differences over all entries.
    pub fn mean_sq_err(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same("mean_sq_err", ta, tb)?;
        let n = ta.len().max(1) as f64;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MeanSqErr(a, b), Tensor::scalar(s / n), needs))
    }

    /// Sum of absolute values. The subgradient at zero is zero.
    pub fn l1_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        let needs = self.needs(a);
        self.push(Op::L1Sum(a), Tensor::scalar(s), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: ta.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = ta.clone().reshaped(shape.to_vec());
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), value, needs))
    }

    /// Row `k` of the output is row `rows[k]` of the 2-D input.
    pub fn gather_rows(&mut self, a: Var, rows: Arc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        let (r, c) = matrix_dims("gather_rows", ta)?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Invalid(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let src = ta.data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(vec![rows.len(), c], out)?;
        let needs = self.needs(a);
        Ok(self.push(Op::GatherRows(a, rows), value, needs))
    }

    /// `[m x p] ++ [m x q] -> [m x (p + q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, p) = matrix_dims("concat_cols", ta)?;
        let (mb, q) = matrix_dims("concat_cols", tb)?;
        if m != mb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&ta.data()[i * p..(i + 1) * p]);
            out.extend_from_slice(&tb.data()[i * q..(i + 1) * q]);
        }
        let value = Tensor::new(vec![m, p + q], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), value, needs))
    }

    /// Column `col` of a 2-D tensor as an `[m x 1]` tensor.
    pub fn select_col(&mut self, a: Var, col: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, c) = matrix_dims("select_col", ta)?;
        if col >= c {
            return Err(Error::Invalid(format!(
                "select_col column {col} out of range for {c} columns"
            )));
        }
        let out = (0..m).map(|i| ta.data()[i * c + col]).collect();
        let value = Tensor::new(vec![m, 1], out)?;
        let needs = self.needs(a);
        Ok(self.push(Op::SelectCol(a, col), value, needs))
    }

    /// Weighted neighbour sum for a batch of graphs sharing one `n x n` weight matrix.
    ///
    /// `edge` holds one value per ordered pair `(i, j)`, `j != i`, laid out as
    /// `[batch][i][j skipping i]`. Output row `b * n + i` is
    /// `sum_{j != i} adj[i, j] * edge[b, i, j]`; the diagonal of `adj` is never read.
    pub fn pair_aggregate(&mut self, edge: Var, adj: Var, n: usize) -> Result<Var> {
        let (te, ta) = (self.value(edge), self.value(adj));
        if n < 2 || ta.len() != n * n {
            return Err(Error::Invalid(format!(
                "pair_aggregate expects an {n}x{n} weight matrix, got shape {:?}",
                ta.shape()
            )));
        }
        let per_graph = n * (n - 1);
        if te.len() % per_graph != 0 {
            return Err(Error::Invalid(format!(
                "pair_aggregate edge values ({}) not a multiple of {per_graph}",
                te.len()
            )));
        }
        let batch = te.len() / per_graph;
        let (ed, ad) = (te.data(), ta.data());
        let mut out = vec![0.0; batch * n];
        for b in 0..batch {
            for i in 0..n {
                let row = b * n + i;
                let base = row * (n - 1);
                let mut acc = 0.0;
                for jj in 0..n - 1 {
                    let j = if jj < i { jj } else { jj + 1 };
                    acc += ad[i * n + j] * ed[base + jj];
                }
                out[row] = acc;
            }
        }
        let value = Tensor::new(vec![batch * n, 1], out)?;
        let needs = self.needs(edge) || self.needs(adj);
        Ok(self.push(Op::PairAggregate { edge, adj, n }, value, needs))
    }

    /// Reverse sweep from a one-element `root`.
    ///
    /// Every trainable leaf created before `root` appears in the result; leaves
    /// with no path to `root` get an all-zero gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut grads = BTreeMap::new();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Leaf { trainable: true } = node.op {
                let g = adj[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                grads.insert(Var(idx), node.value.with_data(g));
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut adj);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Accumulates into the adjoint of `v` if it lies on a trainable path.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();

        match node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(a, &mut |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(vb) {
                        *s += g * y;
                    }
                });
                acc(b, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(va) {
                        *s += g * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)
            }),
            Op::AddConst(a) | Op::Reshape(a) => {
                acc(a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g))
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(a, &mut |s| {
                    for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                        *s += g * y * (1.0 - y);
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(a);
                acc(a, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(x) {
                        *s += if *x > 0.0 { *g } else { slope * g };
                    }
                });
            }
            Op::Square(a) => {
                let x = val(a);
                acc(a, &mut |s| {
                    for ((s, g), x) in s.iter_mut().zip(g).zip(x) {
                        *s += 2.0 * x * g;
                    }
                });
            }
            Op::MatVec(w, x) => {
                let n = val(x).len();
                let (wd, xd) = (val(w), val(x));
                acc(w, &mut |s| {
                    for (i, gi) in g.iter().enumerate() {
                        for k in 0..n {
                            s[i * n + k] += gi * xd[k];
                        }
                    }
                });
                acc(x, &mut |s| {
                    for (i, gi) in g.iter().enumerate() {
                        for k in 0..n {
                            s[k] += gi * wd[i * n + k];
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (rows, fan_in) = (nodes[x.0].value.shape()[0], nodes[x.0].value.shape()[1]);
                let fan_out = nodes[w.0].value.shape()[0];
                let (xd, wd) = (val(x), val(w));
                acc(x, &mut |s| {
                    gemm(
                        rows,
                        fan_out,
                        fan_in,
                        g,
                        (fan_out, 1),
                        wd,
                        (fan_in, 1),
                        s,
                        (fan_in, 1),
                    )
                });
                acc(w, &mut |s| {
                    gemm(
                        fan_out,
                        rows,
                        fan_in,
                        g,
                        (1, fan_out),
                        xd,
                        (fan_in, 1),
                        s,
                        (fan_in, 1),
                    )
                });
                acc(b, &mut |s| {
                    for row in g.chunks_exact(fan_out) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Sum(a) => acc(a, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::MeanSqErr(a, b) => {
                let (va, vb) = (val(a), val(b));
                let c = 2.0 * g[0] / va.len().max(1) as f64;
                acc(a, &mut |s| {
                    for ((s, x), y) in s.iter_mut().zip(va).zip(vb) {
                        *s += c * (x - y);
                    }
                });
                acc(b, &mut |s| {
                    for ((s, x), y) in s.iter_mut().zip(va).zip(vb) {
                        *s -= c * (x - y);
                    }
                });
            }
            Op::L1Sum(a) => {
                let x = val(a);
                acc(a, &mut |s| {
                    for (s, x) in s.iter_mut().zip(x) {
                        if *x > 0.0 {
                            *s += g[0];
                        } else if *x < 0.0 {
                            *s -= g[0];
                        }
                    }
                });
            }
            Op::GatherRows(a, ref rows) => {
                let c = nodes[a.0].value.shape()[1];
                acc(a, &mut |s| {
                    for (k, &i) in rows.iter().enumerate() {
                        for j in 0..c {
                            s[i * c + j] += g[k * c + j];
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let p = nodes[a.0].value.shape()[1];
                let q = nodes[b.0].value.shape()[1];
                acc(a, &mut |s| {
                    for (dst, src) in s.chunks_exact_mut(p).zip(g.chunks_exact(p + q)) {
                        dst.iter_mut().zip(&src[..p]).for_each(|(d, g)| *d += g);
                    }
                });
                acc(b, &mut |s| {
                    for (dst, src) in s.chunks_exact_mut(q).zip(g.chunks_exact(p + q)) {
                        dst.iter_mut().zip(&src[p..]).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::SelectCol(a, col) => {
                let c = nodes[a.0].value.shape()[1];
                acc(a, &mut |s| {
                    for (i, gi) in g.iter().enumerate() {
                        s[i * c + col] += gi;
                    }
                });
            }
            Op::PairAggregate { edge, adj: w, n } => {
                let (ed, ad) = (val(edge), val(w));
                acc(edge, &mut |s| {
                    for (row, gr) in g.iter().enumerate() {
                        let i = row % n;
                        let base = row * (n - 1);
                        for jj in 0..n - 1 {
                            let j = if jj < i { jj } else { jj + 1 };
                            s[base + jj] += gr * ad[i * n + j];
                        }
                    }
                });
                acc(w, &mut |s| {
                    for (row, gr) in g.iter().enumerate() {
                        let i = row % n;
                        let base = row * (n - 1);
                        for jj in 0..n - 1 {
                            let j = if jj < i { jj } else { jj + 1 };
                            s[i * n + j] += gr * ed[base + jj];
                        }
                    }
                });
            }
        }
    }
}

/// Outcome of [`gradcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    /// Largest relative error among entries of magnitude at least `atol / rtol`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(tensor, entry)` of the largest relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares `analytic` with central differences of `f` at `params`, entry by
/// entry. An entry passes when `|a - fd| <= atol` or
/// `|a - fd| / max(|a|, |fd|) <= rtol`.
pub fn gradcheck<F>(
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    rtol: f64,
    atol: f64,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut(&[Vec<f64>]) -> Result<f64>,
{
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, g)| p.len() != g.len())
    {
        return Err(Error::Invalid(
            "gradient layout does not match the parameters".into(),
        ));
    }
    let mut work = params.to_vec();
    let mut report = GradCheck {
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
    };
    let floor = atol / rtol;
    for t in 0..params.len() {
        for k in 0..params[t].len() {
            let x = params[t][k];
            work[t][k] = x + h;
            let up = f(&work)?;
            work[t][k] = x - h;
            let down = f(&work)?;
            work[t][k] = x;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[t][k];
            let abs = (a - fd).abs();
            let scale = a.abs().max(fd.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if scale >= floor && rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((t, k));
            }
            if !(abs <= atol) && !(rel <= rtol) {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn leaf_identity_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0]), true).unwrap();
        let g = tape.backward(x).unwrap();
        assert_eq!(g[x].data(), &[1.0]);
    }

    #[test]
    fn leaf_shape_and_identity() {
        let mut tape = Tape::new();
        let a = tape
            .leaf(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap(), false)
            .unwrap();
        let b = tape
            .leaf(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap(), false)
            .unwrap();
        assert_eq!(tape.value(a).len(), 6);
        assert_ne!(a, b);
    }

    #[test]
    fn leaf_rejects_non_finite() {
        let mut tape = Tape::new();
        assert!(matches!(
            tape.leaf(t(&[f64::NAN]), true),
            Err(Error::NonFinite(_))
        ));
        assert!(tape.leaf(t(&[f64::INFINITY]), false).is_err());
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[0.0]), true).unwrap();
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        let g = tape.backward(s).unwrap();
        assert_eq!(g[z].data(), &[0.25]);
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let mut tape = Tape::new();
        let z = tape.leaf(t(&[-2.0]), true).unwrap();
        let y = tape.leaky_relu(z, 0.01);
        assert_eq!(tape.value(y).data(), &[-0.02]);
        let g = tape.backward(y).unwrap();
        assert_eq!(g[z].data(), &[0.01]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2.0]), true).unwrap();
        let b = tape.leaf(t(&[3.0]), true).unwrap();
        let p = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[6.0]);
        let g = tape.backward(p).unwrap();
        assert_eq!(g[a].data(), &[3.0]);
        assert_eq!(g[b].data(), &[2.0]);
    }

    #[test]
    fn binary_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1.0, 2.0]), true).unwrap();
        let b = tape.leaf(t(&[1.0, 2.0, 3.0]), true).unwrap();
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
        assert!(tape.mean_sq_err(a, b).is_err());
    }

    #[test]
    fn matvec_values_and_gradients() {
        let mut tape = Tape::new();
        let eye = tape
            .leaf(
                Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                false,
            )
            .unwrap();
        let v = tape.leaf(t(&[3.0, 4.0]), false).unwrap();
        let y = tape.matvec(eye, v).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

        let w = tape
            .leaf(
                Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                true,
            )
            .unwrap();
        let x = tape.leaf(t(&[1.0, 1.0]), true).unwrap();
        let y = tape.matvec(w, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);
        let root = tape.sum(y);
        let g = tape.backward(root).unwrap();
        // outer(ones, x)
        assert_eq!(g[w].data(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g[x].data(), &[4.0, 6.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(&[2, 3]), true).unwrap();
        let x = tape.leaf(Tensor::zeros(&[2]), true).unwrap();
        assert!(matches!(
            tape.matvec(w, x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[-1.0, 2.0, -3.0]), true).unwrap();
        let l1 = tape.l1_sum(x);
        assert_eq!(tape.value(l1).item(), Some(6.0));
        let g = tape.backward(l1).unwrap();
        assert_eq!(g[x].data(), &[-1.0, 1.0, -1.0]);

        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g[x].data(), &[1.0, 1.0, 1.0]);

        let e = tape.mean_sq_err(x, x).unwrap();
        assert_eq!(tape.value(e).item(), Some(0.0));
        let g = tape.backward(e).unwrap();
        assert_eq!(g[x].data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[0.0, 1.0]), true).unwrap();
        let l1 = tape.l1_sum(x);
        let g = tape.backward(l1).unwrap();
        assert_eq!(g[x].data(), &[0.0, 1.0]);
    }

    #[test]
    fn scale_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0, -4.0, 2.5]), true).unwrap();
        let y = tape.scale(x, 3.0);
        let root = tape.sum(y);
        let g = tape.backward(root).unwrap();
        assert_eq!(g[x].data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let used = tape.leaf(t(&[2.0]), true).unwrap();
        let unused = tape.leaf(t(&[5.0, 6.0]), true).unwrap();
        let y = tape.square(used);
        let g = tape.backward(y).unwrap();
        assert_eq!(g[used].data(), &[4.0]);
        assert_eq!(g[unused].data(), &[0.0, 0.0]);
        assert!(g.get(y).is_none());
    }

    #[test]
    fn linear_matches_matvec() {
        let mut tape = Tape::new();
        let w = tape
            .leaf(
                Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 4.0, -1.5, 3.0]).unwrap(),
                true,
            )
            .unwrap();
        let b = tape.leaf(t(&[0.1, 0.2, 0.3]), true).unwrap();
        let xv = tape.leaf(t(&[0.7, -0.2]), true).unwrap();
        let x = tape.reshape(xv, &[1, 2]).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        let mv = tape.matvec(w, xv).unwrap();
        let expect: Vec<f64> = tape
            .value(mv)
            .data()
            .iter()
            .zip(tape.value(b).data())
            .map(|(a, b)| a + b)
            .collect();
        for (a, e) in tape.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_aggregate_skips_diagonal() {
        let mut tape = Tape::new();
        // n = 3, one graph; edges laid out as (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
        let edge = tape.leaf(t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true).unwrap();
        let adj = tape
            .leaf(
                Tensor::new(
                    vec![3, 3],
                    vec![100.0, 1.0, 0.0, 0.0, 100.0, 1.0, 1.0, 0.0, 100.0],
                )
                .unwrap(),
                true,
            )
            .unwrap();
        let out = tape.pair_aggregate(edge, adj, 3).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 4.0, 5.0]);
        let root = tape.sum(out);
        let g = tape.backward(root).unwrap();
        assert_eq!(
            g[adj].data(),
            &[0.0, 1.0, 2.0, 3.0, 0.0, 4.0, 5.0, 6.0, 0.0]
        );
        assert_eq!(g[edge].data(), &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }
}
