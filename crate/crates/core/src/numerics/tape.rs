//! Matrix-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! handles of its inputs. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid topological order because a node can
//! only reference nodes created before it.
//!
//! Parameters are borrowed (no copy per forward pass); only nodes that
//! depend on a gradient-tracked leaf take part in the backward sweep.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::matrix::{gemm, View, ViewMut};
use crate::numerics::ops::{gelu, gelu_grad, sigmoid, softmax_in_place, NORM_FLOOR};
use crate::numerics::{Matrix, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    Softmax(Var),
    Sigmoid(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    HeadLogits {
        q: Var,
        k: Var,
        heads: usize,
        scale: T,
    },
    HeadMix {
        attn: Var,
        v: Var,
        heads: usize,
    },
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    MeanRows(Var),
    RowScale(Var, Var),
    NormalizeRows(Var),
    Sum(Var),
    KlToTarget {
        p: Var,
        target: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Matrix<T>>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients produced by one backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient reaching `v`, or `None` when `v` is untracked or disconnected
    /// from the output.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v` with disconnected inputs defined as zero. The flag is
    /// `false` when no gradient path reached `v`.
    pub fn get_or_zero(&self, v: Var) -> (Matrix<T>, bool) {
        match self.get(v) {
            Some(g) => (g.clone(), true),
            None => {
                let (r, c) = self.shapes[v.0];
                (Matrix::zeros(r, c), false)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Matrix<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Borrowed leaf (typically a model parameter). `tracked` decides whether
    /// it receives a gradient.
    pub fn borrowed(&mut self, value: &'a Matrix<T>, tracked: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, tracked)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Cow<'a, Matrix<T>>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Matrix<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push(Cow::Owned(value), op, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.derived(out, Op::MatMulT(a, b), &[a, b]))
    }

    /// `x · w + 1·bᵀ` with `b` a `1 × cols(w)` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut out = self.value(x).matmul(self.value(w))?;
        if let Some(b) = b {
            let bias = self.value(b);
            bias_shape(bias, out.cols())?;
            for r in 0..out.rows() {
                for (o, &bv) in out.row_mut(r).iter_mut().zip(bias.data()) {
                    *o = *o + bv;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(out, Op::Affine { x, w, b }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.derived(out, Op::Scale(a, s), &[a])
    }

    /// Adds the `1 × cols` row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let r = self.value(row);
        bias_shape(r, self.value(x).cols())?;
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            for (o, &bv) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o = *o + bv;
            }
        }
        Ok(self.derived(out, Op::AddRow(x, row), &[x, row]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = crate::numerics::softmax_rows(self.value(a))?;
        Ok(self.derived(out, Op::Softmax(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.derived(out, Op::Gelu(a), &[a])
    }

    /// Row-wise layer normalization with `1 × cols` scale and offset rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        bias_shape(self.value(gamma), cols)?;
        bias_shape(self.value(beta), cols)?;
        let n = T::lit(cols as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(xv.rows(), cols);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let istd = T::one() / (var + eps).sqrt();
            inv_std.push(istd);
            for (h, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * istd;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, &gv), &bv) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        Ok(self.derived(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Per-head scaled logits `scale · Q_h K_hᵀ`, stacked head-major into an
    /// `(heads·Tq) × Tk` matrix. Head `h` uses the column block
    /// `[h·d, (h+1)·d)` of `q` and `k`, `d = cols / heads`.
    pub fn head_logits(&mut self, q: Var, k: Var, heads: usize, scale: T) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(k));
        let d = head_width(qv.cols(), heads)?;
        if kv.cols() != qv.cols() {
            return Err(Error::shape(format!(
                "head_logits: query width {} vs key width {}",
                qv.cols(),
                kv.cols()
            )));
        }
        let (tq, tk) = (qv.rows(), kv.rows());
        let mut out = Matrix::zeros(heads * tq, tk);
        for h in 0..heads {
            gemm(
                scale,
                View::cols(qv, h * d, d),
                View::cols(kv, h * d, d).t(),
                T::zero(),
                ViewMut::rows(&mut out, h * tq, tq),
            );
        }
        Ok(self.derived(out, Op::HeadLogits { q, k, heads, scale }, &[q, k]))
    }

    /// Applies stacked per-head mixing matrices to values: column block `h`
    /// of the `Tq × D` output is `attn_h · V_h`.
    pub fn head_mix(&mut self, attn: Var, v: Var, heads: usize) -> Result<Var> {
        let (av, vv) = (self.value(attn), self.value(v));
        let d = head_width(vv.cols(), heads)?;
        if av.rows() % heads != 0 || av.cols() != vv.rows() {
            return Err(Error::shape(format!(
                "head_mix: stacked {}x{} against values {}x{} with {heads} heads",
                av.rows(),
                av.cols(),
                vv.rows(),
                vv.cols()
            )));
        }
        let tq = av.rows() / heads;
        let mut out = Matrix::zeros(tq, vv.cols());
        for h in 0..heads {
            gemm(
                T::one(),
                View::rows(av, h * tq, tq),
                View::cols(vv, h * d, d),
                T::zero(),
                ViewMut::cols(&mut out, h * d, d),
            );
        }
        Ok(self.derived(out, Op::HeadMix { attn, v, heads }, &[attn, v]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let out = Matrix::from_fn(av.rows(), av.cols() + bv.cols(), |r, c| {
            if c < av.cols() {
                av[(r, c)]
            } else {
                bv[(r, c - av.cols())]
            }
        });
        Ok(self.derived(out, Op::ConcatCols(a, b), &[a, b]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let out = Matrix::from_vec(av.rows() + bv.rows(), av.cols(), data)?;
        Ok(self.derived(out, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).cols_range(start, len)?;
        Ok(self.derived(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&r) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::shape(format!("gather_rows: row {r} of {}", xv.rows())));
        }
        let mut data = Vec::with_capacity(rows.len() * xv.cols());
        for &r in &rows {
            data.extend_from_slice(xv.row(r));
        }
        let out = Matrix::from_vec(rows.len(), xv.cols(), data)?;
        Ok(self.derived(out, Op::GatherRows { x, rows }, &[x]))
    }

    /// Mean over rows, giving a `1 × cols` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::shape("mean_rows: no rows"));
        }
        let n = T::lit(xv.rows() as f64);
        let out = Matrix::from_fn(1, xv.cols(), |_, c| {
            (0..xv.rows()).map(|r| xv[(r, c)]).sum::<T>() / n
        });
        Ok(self.derived(out, Op::MeanRows(x), &[x]))
    }

    /// `y[i, j] = a[i, j] · s[i]` with `s` a column vector.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.shape() != (av.rows(), 1) {
            return Err(Error::shape(format!(
                "row_scale: scale is {}x{}, need {}x1",
                sv.rows(),
                sv.cols(),
                av.rows()
            )));
        }
        let out = Matrix::from_fn(av.rows(), av.cols(), |r, c| av[(r, c)] * sv[(r, 0)]);
        Ok(self.derived(out, Op::RowScale(a, s), &[a, s]))
    }

    /// Divides each row of a non-negative matrix by `max(row sum, 1e−12)`.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let floor = T::lit(NORM_FLOOR);
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let s = row.iter().copied().sum::<T>().max(floor);
            row.iter_mut().for_each(|v| *v = *v / s);
        }
        self.derived(out, Op::NormalizeRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        self.derived(out, Op::Sum(x), &[x])
    }

    /// `D_KL(p ‖ target)` for a `1 × n` row `p` against a fixed strictly
    /// positive target (already smoothed by the caller).
    pub fn kl_to_target(&mut self, p: Var, target: Vec<T>) -> Result<Var> {
        let pv = self.value(p);
        if pv.rows() != 1 || pv.cols() != target.len() {
            return Err(Error::shape(format!(
                "kl_to_target: {}x{} against {} targets",
                pv.rows(),
                pv.cols(),
                target.len()
            )));
        }
        if target.iter().any(|&t| !(t > T::zero())) {
            return Err(Error::invalid("kl_to_target: target must be strictly positive"));
        }
        let out = Matrix::scalar(crate::numerics::ops::kl_unchecked(pv.data(), &target));
        Ok(self.derived(out, Op::KlToTarget { p, target }, &[p]))
    }

    /// Softmax cross-entropy of a `1 × classes` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != 1 {
            return Err(Error::shape("cross_entropy: logits must be a single row"));
        }
        if label >= lv.cols() {
            return Err(Error::invalid(format!(
                "label {label} out of range for {} classes",
                lv.cols()
            )));
        }
        let mut probs = lv.data().to_vec();
        softmax_in_place(&mut probs);
        let max = lv.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + lv.data().iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        let out = Matrix::scalar(lse - lv.data()[label]);
        Ok(self.derived(
            out,
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar node `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar seed, got {}x{}",
                out.rows(),
                out.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        // Only tracked nodes keep gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.tracked {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn propagate(
        &self,
        op: &Op<T>,
        value: &Matrix<T>,
        g: &Matrix<T>,
        grads: &mut [Option<Matrix<T>>],
    ) -> Result<()> {
        let val = |v: Var| -> &Matrix<T> { &self.nodes[v.0].value };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g.matmul_t(val(*b))?);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, val(*a).transpose().matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g.matmul(val(*b))?);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g.transpose().matmul(val(*a))?);
                }
            }
            Op::Affine { x, w, b } => {
                if self.tracked(*x) {
                    accumulate(grads, *x, g.matmul_t(val(*w))?);
                }
                if self.tracked(*w) {
                    let xv = val(*x);
                    let mut dw = Matrix::zeros(xv.cols(), g.cols());
                    gemm(T::one(), View::full(xv).t(), View::full(g), T::zero(), ViewMut::full(&mut dw));
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b.filter(|b| self.tracked(*b)) {
                    accumulate(grads, b, column_sums(g));
                }
            }
            Op::Add(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddRow(x, row) => {
                if self.tracked(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.tracked(*row) {
                    accumulate(grads, *row, column_sums(g));
                }
            }
            Op::Softmax(a) => {
                let mut d = g.clone();
                for r in 0..d.rows() {
                    let y = value.row(r);
                    let dot: T = d.row(r).iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                    for (di, &yi) in d.row_mut(r).iter_mut().zip(y) {
                        *di = yi * (*di - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(value, |gi, y| gi * y * (T::one() - y))?;
                accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let d = g.zip_map(val(*a), |gi, x| gi * gelu_grad(x))?;
                accumulate(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = val(*gamma).data();
                let cols = xhat.cols();
                if self.tracked(*x) {
                    let n = T::lit(cols as f64);
                    let mut dx = Matrix::zeros(xhat.rows(), cols);
                    for r in 0..xhat.rows() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..cols {
                            let dh = gr[j] * gv[j];
                            mean_d = mean_d + dh;
                            mean_dh = mean_dh + dh * hr[j];
                        }
                        mean_d = mean_d / n;
                        mean_dh = mean_dh / n;
                        let out = dx.row_mut(r);
                        for j in 0..cols {
                            let dh = gr[j] * gv[j];
                            out[j] = inv_std[r] * (dh - mean_d - hr[j] * mean_dh);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.tracked(*gamma) {
                    let dg = Matrix::from_fn(1, cols, |_, c| {
                        (0..g.rows()).map(|r| g[(r, c)] * xhat[(r, c)]).sum()
                    });
                    accumulate(grads, *gamma, dg);
                }
                if self.tracked(*beta) {
                    accumulate(grads, *beta, column_sums(g));
                }
            }
            Op::HeadLogits { q, k, heads, scale } => {
                let (qv, kv) = (val(*q), val(*k));
                let d = qv.cols() / heads;
                let (tq, tk) = (qv.rows(), kv.rows());
                if self.tracked(*q) {
                    let mut dq = Matrix::zeros(tq, qv.cols());
                    for h in 0..*heads {
                        gemm(
                            *scale,
                            View::rows(g, h * tq, tq),
                            View::cols(kv, h * d, d),
                            T::zero(),
                            ViewMut::cols(&mut dq, h * d, d),
                        );
                    }
                    accumulate(grads, *q, dq);
                }
                if self.tracked(*k) {
                    let mut dk = Matrix::zeros(tk, kv.cols());
                    for h in 0..*heads {
                        gemm(
                            *scale,
                            View::rows(g, h * tq, tq).t(),
                            View::cols(qv, h * d, d),
                            T::zero(),
                            ViewMut::cols(&mut dk, h * d, d),
                        );
                    }
                    accumulate(grads, *k, dk);
                }
            }
            Op::HeadMix { attn, v, heads } => {
                let (av, vv) = (val(*attn), val(*v));
                let d = vv.cols() / heads;
                let tq = av.rows() / heads;
                if self.tracked(*attn) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for h in 0..*heads {
                        gemm(
                            T::one(),
                            View::cols(g, h * d, d),
                            View::cols(vv, h * d, d).t(),
                            T::zero(),
                            ViewMut::rows(&mut da, h * tq, tq),
                        );
                    }
                    accumulate(grads, *attn, da);
                }
                if self.tracked(*v) {
                    let mut dv = Matrix::zeros(vv.rows(), vv.cols());
                    for h in 0..*heads {
                        gemm(
                            T::one(),
                            View::rows(av, h * tq, tq).t(),
                            View::cols(g, h * d, d),
                            T::zero(),
                            ViewMut::cols(&mut dv, h * d, d),
                        );
                    }
                    accumulate(grads, *v, dv);
                }
            }
            Op::ConcatCols(a, b) => {
                let ac = val(*a).cols();
                if self.tracked(*a) {
                    accumulate(grads, *a, g.cols_range(0, ac)?);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g.cols_range(ac, g.cols() - ac)?);
                }
            }
            Op::ConcatRows(a, b) => {
                let ar = val(*a).rows();
                if self.tracked(*a) {
                    accumulate(grads, *a, g.rows_range(0, ar)?);
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g.rows_range(ar, g.rows() - ar)?);
                }
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::GatherRows { x, rows } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (d, &gi) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d = *d + gi;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let n = T::lit(xv.rows() as f64);
                let dx = Matrix::from_fn(xv.rows(), xv.cols(), |_, c| g[(0, c)] / n);
                accumulate(grads, *x, dx);
            }
            Op::RowScale(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                if self.tracked(*a) {
                    let da = Matrix::from_fn(av.rows(), av.cols(), |r, c| g[(r, c)] * sv[(r, 0)]);
                    accumulate(grads, *a, da);
                }
                if self.tracked(*s) {
                    let ds = Matrix::from_fn(av.rows(), 1, |r, _| {
                        g.row(r).iter().zip(av.row(r)).map(|(&x, &y)| x * y).sum()
                    });
                    accumulate(grads, *s, ds);
                }
            }
            Op::NormalizeRows(x) => {
                let xv = val(*x);
                let floor = T::lit(NORM_FLOOR);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let s = xv.row(r).iter().copied().sum::<T>();
                    let out = dx.row_mut(r);
                    if s > floor {
                        let dot: T = g.row(r).iter().zip(value.row(r)).map(|(&a, &b)| a * b).sum();
                        for (o, &gi) in out.iter_mut().zip(g.row(r)) {
                            *o = (gi - dot) / s;
                        }
                    } else {
                        for (o, &gi) in out.iter_mut().zip(g.row(r)) {
                            *o = gi / floor;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g[(0, 0)]));
            }
            Op::KlToTarget { p, target } => {
                let pv = val(*p);
                let tiny = T::min_positive_value();
                let d: Vec<T> = pv
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&pi, &ti)| g[(0, 0)] * ((pi.max(tiny) / ti).ln() + T::one()))
                    .collect();
                accumulate(grads, *p, Matrix::row_vector(d));
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let mut d = probs.clone();
                d[*label] = d[*label] - T::one();
                let d = d.into_iter().map(|v| v * g[(0, 0)]).collect();
                accumulate(grads, *logits, Matrix::row_vector(d));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .axpy(T::one(), &g)
            .expect("gradient shapes are fixed by the forward pass"),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums<T: Scalar>(g: &Matrix<T>) -> Matrix<T> {
    let mut out = vec![T::zero(); g.cols()];
    for r in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(r)) {
            *o = *o + v;
        }
    }
    Matrix::row_vector(out)
}

fn bias_shape<T: Scalar>(b: &Matrix<T>, cols: usize) -> Result<()> {
    if b.shape() != (1, cols) {
        return Err(Error::shape(format!(
            "row operand is {}x{}, need 1x{cols}",
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn head_width(cols: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !cols.is_multiple_of(heads) {
        return Err(Error::shape(format!("width {cols} not divisible by {heads} heads")));
    }
    Ok(cols / heads)
}
