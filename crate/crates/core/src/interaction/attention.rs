//! Scaled dot-product attention and its split into a binary structure mask
//! and a strength matrix.

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix, Scalar};

const STOCHASTIC_TOL: f64 = 1e-6;

/// `softmax(QKᵀ/√d_k)·V`, returning the output and the attention matrix.
pub fn attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    d_k: usize,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if q.cols() != d_k || k.cols() != d_k {
        return Err(Error::shape(format!(
            "attention: queries have {} and keys {} columns, d_k = {d_k}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(format!(
            "attention: {} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    let logits = q.matmul_t(k)?.scale(T::one() / T::lit(d_k as f64).sqrt());
    let a = softmax_rows(&logits)?;
    let out = a.matmul(v)?;
    Ok((out, a))
}

/// Binary token-relation matrix with entries in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl StructureMask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// The mask as a 0/1 matrix.
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.rows, self.cols, |r, c| {
            if self.get(r, c) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// `(σ ⊙ φ) · V`.
    pub fn apply<T: Scalar>(&self, strength: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
        strength.expect_shape(self.shape(), "structure mask vs strength")?;
        let masked = Matrix::from_fn(self.rows, self.cols, |r, c| {
            if self.get(r, c) {
                strength[(r, c)]
            } else {
                T::zero()
            }
        });
        masked.matmul(v)
    }
}

/// How attention weights are binarized into a structure mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinarizeRule {
    /// Keep entries `≥ τ`, `τ ∈ (0, 1]`.
    Threshold(f64),
    /// Keep the `k` largest entries per row; ties go to the lower column.
    TopK(usize),
}

impl BinarizeRule {
    /// Top-k with `k = ⌈T/4⌉`.
    pub fn default_for(tokens: usize) -> Self {
        BinarizeRule::TopK(tokens.div_ceil(4).max(1))
    }
}

/// Splits a row-stochastic attention matrix into structure `σ` and strength
/// `φ`. The strength is the input, unchanged.
pub fn factorize_attention<T: Scalar>(
    a: &Matrix<T>,
    rule: BinarizeRule,
) -> Result<(StructureMask, Matrix<T>)> {
    for r in 0..a.rows() {
        let row = a.row(r);
        let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
        if row.iter().any(|v| !v.is_finite() || *v < T::zero()) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::invalid(format!(
                "factorize_attention: row {r} is not a distribution (sum {sum})"
            )));
        }
    }
    let (rows, cols) = a.shape();
    let mut bits = vec![false; rows * cols];
    match rule {
        BinarizeRule::Threshold(tau) => {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::invalid(format!("threshold {tau} outside (0, 1]")));
            }
            for (b, v) in bits.iter_mut().zip(a.data()) {
                *b = v.as_f64() >= tau;
            }
        }
        BinarizeRule::TopK(k) => {
            if k == 0 || k > cols {
                return Err(Error::invalid(format!("top-k {k} outside [1, {cols}]")));
            }
            let mut order: Vec<usize> = (0..cols).collect();
            for r in 0..rows {
                let row = a.row(r);
                // stable sort keeps lower columns first among equal weights
                order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap_or(std::cmp::Ordering::Equal));
                for &c in &order[..k] {
                    bits[r * cols + c] = true;
                }
                order.sort_unstable();
            }
        }
    }
    Ok((StructureMask { rows, cols, bits }, a.clone()))
}
