//! Checked numeric primitives shared by the model, the losses and the tests.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

/// Floor used by every L1 normalization.
pub const NORM_FLOOR: f64 = 1e-12;

/// Tolerance on the unit sum of a probability row accepted by [`kl_rows`].
pub const DISTRIBUTION_TOL: f64 = 1e-4;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    if let Some(r) = m.first_non_finite_row() {
        return Err(Error::NonFinite(format!("softmax_rows: row {r} is not finite")));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// Unchecked stable softmax of one row.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// `(1 − λ)·q + λ/len`.
pub fn smooth<T: Scalar>(q: &[T], lambda: T) -> Vec<T> {
    let uniform = T::one() / T::lit(q.len() as f64);
    q.iter()
        .map(|&v| (T::one() - lambda) * v + lambda * uniform)
        .collect()
}

/// `D_KL(p ‖ q′)` in nats, where `q′` is `q` smoothed toward uniform by `lambda`.
///
/// Terms with `p_i = 0` contribute nothing. The result is `+∞` when `q′`
/// vanishes on the support of `p`, which only happens for `lambda = 0`.
pub fn kl_rows<T: Scalar>(p: &[T], q: &[T], lambda: T) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "kl_rows: lengths {} and {} differ",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::invalid("kl_rows: empty distributions"));
    }
    if !(T::zero()..T::one()).contains(&lambda) {
        return Err(Error::invalid(format!("kl_rows: smoothing {lambda} outside [0,1)")));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let q = smooth(q, lambda);
    Ok(kl_unchecked(p, &q))
}

pub(crate) fn kl_unchecked<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

fn check_distribution<T: Scalar>(v: &[T], name: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite() || *x < T::zero()) {
        return Err(Error::invalid(format!(
            "kl_rows: {name}[{i}] = {} is negative or non-finite",
            v[i]
        )));
    }
    let total: T = v.iter().copied().sum();
    if (total.as_f64() - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::invalid(format!("kl_rows: {name} sums to {total}, not 1")));
    }
    Ok(())
}

/// `v / max(‖v‖₁, 1e−12)`.
pub fn l1_normalize<T: Scalar>(v: &[T]) -> Vec<T> {
    let total = v.iter().map(|x| x.abs()).sum::<T>().max(T::lit(NORM_FLOOR));
    v.iter().map(|&x| x / total).collect()
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![2f64.ln(), 0.0],
            vec![1000.0, 1000.0],
        ])
        .unwrap();
        let s = softmax_rows(&m).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s[(1, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite_and_names_row() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![f64::NAN, 0.0]]).unwrap();
        let err = softmax_rows(&m).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_rows(&[0.3, 0.7], &[0.3, 0.7], 0.0).unwrap(), 0.0);
        let v = kl_rows(&[1.0, 0.0], &[0.5, 0.5], 0.0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        // Q′ = [0.9995, 0.0005] by hand: 0.5 ln(0.5/0.9995) + 0.5 ln(0.5/0.0005)
        let expect = 0.5 * (0.5f64 / 0.9995).ln() + 0.5 * (0.5f64 / 0.0005).ln();
        let got = kl_rows(&[0.5, 0.5], &[1.0, 0.0], 1e-3).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        assert!((got - 3.107_554_111_731_937).abs() < 1e-12);
    }

    #[test]
    fn kl_errors() {
        assert!(kl_rows(&[1.0], &[0.5, 0.5], 0.0).is_err());
        assert!(kl_rows(&[1.5, -0.5], &[0.5, 0.5], 0.0).is_err());
        assert!(kl_rows(&[0.5, 0.5], &[0.5, 0.6], 0.0).is_err());
        assert!(kl_rows(&[0.5, 0.5], &[0.5, 0.5], 1.0).is_err());
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    fn dist(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_map(|v| {
            let v: Vec<f64> = v.iter().map(|x| x + 1e-3).collect();
            l1_normalize(&v)
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..6, cols in 1usize..9, seed in prop::collection::vec(-50.0f64..50.0, 54)) {
            let m = Matrix::from_fn(rows, cols, |r, c| seed[(r * cols + c) % seed.len()]);
            let s = softmax_rows(&m).unwrap();
            for r in 0..rows {
                prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariance(vals in prop::collection::vec(-20.0f64..20.0, 12), shift in prop::collection::vec(-100.0f64..100.0, 3)) {
            let m = Matrix::from_vec(3, 4, vals).unwrap();
            let shifted = Matrix::from_fn(3, 4, |r, c| m[(r, c)] + shift[r]);
            let a = softmax_rows(&m).unwrap();
            let b = softmax_rows(&shifted).unwrap();
            prop_assert!(a.max_abs_diff(&b) <= 1e-6);
        }

        #[test]
        fn kl_is_non_negative_and_zero_on_target(p in dist(6), q in dist(6), lambda in 0.0f64..0.5) {
            let v = kl_rows(&p, &q, lambda).unwrap();
            prop_assert!(v >= -1e-9);
            let q_smoothed = smooth(&q, lambda);
            let z = kl_rows(&q_smoothed, &q, lambda).unwrap();
            prop_assert!(z.abs() <= 1e-9);
        }
    }
}
