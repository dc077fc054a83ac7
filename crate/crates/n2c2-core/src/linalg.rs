//! Minimal dense matrices and vector helpers for the two-layer modules.
//!
//! Matrices serialize as plain nested arrays so model files stay readable
//! and diffable. Nothing here is tuned for scale; every network in the
//! pipeline is at most 32 wide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<S>>", into = "Vec<Vec<S>>", bound = "")]
pub struct Mat<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    /// Identity; used by the pass-through shaping layer.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = S::one();
        }
        m
    }

    /// Xavier-uniform init: entries drawn from `±sqrt(6 / (rows + cols))`.
    pub fn xavier(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform_in(-limit, limit))
            .collect();
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        Self::try_from(rows).map_err(|msg| Error::ShapeMismatch(msg.to_string()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Flat row-major view; layout is part of the optimizer contract.
    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// `self * x` for `x` of length `cols`.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * x` for `x` of length `rows`.
    pub fn tmatvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![S::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            let row = self.row(r);
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + xr * w;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<S: Scalar> TryFrom<Vec<Vec<S>>> for Mat<S> {
    type Error = String;

    fn try_from(rows: Vec<Vec<S>>) -> std::result::Result<Self, String> {
        if rows.is_empty() {
            return Err("matrix must have at least one row".into());
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err("matrix must have at least one column".into());
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(format!(
                    "ragged matrix: row 0 has {cols} entries, row {i} has {}",
                    row.len()
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }
}

impl<S: Scalar> From<Mat<S>> for Vec<Vec<S>> {
    fn from(m: Mat<S>) -> Self {
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Plain (non-squared) Euclidean distance.
pub fn euclidean<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| {
            let d = x - y;
            acc + d * d
        })
        .sqrt()
}

/// Numerically stable softplus: `ln(1 + e^x)`.
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the softplus derivative.
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn tanh_vec<S: Scalar>(xs: &[S]) -> Vec<S> {
    xs.iter().map(|x| x.tanh()).collect()
}

/// Indices paired with distances to `query`, ascending; ties keep insertion
/// order (stable sort). Shared by every retrieval path so ordering semantics
/// cannot drift apart.
pub fn rank_by_distance<S: Scalar, K: AsRef<[S]>>(query: &[S], keys: &[K]) -> Vec<(usize, S)> {
    let mut ranked: Vec<(usize, S)> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (i, euclidean(query, k.as_ref())))
        .collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"));
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_hand_computation() {
        let m = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
        assert_eq!(m.tmatvec(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
    }

    #[test]
    fn identity_preserves_input() {
        let m = Mat::<f64>::identity(3);
        assert_eq!(m.matvec(&[2.0, -1.0, 0.5]), vec![2.0, -1.0, 0.5]);
    }

    #[test]
    fn serde_round_trips_as_nested_arrays() {
        let m = Mat::from_rows(vec![vec![0.1f64, 0.2], vec![0.3, 0.4]]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "[[0.1,0.2],[0.3,0.4]]");
        let back: Mat<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ragged_rows_rejected() {
        let r: std::result::Result<Mat<f64>, _> = serde_json::from_str("[[1.0,2.0],[3.0]]");
        assert!(r.is_err());
    }

    #[test]
    fn xavier_respects_limit() {
        let mut rng = SeededRng::new(3);
        let m = Mat::<f64>::xavier(10, 22, &mut rng);
        let limit = (6.0 / 32.0f64).sqrt();
        assert!(m.as_slice().iter().all(|v| v.abs() < limit));
        // Not degenerate: draws actually vary.
        assert!(m.as_slice().iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn euclidean_is_plain_l2() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(euclidean(&[1.0], &[1.0]), 0.0);
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let v: f64 = softplus(0.0);
        assert!((v - (2.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0f64) >= 0.0);
        assert!(softplus(-800.0f64) < 1e-300);
    }

    #[test]
    fn sigmoid_matches_softplus_derivative_numerically() {
        let x = 0.37f64;
        let h = 1e-6;
        let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
        assert!((sigmoid(x) - fd).abs() < 1e-9);
    }
}
