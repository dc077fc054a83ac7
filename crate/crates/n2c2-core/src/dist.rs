//! Probability distributions over the label set and stable weight math.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// How far a distribution's sum may drift from 1 before it is rejected.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Probability vector over classes: entries finite and non-negative,
/// summing to 1 within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>", bound = "")]
pub struct Distribution<S: Scalar> {
    probs: Vec<S>,
}

impl<S: Scalar> Distribution<S> {
    pub fn new(probs: Vec<S>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyList {
                context: "distribution".into(),
            });
        }
        let mut sum = S::zero();
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("distribution entry {i}"),
                });
            }
            if p < S::zero() {
                return Err(Error::NegativeWeight {
                    index: i,
                    value: p.to_f64_lossy(),
                });
            }
            sum = sum + p;
        }
        if (sum.to_f64_lossy() - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "distribution sums to {sum}, expected 1 within {SUM_TOLERANCE}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyList {
                context: "uniform distribution".into(),
            });
        }
        let p = S::one() / cast::<S>(n as f64);
        Ok(Self { probs: vec![p; n] })
    }

    pub fn one_hot(index: usize, n: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::InvalidConfig(format!(
                "one-hot index {index} out of range for {n} classes"
            )));
        }
        let mut probs = vec![S::zero(); n];
        probs[index] = S::one();
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<S> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> S {
        self.probs[i]
    }

    /// Index of the largest entry; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Largest entry, used as the prediction confidence.
    pub fn confidence(&self) -> S {
        self.probs[self.argmax()]
    }
}

impl<S: Scalar> TryFrom<Vec<S>> for Distribution<S> {
    type Error = String;

    fn try_from(probs: Vec<S>) -> std::result::Result<Self, String> {
        Distribution::new(probs).map_err(|e| e.to_string())
    }
}

impl<S: Scalar> From<Distribution<S>> for Vec<S> {
    fn from(d: Distribution<S>) -> Self {
        d.probs
    }
}

/// Index of the largest value; ties break toward the lowest index.
pub fn argmax<S: Scalar>(xs: &[S]) -> usize {
    debug_assert!(!xs.is_empty());
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Scales non-negative weights into a probability vector.
pub fn normalize<S: Scalar>(weights: &[S]) -> Result<Distribution<S>> {
    if weights.is_empty() {
        return Err(Error::EmptyList {
            context: "normalize".into(),
        });
    }
    let mut sum = S::zero();
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFinite {
                context: format!("normalize weight {i}"),
            });
        }
        if w < S::zero() {
            return Err(Error::NegativeWeight {
                index: i,
                value: w.to_f64_lossy(),
            });
        }
        sum = sum + w;
    }
    if sum == S::zero() {
        return Err(Error::AllZero);
    }
    Ok(Distribution {
        probs: weights.iter().map(|&w| w / sum).collect(),
    })
}

/// Turns exponents into weights `exp(e_i - max e)` without overflow.
/// The largest weight is exactly 1.
pub fn log_sum_exp_weights<S: Scalar>(exponents: &[S]) -> Result<Vec<S>> {
    if exponents.is_empty() {
        return Err(Error::EmptyList {
            context: "log_sum_exp_weights".into(),
        });
    }
    let mut max = exponents[0];
    for (i, &e) in exponents.iter().enumerate() {
        if !e.is_finite() {
            return Err(Error::NonFinite {
                context: format!("exponent {i}"),
            });
        }
        if e > max {
            max = e;
        }
    }
    Ok(exponents.iter().map(|&e| (e - max).exp()).collect())
}

/// Uniform average of per-view distributions: the demonstration-ensemble
/// prediction `1/m * sum_i p_i`.
pub fn ensemble_average<S: Scalar>(dists: &[Distribution<S>]) -> Result<Distribution<S>> {
    if dists.is_empty() {
        return Err(Error::EmptyList {
            context: "ensemble_average".into(),
        });
    }
    let n = dists[0].len();
    for d in dists {
        if d.len() != n {
            return Err(Error::LengthMismatch {
                context: "ensemble_average".into(),
                left: n,
                right: d.len(),
            });
        }
    }
    let inv = S::one() / cast::<S>(dists.len() as f64);
    let mut probs = vec![S::zero(); n];
    for d in dists {
        for (acc, &p) in probs.iter_mut().zip(d.probs()) {
            *acc = *acc + p * inv;
        }
    }
    Distribution::new(probs)
}
