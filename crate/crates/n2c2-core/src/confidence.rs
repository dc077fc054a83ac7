//! Confidence-aware retrieval distribution: a learned temperature per
//! candidate neighborhood size plus a learned per-neighbor reliability bias
//! reweight the retrieval softmax. Both heads start at zero, so an
//! untrained module reduces to plain kNN at a fixed temperature.

use serde::{Deserialize, Serialize};

use crate::dist::{log_sum_exp_weights, normalize, Distribution};
use crate::error::{Error, Result};
use crate::linalg::{dot, softplus, tanh_vec, Mat};
use crate::retrieval::NeighborSet;
use crate::rng::SeededRng;
use crate::scalar::{cast, Scalar};

/// Additive floor keeping the learned temperature strictly positive.
pub const TEMPERATURE_FLOOR: f64 = 0.1;

/// Two-layer temperature head (`w1`, `w2`) over padded neighbor features
/// and two-layer bias head (`w3`, `w4`) over per-neighbor probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConfidenceModule<S: Scalar> {
    w1: Mat<S>,
    w2: Mat<S>,
    w3: Mat<S>,
    w4: Mat<S>,
}

impl<S: Scalar> ConfidenceModule<S> {
    /// Zero output heads, Xavier trunks: the initial temperature is
    /// `softplus(0) + 0.1` everywhere and every bias is zero.
    pub fn new(k_max: usize, hidden: usize, rng: &mut SeededRng) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if hidden == 0 {
            return Err(Error::InvalidConfig(
                "hidden width must be at least 1".into(),
            ));
        }
        Ok(Self {
            w1: Mat::zeros(1, hidden),
            w2: Mat::xavier(hidden, 2 * k_max, rng),
            w3: Mat::zeros(1, hidden),
            w4: Mat::xavier(hidden, 2, rng),
        })
    }

    pub fn from_parts(w1: Mat<S>, w2: Mat<S>, w3: Mat<S>, w4: Mat<S>) -> Result<Self> {
        if w1.rows() != 1 || w3.rows() != 1 {
            return Err(Error::ShapeMismatch(
                "confidence output heads must be single-row".into(),
            ));
        }
        if w1.cols() != w2.rows() || w3.cols() != w4.rows() || w2.rows() != w4.rows() {
            return Err(Error::ShapeMismatch(format!(
                "confidence hidden widths disagree: {}x{} vs {}x{} vs {}x{} vs {}x{}",
                w1.rows(),
                w1.cols(),
                w2.rows(),
                w2.cols(),
                w3.rows(),
                w3.cols(),
                w4.rows(),
                w4.cols()
            )));
        }
        if w4.cols() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "bias trunk takes 2 inputs, got {}",
                w4.cols()
            )));
        }
        if !w2.cols().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "temperature trunk width must be even, got {}",
                w2.cols()
            )));
        }
        Ok(Self { w1, w2, w3, w4 })
    }

    pub fn w1(&self) -> &Mat<S> {
        &self.w1
    }

    pub fn w2(&self) -> &Mat<S> {
        &self.w2
    }

    pub fn w3(&self) -> &Mat<S> {
        &self.w3
    }

    pub fn w4(&self) -> &Mat<S> {
        &self.w4
    }

    pub fn hidden(&self) -> usize {
        self.w2.rows()
    }

    /// Width of the padded feature vector, `2 * k_max`.
    pub fn feature_width(&self) -> usize {
        self.w2.cols()
    }

    pub fn params_mut(&mut self) -> [&mut [S]; 4] {
        [
            self.w1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.w3.as_mut_slice(),
            self.w4.as_mut_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite() && self.w3.is_finite() && self.w4.is_finite()
    }

    /// `softplus(w1 * tanh(w2 * f)) + 0.1` for a padded feature vector.
    pub fn temperature(&self, f: &[S]) -> Result<S> {
        self.temperature_traced(f).map(|(t, _)| t)
    }

    pub fn temperature_traced(&self, f: &[S]) -> Result<(S, TempTrace<S>)> {
        if f.len() != self.w2.cols() {
            return Err(Error::DimMismatch {
                context: "temperature features".into(),
                expected: self.w2.cols(),
                got: f.len(),
            });
        }
        let pre = self.w2.matvec(f);
        let act = tanh_vec(&pre);
        let raw = dot(self.w1.row(0), &act);
        let t = softplus(raw) + cast(TEMPERATURE_FLOOR);
        Ok((
            t,
            TempTrace {
                input: f.to_vec(),
                act,
                raw,
            },
        ))
    }

    /// `w3 * tanh(w4 * [pq, sp])`: how much this neighbor's vote counts.
    pub fn bias(&self, query_label_prob: S, self_prob: S) -> Result<S> {
        self.bias_traced(query_label_prob, self_prob)
            .map(|(c, _)| c)
    }

    pub fn bias_traced(&self, query_label_prob: S, self_prob: S) -> Result<(S, BiasTrace<S>)> {
        if !query_label_prob.is_finite() || !self_prob.is_finite() {
            return Err(Error::NonFinite {
                context: "bias inputs".into(),
            });
        }
        let input = [query_label_prob, self_prob];
        let pre = self.w4.matvec(&input);
        let act = tanh_vec(&pre);
        let c = dot(self.w3.row(0), &act);
        Ok((c, BiasTrace { input, act }))
    }
}

/// Intermediates of one temperature forward pass, kept for the backward
/// pass. `pre` is recoverable from `act`, so only the activation is stored.
#[derive(Debug, Clone)]
pub struct TempTrace<S: Scalar> {
    pub input: Vec<S>,
    pub act: Vec<S>,
    pub raw: S,
}

/// Intermediates of one bias forward pass.
#[derive(Debug, Clone)]
pub struct BiasTrace<S: Scalar> {
    pub input: [S; 2],
    pub act: Vec<S>,
}

/// Per-neighbor raw features in ranked order over the whole retrieved set:
/// distance, running count of distinct labels seen so far, the query's base
/// probability of the neighbor's label, and the neighbor's stored
/// self-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborFeatures<S: Scalar> {
    pub distances: Vec<S>,
    pub distinct_label_counts: Vec<S>,
    pub query_label_probs: Vec<S>,
    pub self_probs: Vec<S>,
}

impl<S: Scalar> NeighborFeatures<S> {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// Extracts per-neighbor features; prefixes of these serve every candidate
/// size, so this runs once per query.
pub fn neighbor_features<S: Scalar>(
    ns: &NeighborSet<S>,
    base_dist: &Distribution<S>,
) -> Result<NeighborFeatures<S>> {
    if ns.is_empty() {
        return Err(Error::EmptyNeighborSet);
    }
    let mut distances = Vec::with_capacity(ns.len());
    let mut distinct_label_counts = Vec::with_capacity(ns.len());
    let mut query_label_probs = Vec::with_capacity(ns.len());
    let mut self_probs = Vec::with_capacity(ns.len());
    let mut seen = vec![false; base_dist.len()];
    let mut distinct = 0usize;
    for n in ns.neighbors() {
        if n.label >= base_dist.len() {
            return Err(Error::InvalidConfig(format!(
                "neighbor label {} out of range for {} classes",
                n.label,
                base_dist.len()
            )));
        }
        if !seen[n.label] {
            seen[n.label] = true;
            distinct += 1;
        }
        distances.push(n.distance);
        distinct_label_counts.push(cast(distinct as f64));
        query_label_probs.push(base_dist.get(n.label));
        self_probs.push(n.self_prob);
    }
    Ok(NeighborFeatures {
        distances,
        distinct_label_counts,
        query_label_probs,
        self_probs,
    })
}

/// Fixed-width input for the temperature and gating networks: the first `m`
/// distances padded to `k_max` with the set's largest distance, then the
/// first `m` distinct-label counts padded with their last value. An optional
/// normalizer divides the distance block only.
pub fn padded_input<S: Scalar>(
    feats: &NeighborFeatures<S>,
    m: usize,
    k_max: usize,
    normalizer: Option<S>,
) -> Result<Vec<S>> {
    if m == 0 || feats.is_empty() {
        return Err(Error::EmptyNeighborSet);
    }
    if m > feats.len() {
        return Err(Error::LengthMismatch {
            context: "padded_input m".into(),
            left: m,
            right: feats.len(),
        });
    }
    if m > k_max {
        return Err(Error::LengthMismatch {
            context: "padded_input k_max".into(),
            left: m,
            right: k_max,
        });
    }
    if let Some(z) = normalizer {
        if !z.is_finite() || z <= S::zero() {
            return Err(Error::InvalidConfig(format!(
                "distance normalizer must be positive and finite, got {z}"
            )));
        }
    }
    let sentinel = *feats.distances.last().expect("nonempty");
    let scale = normalizer.unwrap_or_else(S::one);
    let mut out = Vec::with_capacity(2 * k_max);
    for i in 0..k_max {
        let d = if i < m { feats.distances[i] } else { sentinel };
        out.push(d / scale);
    }
    let last_count = feats.distinct_label_counts[m - 1];
    for i in 0..k_max {
        out.push(if i < m {
            feats.distinct_label_counts[i]
        } else {
            last_count
        });
    }
    Ok(out)
}

/// Confidence-adjusted retrieval distribution over the top-`m` neighbors:
/// per-class sums of `exp(-d_i / (tau * t) + c_i)`, normalized. Exponents
/// are max-shifted, so the biases matter only up to a shared offset.
pub fn cd_distribution<S: Scalar>(
    ns: &NeighborSet<S>,
    m: usize,
    tau: S,
    t: S,
    biases: &[S],
    num_classes: usize,
) -> Result<Distribution<S>> {
    if ns.is_empty() || m == 0 {
        return Err(Error::EmptyNeighborSet);
    }
    if m > ns.len() {
        return Err(Error::LengthMismatch {
            context: "cd_distribution m".into(),
            left: m,
            right: ns.len(),
        });
    }
    if biases.len() < m {
        return Err(Error::LengthMismatch {
            context: "cd_distribution biases".into(),
            left: biases.len(),
            right: m,
        });
    }
    if !(tau > S::zero()) || !(t > S::zero()) {
        return Err(Error::InvalidConfig(format!(
            "temperatures must be positive, got tau {tau} t {t}"
        )));
    }
    let exponents: Vec<S> = ns.neighbors()[..m]
        .iter()
        .zip(biases)
        .map(|(n, &c)| -n.distance / (tau * t) + c)
        .collect();
    let weights = log_sum_exp_weights(&exponents)?;
    let mut class_sums = vec![S::zero(); num_classes];
    for (n, &w) in ns.neighbors()[..m].iter().zip(&weights) {
        if n.label >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "neighbor label {} out of range for {num_classes} classes",
                n.label
            )));
        }
        class_sums[n.label] = class_sums[n.label] + w;
    }
    normalize(&class_sums)
}
