//! Exact nearest-neighbor search and the retrieval label distribution.
//!
//! Search is brute-force L2 over the datastore; at few-shot scale an index
//! would cost more than it saves. Distances are plain (non-squared)
//! Euclidean throughout.

use crate::datastore::Datastore;
use crate::dist::{log_sum_exp_weights, normalize, Distribution};
use crate::error::{Error, Result};
use crate::linalg::rank_by_distance;
use crate::scalar::{cast, Scalar};

/// Retrieval-side knobs: softmax temperature, neighbor budget, and the
/// base-model interpolation weight used by fixed-size combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig<S: Scalar> {
    tau: S,
    k_max: usize,
    lambda: S,
}

impl<S: Scalar> RetrievalConfig<S> {
    pub fn new(tau: S, k_max: usize, lambda: S) -> Result<Self> {
        if !tau.is_finite() || tau <= S::zero() {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        if k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if !lambda.is_finite() || lambda < S::zero() || lambda > S::one() {
            return Err(Error::InvalidLambda {
                value: lambda.to_f64_lossy(),
            });
        }
        Ok(Self { tau, k_max, lambda })
    }

    pub fn tau(&self) -> S {
        self.tau
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }
}

impl<S: Scalar> Default for RetrievalConfig<S> {
    /// tau 5, K_max 16, lambda 0.5.
    fn default() -> Self {
        Self {
            tau: cast(5.0),
            k_max: 16,
            lambda: cast(0.5),
        }
    }
}

/// One retrieved entry with its distance to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<S: Scalar> {
    pub entry_index: usize,
    pub label: usize,
    pub distance: S,
    pub self_prob: S,
}

/// Neighbors ascending by distance; ties keep datastore insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet<S: Scalar> {
    neighbors: Vec<Neighbor<S>>,
}

impl<S: Scalar> NeighborSet<S> {
    pub fn neighbors(&self) -> &[Neighbor<S>] {
        &self.neighbors
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Largest distance in the set; the padding sentinel for fixed-width
    /// feature vectors.
    pub fn max_distance(&self) -> S {
        self.neighbors
            .last()
            .map(|n| n.distance)
            .unwrap_or_else(S::zero)
    }
}

/// Top-k exact search. `k` larger than the store is truncated to all
/// entries.
pub fn search<S: Scalar>(store: &Datastore<S>, query: &[S], k: usize) -> Result<NeighborSet<S>> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if k == 0 {
        return Err(Error::EmptyNeighborSet);
    }
    if query.len() != store.dim() {
        return Err(Error::DimMismatch {
            context: "search query".into(),
            expected: store.dim(),
            got: query.len(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "search query".into(),
        });
    }
    let keys: Vec<&[S]> = store.entries().iter().map(|e| e.key.as_slice()).collect();
    let mut ranked = rank_by_distance(query, &keys);
    ranked.truncate(k.min(ranked.len()));
    let neighbors = ranked
        .into_iter()
        .map(|(idx, distance)| {
            let e = &store.entries()[idx];
            Neighbor {
                entry_index: idx,
                label: e.label,
                distance,
                self_prob: e.self_prob,
            }
        })
        .collect();
    Ok(NeighborSet { neighbors })
}

/// Label distribution of the top-`m` neighbors: per-class sums of
/// `exp(-d_i / tau)`, normalized. Exponentials are max-shifted for
/// stability.
pub fn knn_distribution<S: Scalar>(
    ns: &NeighborSet<S>,
    m: usize,
    tau: S,
    num_classes: usize,
) -> Result<Distribution<S>> {
    if ns.is_empty() || m == 0 {
        return Err(Error::EmptyNeighborSet);
    }
    if m > ns.len() {
        return Err(Error::LengthMismatch {
            context: "knn_distribution m".into(),
            left: m,
            right: ns.len(),
        });
    }
    if !(tau > S::zero()) {
        return Err(Error::InvalidConfig(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let exponents: Vec<S> = ns.neighbors()[..m]
        .iter()
        .map(|n| -n.distance / tau)
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

/// Convex mix of retrieval and base distributions:
/// `(1 - lambda) * p_knn + lambda * p_base`.
pub fn interpolate<S: Scalar>(
    p_knn: &Distribution<S>,
    p_base: &Distribution<S>,
    lambda: S,
) -> Result<Distribution<S>> {
    if !lambda.is_finite() || lambda < S::zero() || lambda > S::one() {
        return Err(Error::InvalidLambda {
            value: lambda.to_f64_lossy(),
        });
    }
    if p_knn.len() != p_base.len() {
        return Err(Error::LengthMismatch {
            context: "interpolate".into(),
            left: p_knn.len(),
            right: p_base.len(),
        });
    }
    let one_minus = S::one() - lambda;
    let probs = p_knn
        .probs()
        .iter()
        .zip(p_base.probs())
        .map(|(&a, &b)| one_minus * a + lambda * b)
        .collect();
    Distribution::new(probs)
}
