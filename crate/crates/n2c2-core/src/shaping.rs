//! Learned linear layer that reshapes embeddings for retrieval.
//!
//! Keys and queries share the layer: `h' = W^T h + b` with `W` of shape
//! `H x Z`. The training loss is cross-entropy of the retrieval
//! distribution, and its gradient flows through both the query projection
//! and the key projections. Note that distances are invariant to `b`
//! (it cancels in `u - k`), so `b` keeps its init under this loss; it is
//! retained for interface fidelity.

use serde::{Deserialize, Serialize};

use crate::dist::{log_sum_exp_weights, Distribution};
use crate::error::{Error, Result};
use crate::linalg::{rank_by_distance, Mat};
use crate::rng::SeededRng;
use crate::scalar::{cast, Scalar};

/// Floor applied to the gold probability inside cross-entropy losses.
pub const GOLD_PROB_FLOOR: f64 = 1e-12;

/// Linear reshaping layer `h' = W^T h + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ShapingLayer<S: Scalar> {
    w: Mat<S>,
    b: Vec<S>,
}

impl<S: Scalar> ShapingLayer<S> {
    /// Xavier-uniform `W` (`±sqrt(6/(H+Z))`), zero `b`.
    pub fn new_xavier(h_dim: usize, z_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        if h_dim == 0 || z_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "shaping dims must be positive, got {h_dim}x{z_dim}"
            )));
        }
        Ok(Self {
            w: Mat::xavier(h_dim, z_dim, rng),
            b: vec![S::zero(); z_dim],
        })
    }

    /// Pass-through layer (`W = I`, `b = 0`), used when shaping is ablated.
    pub fn identity(dim: usize) -> Self {
        Self {
            w: Mat::identity(dim),
            b: vec![S::zero(); dim],
        }
    }

    pub fn from_parts(w: Mat<S>, b: Vec<S>) -> Result<Self> {
        if b.len() != w.cols() {
            return Err(Error::DimMismatch {
                context: "shaping bias".into(),
                expected: w.cols(),
                got: b.len(),
            });
        }
        Ok(Self { w, b })
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn w(&self) -> &Mat<S> {
        &self.w
    }

    pub fn b(&self) -> &[S] {
        &self.b
    }

    /// Mutable flat views of (W, b) for the optimizer.
    pub fn params_mut(&mut self) -> (&mut [S], &mut [S]) {
        (self.w.as_mut_slice(), &mut self.b)
    }

    pub fn shape(&self, h: &[S]) -> Result<Vec<S>> {
        if h.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                context: "shaping input".into(),
                expected: self.input_dim(),
                got: h.len(),
            });
        }
        let mut out = self.w.tmatvec(h);
        for (o, &bz) in out.iter_mut().zip(&self.b) {
            *o = *o + bz;
        }
        Ok(out)
    }
}

/// Raw embedding with its gold label; store-side input to the shaping stage.
#[derive(Debug, Clone)]
pub struct LabeledEmbedding<S: Scalar> {
    pub embedding: Vec<S>,
    pub label: usize,
}

/// One shaping-stage training example: the record's raw view embeddings
/// plus its gold label. Views are ensembled before the loss.
#[derive(Debug, Clone)]
pub struct ShapingExample<S: Scalar> {
    pub views: Vec<Vec<S>>,
    pub label: usize,
}

/// Gradients of the shaping loss, same shapes as the layer parameters.
#[derive(Debug, Clone)]
pub struct ShapingGrads<S: Scalar> {
    pub w: Mat<S>,
    pub b: Vec<S>,
}

struct ViewForward<S: Scalar> {
    /// Store indices of the retained neighbors, ascending by distance.
    neighbors: Vec<(usize, S)>,
    /// Shifted exponential weights per neighbor (max is 1).
    weights: Vec<S>,
    total: S,
    probs: Vec<S>,
    shaped_query: Vec<S>,
}

fn view_forward<S: Scalar>(
    shaped_query: Vec<S>,
    shaped_keys: &[Vec<S>],
    labels: &[usize],
    tau: S,
    k: usize,
    num_classes: usize,
) -> Result<ViewForward<S>> {
    let mut neighbors = rank_by_distance(&shaped_query, shaped_keys);
    neighbors.truncate(k.min(neighbors.len()));
    let exponents: Vec<S> = neighbors.iter().map(|&(_, d)| -d / tau).collect();
    let weights = log_sum_exp_weights(&exponents)?;
    let mut class_sums = vec![S::zero(); num_classes];
    let mut total = S::zero();
    for (&(idx, _), &w) in neighbors.iter().zip(&weights) {
        class_sums[labels[idx]] = class_sums[labels[idx]] + w;
        total = total + w;
    }
    let probs = class_sums.iter().map(|&s| s / total).collect();
    Ok(ViewForward {
        neighbors,
        weights,
        total,
        probs,
        shaped_query,
    })
}

fn check_store<S: Scalar>(layer: &ShapingLayer<S>, store: &[LabeledEmbedding<S>]) -> Result<()> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    for item in store {
        if item.embedding.len() != layer.input_dim() {
            return Err(Error::DimMismatch {
                context: "store embedding".into(),
                expected: layer.input_dim(),
                got: item.embedding.len(),
            });
        }
    }
    Ok(())
}

/// Retrieval distribution for one record under the given layer: per-view
/// kNN distributions over the shaped store, ensembled uniformly.
pub fn retrieval_distribution<S: Scalar>(
    layer: &ShapingLayer<S>,
    views: &[Vec<S>],
    store: &[LabeledEmbedding<S>],
    tau: S,
    k: usize,
    num_classes: usize,
) -> Result<Distribution<S>> {
    if views.is_empty() {
        return Err(Error::EmptyList {
            context: "record views".into(),
        });
    }
    check_store(layer, store)?;
    let shaped_keys: Vec<Vec<S>> = store
        .iter()
        .map(|e| layer.shape(&e.embedding))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = store.iter().map(|e| e.label).collect();
    let inv = S::one() / cast::<S>(views.len() as f64);
    let mut probs = vec![S::zero(); num_classes];
    for view in views {
        let fwd = view_forward(
            layer.shape(view)?,
            &shaped_keys,
            &labels,
            tau,
            k,
            num_classes,
        )?;
        for (acc, &p) in probs.iter_mut().zip(&fwd.probs) {
            *acc = *acc + p * inv;
        }
    }
    Distribution::new(probs)
}

/// Mean cross-entropy of the retrieval distribution over a batch, plus its
/// analytic gradient w.r.t. every entry of `W` and `b`.
///
/// The store is shaped with the current layer on every call, and the
/// gradient flows through both query and key projections. The neighbor set
/// is treated as locally constant (it changes on a measure-zero boundary).
pub fn shaping_loss<S: Scalar>(
    layer: &ShapingLayer<S>,
    batch: &[&ShapingExample<S>],
    store: &[LabeledEmbedding<S>],
    tau: S,
    k: usize,
    num_classes: usize,
) -> Result<(S, ShapingGrads<S>)> {
    if batch.is_empty() {
        return Err(Error::EmptyList {
            context: "shaping batch".into(),
        });
    }
    if !(tau > S::zero()) {
        return Err(Error::InvalidConfig(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if k == 0 {
        return Err(Error::EmptyNeighborSet);
    }
    check_store(layer, store)?;

    let shaped_keys: Vec<Vec<S>> = store
        .iter()
        .map(|e| layer.shape(&e.embedding))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = store.iter().map(|e| e.label).collect();

    let h_dim = layer.input_dim();
    let z_dim = layer.output_dim();
    let mut grad_w = Mat::zeros(h_dim, z_dim);
    let mut grad_b = vec![S::zero(); z_dim];
    let mut loss = S::zero();
    let floor = cast::<S>(GOLD_PROB_FLOOR);
    let tiny = cast::<S>(1e-12);

    for example in batch {
        if example.views.is_empty() {
            return Err(Error::EmptyList {
                context: "example views".into(),
            });
        }
        if example.label >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for {num_classes} classes",
                example.label
            )));
        }
        let v_count = cast::<S>(example.views.len() as f64);
        let forwards: Vec<ViewForward<S>> = example
            .views
            .iter()
            .map(|v| view_forward(layer.shape(v)?, &shaped_keys, &labels, tau, k, num_classes))
            .collect::<Result<_>>()?;
        let gold = example.label;
        let p_gold: S = forwards.iter().map(|f| f.probs[gold]).sum::<S>() / v_count;
        loss = loss - p_gold.max(floor).ln();
        if p_gold <= floor {
            // Clamped region: treat the loss as locally constant.
            continue;
        }
        for (view_raw, fwd) in example.views.iter().zip(&forwards) {
            // d loss / d d_i = (1[y_i = gold] - p_view[gold]) * pi_i / (V * p_gold * tau)
            let scale = S::one() / (v_count * p_gold * tau);
            let mut grad_u = vec![S::zero(); z_dim];
            let mut key_grads: Vec<(usize, Vec<S>)> = Vec::with_capacity(fwd.neighbors.len());
            for (&(idx, dist), &w) in fwd.neighbors.iter().zip(&fwd.weights) {
                if dist <= tiny {
                    continue;
                }
                let pi = w / fwd.total;
                let indicator = if labels[idx] == gold {
                    S::one()
                } else {
                    S::zero()
                };
                let g = (indicator - fwd.probs[gold]) * pi * scale;
                let key = &shaped_keys[idx];
                let mut kg = vec![S::zero(); z_dim];
                for z in 0..z_dim {
                    let e = (fwd.shaped_query[z] - key[z]) / dist;
                    grad_u[z] = grad_u[z] + g * e;
                    kg[z] = -g * e;
                }
                key_grads.push((idx, kg));
            }
            for (a, &qa) in view_raw.iter().enumerate() {
                for (z, &gu) in grad_u.iter().enumerate() {
                    *grad_w.at_mut(a, z) = grad_w.at(a, z) + gu * qa;
                }
            }
            for z in 0..z_dim {
                grad_b[z] = grad_b[z] + grad_u[z];
            }
            for (idx, kg) in &key_grads {
                let raw_key = &store[*idx].embedding;
                for (a, &ra) in raw_key.iter().enumerate() {
                    for (z, &kgz) in kg.iter().enumerate() {
                        *grad_w.at_mut(a, z) = grad_w.at(a, z) + kgz * ra;
                    }
                }
                for z in 0..z_dim {
                    grad_b[z] = grad_b[z] + kg[z];
                }
            }
        }
    }

    let inv_batch = S::one() / cast::<S>(batch.len() as f64);
    loss = loss * inv_batch;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "shaping loss".into(),
        });
    }
    for g in grad_w.as_mut_slice() {
        *g = *g * inv_batch;
    }
    for g in &mut grad_b {
        *g = *g * inv_batch;
    }
    Ok((
        loss,
        ShapingGrads {
            w: grad_w,
            b: grad_b,
        },
    ))
}
