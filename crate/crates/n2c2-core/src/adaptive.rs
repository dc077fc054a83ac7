//! Adaptive multi-size combination: a learned gate reads the padded
//! neighbor features, scores each candidate neighborhood size alongside the
//! no-retrieval option, and mixes the per-size distributions with the base
//! model's own prediction.

use serde::{Deserialize, Serialize};

use crate::confidence::{cd_distribution, neighbor_features, padded_input, ConfidenceModule};
use crate::dataset::View;
use crate::datastore::Datastore;
use crate::dist::{ensemble_average, normalize, Distribution};
use crate::error::{Error, Result};
use crate::linalg::{tanh_vec, Mat};
use crate::retrieval::{interpolate, knn_distribution, search, NeighborSet};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// Candidate neighborhood sizes: multiples of 4 from 0 up to whichever of
/// `k_max` and the store size is smaller. Size 0 is the base-only option.
pub fn candidate_sizes(k_max: usize, store_size: usize) -> Vec<usize> {
    let cap = k_max.min(store_size);
    let mut sizes = vec![0];
    let mut m = 4;
    while m <= cap {
        sizes.push(m);
        m += 4;
    }
    sizes
}

/// Two-layer gate over padded neighbor features. The output layer starts at
/// zero, so an untrained gate weights every option uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DweNetwork<S: Scalar> {
    l1: Mat<S>,
    l2: Mat<S>,
}

impl<S: Scalar> DweNetwork<S> {
    pub fn new(
        k_max: usize,
        hidden: usize,
        num_options: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if k_max == 0 || hidden == 0 || num_options == 0 {
            return Err(Error::InvalidConfig(
                "gate dimensions must all be at least 1".into(),
            ));
        }
        Ok(Self {
            l1: Mat::xavier(hidden, 2 * k_max, rng),
            l2: Mat::zeros(num_options, hidden),
        })
    }

    pub fn from_parts(l1: Mat<S>, l2: Mat<S>) -> Result<Self> {
        if l2.cols() != l1.rows() {
            return Err(Error::ShapeMismatch(format!(
                "gate layers disagree: {}x{} then {}x{}",
                l1.rows(),
                l1.cols(),
                l2.rows(),
                l2.cols()
            )));
        }
        if !l1.cols().is_multiple_of(2) {
            return Err(Error::ShapeMismatch(format!(
                "gate input width must be even, got {}",
                l1.cols()
            )));
        }
        Ok(Self { l1, l2 })
    }

    pub fn l1(&self) -> &Mat<S> {
        &self.l1
    }

    pub fn l2(&self) -> &Mat<S> {
        &self.l2
    }

    pub fn num_options(&self) -> usize {
        self.l2.rows()
    }

    pub fn feature_width(&self) -> usize {
        self.l1.cols()
    }

    pub fn params_mut(&mut self) -> [&mut [S]; 2] {
        [self.l1.as_mut_slice(), self.l2.as_mut_slice()]
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.l2.is_finite()
    }

    /// `softmax(l2 * tanh(l1 * f))` over the candidate options.
    pub fn weights(&self, f: &[S]) -> Result<Vec<S>> {
        self.weights_traced(f).map(|(w, _)| w)
    }

    pub fn weights_traced(&self, f: &[S]) -> Result<(Vec<S>, GateTrace<S>)> {
        if f.len() != self.l1.cols() {
            return Err(Error::DimMismatch {
                context: "gate features".into(),
                expected: self.l1.cols(),
                got: f.len(),
            });
        }
        let pre = self.l1.matvec(f);
        let act = tanh_vec(&pre);
        let logits = self.l2.matvec(&act);
        let weights = normalize(&crate::dist::log_sum_exp_weights(&logits)?)?.into_vec();
        Ok((
            weights.clone(),
            GateTrace {
                input: f.to_vec(),
                act,
                weights,
            },
        ))
    }
}

/// Intermediates of one gate forward pass.
#[derive(Debug, Clone)]
pub struct GateTrace<S: Scalar> {
    pub input: Vec<S>,
    pub act: Vec<S>,
    pub weights: Vec<S>,
}

/// Weighted mixture with the base distribution as option 0:
/// `w[0] * p_base + sum_j w[j] * per_size[j - 1]`.
pub fn combine<S: Scalar>(
    weights: &[S],
    p_base: &Distribution<S>,
    per_size: &[Distribution<S>],
) -> Result<Distribution<S>> {
    if weights.len() != per_size.len() + 1 {
        return Err(Error::LengthMismatch {
            context: "combine weights".into(),
            left: weights.len(),
            right: per_size.len() + 1,
        });
    }
    let mut mix = vec![S::zero(); p_base.len()];
    for (m, &b) in mix.iter_mut().zip(p_base.probs()) {
        *m = weights[0] * b;
    }
    for (d, &w) in per_size.iter().zip(&weights[1..]) {
        if d.len() != p_base.len() {
            return Err(Error::LengthMismatch {
                context: "combine distributions".into(),
                left: d.len(),
                right: p_base.len(),
            });
        }
        for (m, &p) in mix.iter_mut().zip(d.probs()) {
            *m = *m + w * p;
        }
    }
    Distribution::new(mix)
}

/// How retrieval gets folded into the final prediction.
#[derive(Debug, Clone)]
pub enum Combiner<'a, S: Scalar> {
    /// Learned gate over all candidate sizes.
    Learned(&'a DweNetwork<S>),
    /// Classic fixed-size interpolation at weight `lambda` on the base.
    Fixed { m: usize, lambda: S },
}

/// End-to-end inference over one record: shape each view's embedding,
/// retrieve, build per-size distributions, combine, then average the views.
#[derive(Debug, Clone)]
pub struct Predictor<'a, S: Scalar> {
    pub shaper: Option<&'a crate::shaping::ShapingLayer<S>>,
    pub confidence: Option<&'a ConfidenceModule<S>>,
    pub combiner: Combiner<'a, S>,
    pub sizes: &'a [usize],
    pub tau: S,
    pub k_max: usize,
    pub normalize_distances: bool,
    pub num_classes: usize,
}

impl<'a, S: Scalar> Predictor<'a, S> {
    pub fn predict(&self, views: &[View<S>], store: &Datastore<S>) -> Result<Distribution<S>> {
        if views.is_empty() {
            return Err(Error::EmptyList {
                context: "predict views".into(),
            });
        }
        let per_view = views
            .iter()
            .map(|v| self.predict_view(v, store))
            .collect::<Result<Vec<_>>>()?;
        ensemble_average(&per_view)
    }

    pub fn predict_view(&self, view: &View<S>, store: &Datastore<S>) -> Result<Distribution<S>> {
        let prepared = self.prepare_view(view, store)?;
        self.predict_prepared_view(&prepared)
    }

    /// Runs the shaping and retrieval half once so repeated forward passes
    /// (training epochs, dev sweeps) skip the store scan.
    pub fn prepare_view(&self, view: &View<S>, store: &Datastore<S>) -> Result<PreparedView<S>> {
        if view.base_dist.len() != self.num_classes {
            return Err(Error::DimMismatch {
                context: "base distribution".into(),
                expected: self.num_classes,
                got: view.base_dist.len(),
            });
        }
        let query = match self.shaper {
            Some(s) => s.shape(&view.embedding)?,
            None => view.embedding.clone(),
        };
        let ns = search(store, &query, self.k_max)?;
        let feats = neighbor_features(&ns, &view.base_dist)?;
        let normalizer = self.normalizer(&feats.distances)?;
        Ok(PreparedView {
            retrieval: ViewRetrieval {
                neighbors: ns,
                feats,
                normalizer,
            },
            base_dist: view.base_dist.clone(),
        })
    }

    pub fn predict_prepared(&self, views: &[PreparedView<S>]) -> Result<Distribution<S>> {
        if views.is_empty() {
            return Err(Error::EmptyList {
                context: "predict views".into(),
            });
        }
        let per_view = views
            .iter()
            .map(|v| self.predict_prepared_view(v))
            .collect::<Result<Vec<_>>>()?;
        ensemble_average(&per_view)
    }

    pub fn predict_prepared_view(&self, pv: &PreparedView<S>) -> Result<Distribution<S>> {
        let ns = &pv.retrieval.neighbors;
        let feats = &pv.retrieval.feats;
        let normalizer = pv.retrieval.normalizer;
        match &self.combiner {
            Combiner::Fixed { m, lambda } => {
                let m_eff = (*m).min(ns.len());
                if m_eff == 0 {
                    return Ok(pv.base_dist.clone());
                }
                let p_m = match self.confidence {
                    Some(conf) => {
                        let f_m = padded_input(feats, m_eff, self.k_max, normalizer)?;
                        let t = conf.temperature(&f_m)?;
                        let biases = self.all_biases(conf, feats)?;
                        cd_distribution(ns, m_eff, self.tau, t, &biases, self.num_classes)?
                    }
                    None => knn_distribution(ns, m_eff, self.tau, self.num_classes)?,
                };
                interpolate(&p_m, &pv.base_dist, *lambda)
            }
            Combiner::Learned(gate) => {
                if gate.num_options() != self.sizes.len() {
                    return Err(Error::LengthMismatch {
                        context: "gate options".into(),
                        left: gate.num_options(),
                        right: self.sizes.len(),
                    });
                }
                let f_full = padded_input(feats, ns.len(), self.k_max, normalizer)?;
                let weights = gate.weights(&f_full)?;
                let biases = match self.confidence {
                    Some(conf) => Some(self.all_biases(conf, feats)?),
                    None => None,
                };
                let mut per_size = Vec::with_capacity(self.sizes.len().saturating_sub(1));
                for &m in self.sizes.iter().filter(|&&m| m > 0) {
                    let m_eff = m.min(ns.len());
                    let p = match (self.confidence, &biases) {
                        (Some(conf), Some(bs)) => {
                            let f_m = padded_input(feats, m_eff, self.k_max, normalizer)?;
                            let t = conf.temperature(&f_m)?;
                            cd_distribution(ns, m_eff, self.tau, t, bs, self.num_classes)?
                        }
                        _ => knn_distribution(ns, m_eff, self.tau, self.num_classes)?,
                    };
                    per_size.push(p);
                }
                combine(&weights, &pv.base_dist, &per_size)
            }
        }
    }

    /// Mean neighbor distance of this query, or nothing when scaling is off
    /// or the mean is degenerate.
    fn normalizer(&self, distances: &[S]) -> Result<Option<S>> {
        if !self.normalize_distances {
            return Ok(None);
        }
        let n = cast_len(distances.len());
        let mean = distances.iter().copied().sum::<S>() / n;
        if mean > S::zero() && mean.is_finite() {
            Ok(Some(mean))
        } else {
            Ok(None)
        }
    }

    fn all_biases(
        &self,
        conf: &ConfidenceModule<S>,
        feats: &crate::confidence::NeighborFeatures<S>,
    ) -> Result<Vec<S>> {
        feats
            .query_label_probs
            .iter()
            .zip(&feats.self_probs)
            .map(|(&pq, &sp)| conf.bias(pq, sp))
            .collect()
    }
}

fn cast_len<S: Scalar>(n: usize) -> S {
    crate::scalar::cast(n as f64)
}

/// Shared prefix features and retrieval state for one view, reused by the
/// training loop so search runs once per example.
#[derive(Debug, Clone)]
pub struct ViewRetrieval<S: Scalar> {
    pub neighbors: NeighborSet<S>,
    pub feats: crate::confidence::NeighborFeatures<S>,
    pub normalizer: Option<S>,
}

/// One view after shaping and retrieval, ready for repeated combiner passes.
#[derive(Debug, Clone)]
pub struct PreparedView<S: Scalar> {
    pub retrieval: ViewRetrieval<S>,
    pub base_dist: Distribution<S>,
}
