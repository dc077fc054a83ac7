//! The trained model: shaping layer, confidence module, gating network,
//! and the hyperparameters needed to reproduce inference exactly. Persisted
//! as a single versioned JSON document with full-precision matrices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive::{candidate_sizes, Combiner, DweNetwork, Predictor};
use crate::confidence::ConfidenceModule;
use crate::dataset::View;
use crate::datastore::Datastore;
use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::label::LabelSpace;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::shaping::ShapingLayer;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything inference depends on besides the learned matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HyperParams<S: Scalar> {
    pub tau: S,
    pub k_max: usize,
    pub r_s: Vec<usize>,
    pub h_dim: usize,
    pub z_dim: usize,
    pub hidden: usize,
    pub classes: LabelSpace,
    pub seed: u64,
    pub normalize_distances: bool,
}

impl<S: Scalar> HyperParams<S> {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > S::zero()) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive and finite, got {}",
                self.tau
            )));
        }
        if self.k_max == 0 || self.h_dim == 0 || self.z_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "k_max and all widths must be at least 1".into(),
            ));
        }
        if self.r_s.first() != Some(&0) {
            return Err(Error::InvalidConfig(
                "candidate sizes must start at 0".into(),
            ));
        }
        for pair in self.r_s.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidConfig(
                    "candidate sizes must be strictly increasing".into(),
                ));
            }
        }
        if self.r_s.last().copied().unwrap_or(0) > self.k_max {
            return Err(Error::InvalidConfig(format!(
                "candidate sizes exceed k_max {}",
                self.k_max
            )));
        }
        Ok(())
    }
}

/// The three trained modules plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct N2C2Model<S: Scalar> {
    pub hyper: HyperParams<S>,
    pub shaping: ShapingLayer<S>,
    pub confidence: ConfidenceModule<S>,
    pub dwe: DweNetwork<S>,
}

impl<S: Scalar> N2C2Model<S> {
    /// Fresh model with Xavier trunks and zero output heads; `store_size`
    /// caps the candidate sizes. A square shaping layer starts at identity,
    /// so the untrained model retrieves over raw embeddings.
    pub fn new(mut hyper: HyperParams<S>, store_size: usize, rng: &mut SeededRng) -> Result<Self> {
        hyper.r_s = candidate_sizes(hyper.k_max, store_size);
        hyper.validate()?;
        let shaping = if hyper.h_dim == hyper.z_dim {
            ShapingLayer::identity(hyper.h_dim)
        } else {
            ShapingLayer::new_xavier(hyper.h_dim, hyper.z_dim, rng)?
        };
        let confidence = ConfidenceModule::new(hyper.k_max, hyper.hidden, rng)?;
        let dwe = DweNetwork::new(hyper.k_max, hyper.hidden, hyper.r_s.len(), rng)?;
        Ok(Self {
            hyper,
            shaping,
            confidence,
            dwe,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let mut problems = Vec::new();
        if self.shaping.input_dim() != self.hyper.h_dim {
            problems.push(format!(
                "shaping input {} vs h_dim {}",
                self.shaping.input_dim(),
                self.hyper.h_dim
            ));
        }
        if self.shaping.output_dim() != self.hyper.z_dim {
            problems.push(format!(
                "shaping output {} vs z_dim {}",
                self.shaping.output_dim(),
                self.hyper.z_dim
            ));
        }
        if self.confidence.feature_width() != 2 * self.hyper.k_max {
            problems.push(format!(
                "confidence feature width {} vs 2*k_max {}",
                self.confidence.feature_width(),
                2 * self.hyper.k_max
            ));
        }
        if self.confidence.hidden() != self.hyper.hidden {
            problems.push(format!(
                "confidence hidden {} vs hyper {}",
                self.confidence.hidden(),
                self.hyper.hidden
            ));
        }
        if self.dwe.feature_width() != 2 * self.hyper.k_max {
            problems.push(format!(
                "gate feature width {} vs 2*k_max {}",
                self.dwe.feature_width(),
                2 * self.hyper.k_max
            ));
        }
        if self.dwe.num_options() != self.hyper.r_s.len() {
            problems.push(format!(
                "gate options {} vs candidate sizes {}",
                self.dwe.num_options(),
                self.hyper.r_s.len()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::DimInconsistency(problems.join("; ")));
        }
        Ok(())
    }

    /// Full-pipeline predictor over a store shaped with this model's layer.
    pub fn predictor(&self) -> Predictor<'_, S> {
        Predictor {
            shaper: Some(&self.shaping),
            confidence: Some(&self.confidence),
            combiner: Combiner::Learned(&self.dwe),
            sizes: &self.hyper.r_s,
            tau: self.hyper.tau,
            k_max: self.hyper.k_max,
            normalize_distances: self.hyper.normalize_distances,
            num_classes: self.hyper.num_classes(),
        }
    }
}

/// Full inference for one record's views against a shaped datastore.
pub fn n2c2_predict<S: Scalar>(
    model: &N2C2Model<S>,
    store: &Datastore<S>,
    views: &[View<S>],
) -> Result<Distribution<S>> {
    model.predictor().predict(views, store)
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct ModelFile<S: Scalar> {
    format_version: u32,
    #[serde(flatten)]
    model: N2C2Model<S>,
}

/// Serializes the model as pretty JSON; byte-deterministic for equal models.
pub fn save_model<S: Scalar>(model: &N2C2Model<S>, path: &Path) -> Result<()> {
    model.validate()?;
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model<S: Scalar>(path: &Path) -> Result<N2C2Model<S>> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let version =
        value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or(Error::VersionMismatch {
                found: 0,
                expected: MODEL_FORMAT_VERSION,
            })?;
    if version != u64::from(MODEL_FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile<S> = serde_json::from_value(value).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    file.model.validate()?;
    Ok(file.model)
}
