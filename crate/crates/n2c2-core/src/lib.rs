//! Retrieval-augmented calibration for few-shot cross-lingual
//! classification.
//!
//! Given precomputed mask-token embeddings and base-model label
//! distributions, the pipeline builds a labeled datastore from the few-shot
//! training set, trains three lightweight modules (representation shaping,
//! a confidence-aware retrieval distribution, and an adaptive multi-size
//! combiner), and produces calibrated predictions. Everything is generic
//! over the [`scalar::Scalar`] type; the crate-root aliases pin the shipped
//! pipeline to `f64`.

// Positivity guards are written `!(x > 0)` so that NaN fails them; the
// suggested `x <= 0` form would wave NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod confidence;
pub mod dataset;
pub mod datastore;
pub mod dist;
pub mod error;
pub mod gradcheck;
pub mod label;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod shaping;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use label::LabelSpace;
pub use rng::SeededRng;
pub use scalar::Scalar;

/// Working precision of the shipped pipeline.
pub type Real = f64;

pub type Distribution = dist::Distribution<Real>;
pub type View = dataset::View<Real>;
pub type EmbeddingRecord = dataset::EmbeddingRecord<Real>;
pub type Dataset = dataset::Dataset<Real>;
pub type Datastore = datastore::Datastore<Real>;
pub type DatastoreEntry = datastore::DatastoreEntry<Real>;
pub type ShapingLayer = shaping::ShapingLayer<Real>;
pub type NeighborSet = retrieval::NeighborSet<Real>;
pub type RetrievalConfig = retrieval::RetrievalConfig<Real>;
pub type ConfidenceModule = confidence::ConfidenceModule<Real>;
pub type DweNetwork = adaptive::DweNetwork<Real>;
pub type HyperParams = model::HyperParams<Real>;
pub type N2C2Model = model::N2C2Model<Real>;
pub type TrainConfig = training::TrainConfig<Real>;
pub type EpochLog = training::EpochLog<Real>;
pub type TrainOptions = pipeline::TrainOptions<Real>;
pub type TrainedPipeline = pipeline::TrainedPipeline<Real>;
pub type GroupedEval = pipeline::GroupedEval<Real>;
pub type EvalResult = metrics::EvalResult<Real>;
pub type SynthConfig = synthgen::SynthConfig<Real>;
pub type SynthDataset = synthgen::SynthDataset<Real>;
