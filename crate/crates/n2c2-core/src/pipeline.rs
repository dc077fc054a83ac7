//! End-to-end orchestration: the seeded datastore split, both training
//! stages, store reconstruction for a trained model, batch inference, and
//! per-language evaluation.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{Combiner, Predictor};
use crate::dataset::{Dataset, EmbeddingRecord};
use crate::datastore::{build_datastore, make_split, Datastore};
use crate::dist::{ensemble_average, Distribution};
use crate::error::{Error, Result};
use crate::metrics::{contextual_calibrate, evaluate, EvalResult};
use crate::model::{HyperParams, N2C2Model};
use crate::retrieval::RetrievalConfig;
use crate::rng::{stream, SeededRng};
use crate::scalar::Scalar;
use crate::shaping::{LabeledEmbedding, ShapingExample};
use crate::training::{
    train_shaping, train_stage2, CombineMode, EpochLog, Stage2Example, Stage2Mode, TrainConfig,
};

/// Which pipeline components stay active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Distance-only neighbor weights instead of the confidence module.
    NoCd,
    /// Raw embeddings instead of the shaped space.
    RawRepr,
    /// One fixed neighborhood size and mixing weight instead of the gate.
    NoDwe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoCd,
        Variant::RawRepr,
        Variant::NoDwe,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCd => "no-cd",
            Variant::RawRepr => "raw-repr",
            Variant::NoDwe => "no-dwe",
        }
    }
}

/// Everything `train_pipeline` needs beyond the data itself.
#[derive(Debug, Clone)]
pub struct TrainOptions<S: Scalar> {
    pub retrieval: RetrievalConfig<S>,
    /// Shaped dimension; `None` keeps the input dimension.
    pub z_dim: Option<usize>,
    pub hidden: usize,
    /// Neighborhood size the fixed-combiner variant trains and predicts at.
    pub fixed_m: usize,
    pub normalize_distances: bool,
    pub variant: Variant,
    pub train: TrainConfig<S>,
}

impl<S: Scalar> Default for TrainOptions<S> {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            z_dim: None,
            hidden: 32,
            fixed_m: 8,
            normalize_distances: false,
            variant: Variant::Full,
            train: TrainConfig::default(),
        }
    }
}

/// A trained model plus everything worth reporting about the run.
#[derive(Debug, Clone)]
pub struct TrainedPipeline<S: Scalar> {
    pub model: N2C2Model<S>,
    pub logs: Vec<EpochLog<S>>,
    pub warnings: Vec<String>,
}

fn require_label<S: Scalar>(record: &EmbeddingRecord<S>) -> Result<usize> {
    record.label.ok_or_else(|| Error::MissingLabel {
        id: record.id.clone(),
        split: record.split.as_str().into(),
    })
}

fn records_by_id<'d, S: Scalar>(
    records: &'d [EmbeddingRecord<S>],
    ids: &[String],
) -> Result<Vec<&'d EmbeddingRecord<S>>> {
    let index: HashMap<&str, &EmbeddingRecord<S>> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownId { id: id.clone() })
        })
        .collect()
}

fn shaping_example<S: Scalar>(record: &EmbeddingRecord<S>) -> Result<ShapingExample<S>> {
    Ok(ShapingExample {
        views: record.views.iter().map(|v| v.embedding.clone()).collect(),
        label: require_label(record)?,
    })
}

/// Split the training records, fit the shaping layer on the update half,
/// freeze the shaped store, then fit the confidence module and gate on
/// retrievals prepared against it.
pub fn train_pipeline<S: Scalar>(
    train: &Dataset<S>,
    dev: &Dataset<S>,
    opts: &TrainOptions<S>,
) -> Result<TrainedPipeline<S>> {
    if train.label_space != dev.label_space {
        return Err(Error::InvalidConfig(
            "train and dev label spaces differ".into(),
        ));
    }
    if train.dim != dev.dim {
        return Err(Error::InvalidConfig(format!(
            "train dim {} does not match dev dim {}",
            train.dim, dev.dim
        )));
    }
    let z_dim = opts.z_dim.unwrap_or(train.dim);
    if opts.variant == Variant::RawRepr && z_dim != train.dim {
        return Err(Error::InvalidConfig(
            "the raw-representation variant keeps embeddings as-is; drop z_dim".into(),
        ));
    }

    let num_classes = train.label_space.len();
    let seed = opts.train.seed;
    let split = make_split(&train.records, num_classes, seed)?;
    let retrieval_records = records_by_id(&train.records, &split.retrieval_ids)?;
    let update_records = records_by_id(&train.records, &split.update_ids)?;
    let store_size: usize = retrieval_records.iter().map(|r| r.views.len()).sum();

    let mut warnings = Vec::new();
    if opts.retrieval.k_max() > store_size {
        warnings.push(format!(
            "k_max {} exceeds the {} stored entries; candidate sizes are capped",
            opts.retrieval.k_max(),
            store_size
        ));
    }

    let hyper = HyperParams {
        tau: opts.retrieval.tau(),
        k_max: opts.retrieval.k_max(),
        r_s: Vec::new(),
        h_dim: train.dim,
        z_dim,
        hidden: opts.hidden,
        classes: train.label_space.clone(),
        seed,
        normalize_distances: opts.normalize_distances,
    };
    let mut rng = SeededRng::new(seed).derive(stream::INIT);
    let mut model = N2C2Model::new(hyper, store_size, &mut rng)?;

    let mut logs = Vec::new();
    if opts.variant != Variant::RawRepr {
        let store: Vec<LabeledEmbedding<S>> = retrieval_records
            .iter()
            .map(|record| {
                let label = require_label(record)?;
                Ok(record.views.iter().map(move |v| LabeledEmbedding {
                    embedding: v.embedding.clone(),
                    label,
                }))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let examples: Vec<ShapingExample<S>> = update_records
            .iter()
            .map(|r| shaping_example(r))
            .collect::<Result<_>>()?;
        let dev_examples: Vec<ShapingExample<S>> = dev
            .records
            .iter()
            .map(shaping_example)
            .collect::<Result<_>>()?;
        let k = opts.retrieval.k_max().min(store_size);
        logs.extend(train_shaping(
            &mut model.shaping,
            &examples,
            &store,
            &dev_examples,
            opts.retrieval.tau(),
            k,
            num_classes,
            &opts.train,
        )?);
    }

    let store = build_datastore(
        &train.records,
        &split.retrieval_ids,
        num_classes,
        Some(&model.shaping),
    )?;
    let stage2 = prepare_examples(&model, &store, &update_records)?;
    let dev_refs: Vec<&EmbeddingRecord<S>> = dev.records.iter().collect();
    let stage2_dev = prepare_examples(&model, &store, &dev_refs)?;

    let mode = match opts.variant {
        Variant::Full | Variant::RawRepr => Stage2Mode::full(),
        Variant::NoCd => Stage2Mode {
            use_cd: false,
            combiner: CombineMode::Learned,
        },
        Variant::NoDwe => Stage2Mode {
            use_cd: true,
            combiner: CombineMode::Fixed {
                m: opts.fixed_m,
                lambda: opts.retrieval.lambda(),
            },
        },
    };
    let sizes = model.hyper.r_s.clone();
    logs.extend(train_stage2(
        &mut model.confidence,
        &mut model.dwe,
        &stage2,
        &stage2_dev,
        &mode,
        &sizes,
        opts.retrieval.tau(),
        opts.retrieval.k_max(),
        num_classes,
        &opts.train,
    )?);

    Ok(TrainedPipeline {
        model,
        logs,
        warnings,
    })
}

/// Shape and retrieve each view once so repeated passes skip the store.
pub fn prepare_examples<S: Scalar>(
    model: &N2C2Model<S>,
    store: &Datastore<S>,
    records: &[&EmbeddingRecord<S>],
) -> Result<Vec<Stage2Example<S>>> {
    let preparer = model.predictor();
    records
        .iter()
        .map(|record| {
            let views = record
                .views
                .iter()
                .map(|v| preparer.prepare_view(v, store))
                .collect::<Result<Vec<_>>>()?;
            Ok(Stage2Example {
                views,
                label: require_label(record)?,
            })
        })
        .collect()
}

/// Errors unless the dataset matches the model's label space and dimension.
pub fn ensure_compatible<S: Scalar>(model: &N2C2Model<S>, data: &Dataset<S>) -> Result<()> {
    if model.hyper.classes != data.label_space {
        return Err(Error::InvalidConfig(
            "dataset label space differs from the model's".into(),
        ));
    }
    if model.hyper.h_dim != data.dim {
        return Err(Error::InvalidConfig(format!(
            "dataset dim {} does not match model dim {}",
            data.dim, model.hyper.h_dim
        )));
    }
    Ok(())
}

/// Rebuild the store a trained model retrieves from: the same seeded split
/// of the training records, keys shaped by the trained layer.
pub fn build_inference_store<S: Scalar>(
    model: &N2C2Model<S>,
    train: &Dataset<S>,
) -> Result<Datastore<S>> {
    ensure_compatible(model, train)?;
    let num_classes = model.hyper.num_classes();
    let split = make_split(&train.records, num_classes, model.hyper.seed)?;
    build_datastore(
        &train.records,
        &split.retrieval_ids,
        num_classes,
        Some(&model.shaping),
    )
}

/// The same store with raw keys, for bypassing the shaping layer without
/// retraining.
pub fn build_raw_store<S: Scalar>(
    model: &N2C2Model<S>,
    train: &Dataset<S>,
) -> Result<Datastore<S>> {
    ensure_compatible(model, train)?;
    let num_classes = model.hyper.num_classes();
    let split = make_split(&train.records, num_classes, model.hyper.seed)?;
    build_datastore(&train.records, &split.retrieval_ids, num_classes, None)
}

/// Trained predictor with one component bypassed; `Full` is the whole stack.
/// The raw-representation bypass needs a store from [`build_raw_store`].
pub fn variant_predictor<'a, S: Scalar>(
    model: &'a N2C2Model<S>,
    variant: Variant,
    fixed_m: usize,
    lambda: S,
) -> Predictor<'a, S> {
    let mut p = model.predictor();
    match variant {
        Variant::Full => {}
        Variant::NoCd => p.confidence = None,
        Variant::RawRepr => p.shaper = None,
        Variant::NoDwe => p.combiner = Combiner::Fixed { m: fixed_m, lambda },
    }
    p
}

/// Ordered predictions for every record, parallelized across records.
pub fn predict_records<S: Scalar>(
    predictor: &Predictor<'_, S>,
    store: &Datastore<S>,
    records: &[EmbeddingRecord<S>],
) -> Result<Vec<Distribution<S>>> {
    records
        .par_iter()
        .map(|r| predictor.predict(&r.views, store))
        .collect()
}

/// How the stored base-model outputs turn into a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseMode {
    Raw,
    /// Divide out each view's content-free distribution first.
    ContextCalibrated,
}

/// View-ensembled base-model prediction for one record.
pub fn base_prediction<S: Scalar>(
    record: &EmbeddingRecord<S>,
    mode: BaseMode,
) -> Result<Distribution<S>> {
    let dists = record
        .views
        .iter()
        .map(|v| match mode {
            BaseMode::Raw => Ok(v.base_dist.clone()),
            BaseMode::ContextCalibrated => {
                let cf = v.cf_dist.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "record {} has no content-free distribution",
                        record.id
                    ))
                })?;
                contextual_calibrate(&v.base_dist, cf)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    ensemble_average(&dists)
}

/// Base-model predictions for every record, in order.
pub fn base_predictions<S: Scalar>(
    records: &[EmbeddingRecord<S>],
    mode: BaseMode,
) -> Result<Vec<Distribution<S>>> {
    records.iter().map(|r| base_prediction(r, mode)).collect()
}

/// Unweighted mean of the per-language accuracy and ECE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MacroAverage<S: Scalar> {
    pub accuracy: S,
    pub ece: S,
    pub languages: usize,
}

/// Evaluation of one prediction set, overall and split by language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GroupedEval<S: Scalar> {
    pub overall: EvalResult<S>,
    pub languages: BTreeMap<String, EvalResult<S>>,
    pub average: MacroAverage<S>,
}

/// Accuracy and ECE against gold labels, overall plus per language with
/// their unweighted average.
pub fn evaluate_grouped<S: Scalar>(
    records: &[EmbeddingRecord<S>],
    preds: &[Distribution<S>],
    num_bins: usize,
) -> Result<GroupedEval<S>> {
    if records.len() != preds.len() {
        return Err(Error::LengthMismatch {
            context: "evaluate_grouped".into(),
            left: records.len(),
            right: preds.len(),
        });
    }
    let mut all = Vec::with_capacity(records.len());
    let mut by_lang: BTreeMap<String, Vec<(Distribution<S>, usize)>> = BTreeMap::new();
    for (record, pred) in records.iter().zip(preds) {
        let gold = require_label(record)?;
        all.push((pred.clone(), gold));
        by_lang
            .entry(record.lang.clone())
            .or_default()
            .push((pred.clone(), gold));
    }
    let overall = evaluate(&all, num_bins)?;
    let mut languages = BTreeMap::new();
    let mut acc_sum = S::zero();
    let mut ece_sum = S::zero();
    for (lang, pairs) in by_lang {
        let result = evaluate(&pairs, num_bins)?;
        acc_sum = acc_sum + result.accuracy;
        ece_sum = ece_sum + result.ece;
        languages.insert(lang, result);
    }
    let count = S::from_f64_lossy(languages.len() as f64);
    let average = MacroAverage {
        accuracy: acc_sum / count,
        ece: ece_sum / count,
        languages: languages.len(),
    };
    Ok(GroupedEval {
        overall,
        languages,
        average,
    })
}
