//! Labeled datastore built from the few-shot training set, plus the
//! retrieval/update split used to train the modules without leakage.

use std::collections::HashMap;

use crate::dataset::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::rng::{stream, SeededRng};
use crate::scalar::Scalar;
use crate::shaping::ShapingLayer;

/// One retrievable item: key vector, gold label, and the base model's
/// probability of that label on the entry's own view.
#[derive(Debug, Clone)]
pub struct DatastoreEntry<S: Scalar> {
    pub id: String,
    pub key: Vec<S>,
    pub label: usize,
    pub self_prob: S,
}

/// Immutable collection of entries sharing one key dimension and one label
/// range.
#[derive(Debug, Clone)]
pub struct Datastore<S: Scalar> {
    entries: Vec<DatastoreEntry<S>>,
    dim: usize,
    num_classes: usize,
    shaped: bool,
}

impl<S: Scalar> Datastore<S> {
    pub fn new(entries: Vec<DatastoreEntry<S>>, num_classes: usize, shaped: bool) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyStore);
        }
        let dim = entries[0].key.len();
        for e in &entries {
            if e.key.len() != dim {
                return Err(Error::DimMismatch {
                    context: format!("datastore key of {}", e.id),
                    expected: dim,
                    got: e.key.len(),
                });
            }
            if e.label >= num_classes {
                return Err(Error::InvalidConfig(format!(
                    "datastore entry {} label {} out of range for {num_classes} classes",
                    e.id, e.label
                )));
            }
        }
        Ok(Self {
            entries,
            dim,
            num_classes,
            shaped,
        })
    }

    pub fn entries(&self) -> &[DatastoreEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Whether keys went through the shaping layer.
    pub fn shaped(&self) -> bool {
        self.shaped
    }
}

/// Disjoint halves of the training set: one side becomes the datastore,
/// the other supplies module-update queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub retrieval_ids: Vec<String>,
    pub update_ids: Vec<String>,
}

/// Stratified halving of the train records.
///
/// Per class the two halves differ by at most one record, and odd classes
/// alternate which half receives the extra so the overall sizes also differ
/// by at most one. Deterministic given the seed.
pub fn make_split<S: Scalar>(
    records: &[EmbeddingRecord<S>],
    num_classes: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_class: Vec<Vec<&str>> = vec![Vec::new(); num_classes];
    for r in records {
        let label = r.label.ok_or_else(|| Error::MissingLabel {
            id: r.id.clone(),
            split: r.split.as_str().into(),
        })?;
        if label >= num_classes {
            return Err(Error::InvalidConfig(format!(
                "record {} label {label} out of range for {num_classes} classes",
                r.id
            )));
        }
        by_class[label].push(&r.id);
    }
    for (class, ids) in by_class.iter().enumerate() {
        if ids.len() < 2 {
            return Err(Error::Degenerate {
                class,
                count: ids.len(),
            });
        }
    }

    let mut rng = SeededRng::new(seed).derive(stream::SPLIT);
    let mut retrieval_ids = Vec::new();
    let mut update_ids = Vec::new();
    let mut extra_to_retrieval = true;
    for ids in &mut by_class {
        rng.shuffle(ids);
        let n = ids.len();
        let mut take = n / 2;
        if n % 2 == 1 {
            if extra_to_retrieval {
                take += 1;
            }
            extra_to_retrieval = !extra_to_retrieval;
        }
        for (i, id) in ids.iter().enumerate() {
            if i < take {
                retrieval_ids.push(id.to_string());
            } else {
                update_ids.push(id.to_string());
            }
        }
    }
    Ok(SplitPlan {
        retrieval_ids,
        update_ids,
    })
}

/// Builds the datastore from the given record ids: one entry per view,
/// keyed by the shaped embedding when a layer is supplied.
pub fn build_datastore<S: Scalar>(
    records: &[EmbeddingRecord<S>],
    ids: &[String],
    num_classes: usize,
    shaper: Option<&ShapingLayer<S>>,
) -> Result<Datastore<S>> {
    if ids.is_empty() {
        return Err(Error::EmptyStore);
    }
    let by_id: HashMap<&str, &EmbeddingRecord<S>> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut entries = Vec::new();
    for id in ids {
        let record = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownId { id: id.clone() })?;
        let label = record.label.ok_or_else(|| Error::MissingLabel {
            id: id.clone(),
            split: record.split.as_str().into(),
        })?;
        for view in &record.views {
            let key = match shaper {
                Some(layer) => layer.shape(&view.embedding)?,
                None => view.embedding.clone(),
            };
            entries.push(DatastoreEntry {
                id: id.clone(),
                key,
                label,
                self_prob: view.base_dist.get(label),
            });
        }
    }
    Datastore::new(entries, num_classes, shaper.is_some())
}
