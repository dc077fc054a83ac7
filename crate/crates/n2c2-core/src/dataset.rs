//! JSONL dataset format: precomputed embeddings and base-model distributions.
//!
//! Line 1 is a header object carrying the embedding dimension and class
//! names; every following line is one record. Floats round-trip exactly
//! (shortest-representation serialization both ways).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::label::LabelSpace;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Gold labels are mandatory for train and dev records.
    pub fn requires_label(self) -> bool {
        matches!(self, Split::Train | Split::Dev)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// One demonstration view of an example: the mask-position embedding and the
/// base model's label distribution under that demonstration context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct View<S: Scalar> {
    pub embedding: Vec<S>,
    pub base_dist: Distribution<S>,
    /// Base-model distribution on a content-free input, if the producer
    /// supplied one; consumed only by contextual calibration.
    #[serde(default = "none_dist")]
    pub cf_dist: Option<Distribution<S>>,
}

fn none_dist<S: Scalar>() -> Option<Distribution<S>> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmbeddingRecord<S: Scalar> {
    pub id: String,
    pub lang: String,
    pub split: Split,
    pub label: Option<usize>,
    pub views: Vec<View<S>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    #[serde(rename = "type")]
    kind: String,
    dim: usize,
    classes: Vec<String>,
    format_version: u32,
}

/// A parsed dataset file: records plus the label space they index into.
#[derive(Debug, Clone)]
pub struct Dataset<S: Scalar> {
    pub label_space: LabelSpace,
    pub dim: usize,
    pub records: Vec<EmbeddingRecord<S>>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn validate_record<S: Scalar>(
    record: &EmbeddingRecord<S>,
    dim: usize,
    num_classes: usize,
    line: usize,
) -> Result<()> {
    if record.id.is_empty() {
        return Err(parse_err(line, "record id is empty"));
    }
    if record.views.is_empty() {
        return Err(parse_err(
            line,
            format!("record {} has no views", record.id),
        ));
    }
    match record.label {
        Some(l) if l >= num_classes => {
            return Err(parse_err(
                line,
                format!(
                    "record {} label {l} out of range for {num_classes} classes",
                    record.id
                ),
            ));
        }
        None if record.split.requires_label() => {
            return Err(Error::MissingLabel {
                id: record.id.clone(),
                split: record.split.as_str().into(),
            });
        }
        _ => {}
    }
    for view in &record.views {
        if view.embedding.len() != dim {
            return Err(Error::DimMismatch {
                context: format!("embedding of record {}", record.id),
                expected: dim,
                got: view.embedding.len(),
            });
        }
        if view.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("embedding of record {}", record.id),
            });
        }
        if view.base_dist.len() != num_classes {
            return Err(Error::DimMismatch {
                context: format!("base_dist of record {}", record.id),
                expected: num_classes,
                got: view.base_dist.len(),
            });
        }
        if let Some(cf) = &view.cf_dist {
            if cf.len() != num_classes {
                return Err(Error::DimMismatch {
                    context: format!("cf_dist of record {}", record.id),
                    expected: num_classes,
                    got: cf.len(),
                });
            }
        }
    }
    Ok(())
}

pub fn load_dataset<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let file = File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines
        .next()
        .ok_or(Error::EmptyDataset)?
        .map_err(Error::Io)?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, e.to_string()))?;
    if header.kind != "header" {
        return Err(parse_err(
            1,
            format!("expected header line, got type {:?}", header.kind),
        ));
    }
    if header.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let label_space = LabelSpace::new(header.classes).map_err(|e| parse_err(1, e.to_string()))?;
    if header.dim == 0 {
        return Err(parse_err(1, "header dim must be positive"));
    }

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord<S> =
            serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
        validate_record(&record, header.dim, label_space.len(), line_no)?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        label_space,
        dim: header.dim,
        records,
    })
}

pub fn save_dataset<S: Scalar>(
    path: impl AsRef<Path>,
    label_space: &LabelSpace,
    dim: usize,
    records: &[EmbeddingRecord<S>],
) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, record) in records.iter().enumerate() {
        validate_record(record, dim, label_space.len(), i + 2)?;
    }
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let header = Header {
        kind: "header".into(),
        dim,
        classes: label_space.names().to_vec(),
        format_version: FORMAT_VERSION,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| parse_err(1, e.to_string()))?;
    w.write_all(b"\n")?;
    for record in records {
        serde_json::to_writer(&mut w, record).map_err(|e| parse_err(0, e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> Distribution<f64> {
        Distribution::new(p.to_vec()).unwrap()
    }

    fn record(id: &str, split: Split, label: Option<usize>) -> EmbeddingRecord<f64> {
        EmbeddingRecord {
            id: id.into(),
            lang: "en".into(),
            split,
            label,
            views: vec![View {
                embedding: vec![0.5, -1.25, 3.0, 0.1],
                base_dist: dist(&[0.25, 0.75]),
                cf_dist: None,
            }],
        }
    }

    fn write_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    const HEADER: &str = r#"{"type":"header","dim":4,"classes":["neg","pos"],"format_version":1}"#;

    #[test]
    fn loads_header_and_records() {
        let f = write_file(&[
            HEADER,
            r#"{"id":"a","lang":"en","split":"train","label":0,"views":[{"embedding":[1.0,2.0,3.0,4.0],"base_dist":[0.5,0.5],"cf_dist":null}]}"#,
            r#"{"id":"b","lang":"de","split":"test","label":null,"views":[{"embedding":[0.0,0.0,0.0,0.0],"base_dist":[0.1,0.9]}]}"#,
        ]);
        let ds: Dataset<f64> = load_dataset(f.path()).unwrap();
        assert_eq!(ds.records.len(), 2);
        assert_eq!(ds.dim, 4);
        assert_eq!(ds.label_space.len(), 2);
        assert_eq!(ds.records[0].label, Some(0));
        assert!(ds.records[1].label.is_none());
    }

    #[test]
    fn dim_mismatch_detected() {
        let f = write_file(&[
            HEADER,
            r#"{"id":"a","lang":"en","split":"train","label":0,"views":[{"embedding":[1.0,2.0,3.0],"base_dist":[0.5,0.5]}]}"#,
        ]);
        let err = load_dataset::<f64>(f.path()).unwrap_err();
        assert!(matches!(
            err,
            Error::DimMismatch {
                expected: 4,
                got: 3,
                ..
            }
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_file(&[HEADER, "{not json"]);
        let err = load_dataset::<f64>(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_label_on_train_rejected() {
        let f = write_file(&[
            HEADER,
            r#"{"id":"a","lang":"en","split":"train","label":null,"views":[{"embedding":[1.0,2.0,3.0,4.0],"base_dist":[0.5,0.5]}]}"#,
        ]);
        assert!(matches!(
            load_dataset::<f64>(f.path()).unwrap_err(),
            Error::MissingLabel { .. }
        ));
    }

    #[test]
    fn missing_label_on_test_allowed() {
        let f = write_file(&[
            HEADER,
            r#"{"id":"a","lang":"en","split":"test","label":null,"views":[{"embedding":[1.0,2.0,3.0,4.0],"base_dist":[0.5,0.5]}]}"#,
        ]);
        assert!(load_dataset::<f64>(f.path()).is_ok());
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let f = write_file(&[HEADER]);
        assert!(matches!(
            load_dataset::<f64>(f.path()).unwrap_err(),
            Error::EmptyDataset
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let f = write_file(&[
            r#"{"type":"header","dim":4,"classes":["neg","pos"],"format_version":9}"#,
        ]);
        assert!(matches!(
            load_dataset::<f64>(f.path()).unwrap_err(),
            Error::VersionMismatch {
                found: 9,
                expected: 1
            }
        ));
    }

    #[test]
    fn bad_distribution_is_a_parse_error_with_line() {
        let f = write_file(&[
            HEADER,
            r#"{"id":"a","lang":"en","split":"train","label":0,"views":[{"embedding":[1.0,2.0,3.0,4.0],"base_dist":[0.9,0.9]}]}"#,
        ]);
        assert!(matches!(
            load_dataset::<f64>(f.path()).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let f = write_file(&[
            HEADER,
            r#"{"id":"a","lang":"en","split":"train","label":2,"views":[{"embedding":[1.0,2.0,3.0,4.0],"base_dist":[0.5,0.5]}]}"#,
        ]);
        assert!(matches!(
            load_dataset::<f64>(f.path()).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn save_then_load_reproduces_records_exactly() {
        let records = vec![
            record("a", Split::Train, Some(0)),
            record("b", Split::Dev, Some(1)),
            EmbeddingRecord {
                id: "c".into(),
                lang: "ja".into(),
                split: Split::Test,
                label: None,
                views: vec![
                    View {
                        embedding: vec![
                            0.1234567890123456,
                            -7.0e-17,
                            std::f64::consts::PI,
                            1.0 / 3.0,
                        ],
                        base_dist: dist(&[1.0 / 3.0, 2.0 / 3.0]),
                        cf_dist: Some(dist(&[0.5, 0.5])),
                    },
                    View {
                        embedding: vec![0.0, 0.0, 0.0, 0.0],
                        base_dist: dist(&[0.9999999, 0.0000001]),
                        cf_dist: None,
                    },
                ],
            },
        ];
        let space = LabelSpace::new(vec!["neg".into(), "pos".into()]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(f.path(), &space, 4, &records).unwrap();
        let ds: Dataset<f64> = load_dataset(f.path()).unwrap();
        assert_eq!(ds.records, records);
        assert_eq!(ds.label_space, space);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let records = vec![record("a", Split::Train, Some(1))];
        let space = LabelSpace::new(vec!["neg".into(), "pos".into()]).unwrap();
        let f1 = tempfile::NamedTempFile::new().unwrap();
        let f2 = tempfile::NamedTempFile::new().unwrap();
        save_dataset(f1.path(), &space, 4, &records).unwrap();
        save_dataset(f2.path(), &space, 4, &records).unwrap();
        assert_eq!(
            std::fs::read(f1.path()).unwrap(),
            std::fs::read(f2.path()).unwrap()
        );
    }
}
