//! Seeded synthetic cross-lingual generator: Gaussian class centroids, one
//! additive offset per language, noisy per-view embeddings, and a base
//! predictor that reads the embedding through extra noise and a sharpness
//! knob, so it makes realistic, miscalibrated errors.

use std::path::{Path, PathBuf};

use crate::dataset::{save_dataset, EmbeddingRecord, Split, View};
use crate::dist::{log_sum_exp_weights, normalize, Distribution};
use crate::error::{Error, Result};
use crate::label::LabelSpace;
use crate::linalg::euclidean;
use crate::rng::{stream, SeededRng};
use crate::scalar::Scalar;

/// The base predictor's observation noise relative to `noise_sigma`. Above 1
/// so stored neighbors carry information the base predictor lacks.
pub const BASE_NOISE_FACTOR: f64 = 4.0;

/// Generator settings. The first language is the source: it gets the
/// train/dev files and a zero offset; every other language gets a test file.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig<S: Scalar> {
    pub dim: usize,
    pub num_classes: usize,
    /// Train records per class (source language only).
    pub shots: usize,
    pub languages: Vec<String>,
    /// Per-view embedding noise scale.
    pub noise_sigma: S,
    /// Per-language offset scale; the source offset is always zero.
    pub shift_sigma: S,
    /// Scales the base predictor's logits: larger means more confident.
    pub miscalib_temp: S,
    pub views_per_record: usize,
    pub dev_shots: usize,
    /// Test records per class per target language.
    pub test_shots: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for SynthConfig<S> {
    /// The benchmark: a base predictor around 35-40% accurate on the target
    /// languages yet highly confident, against an informative datastore.
    fn default() -> Self {
        Self {
            dim: 32,
            num_classes: 4,
            shots: 16,
            languages: vec!["en".into(), "de".into(), "fr".into(), "ja".into()],
            noise_sigma: S::from_f64_lossy(3.0),
            shift_sigma: S::from_f64_lossy(1.5),
            miscalib_temp: S::from_f64_lossy(12.0),
            views_per_record: 1,
            dev_shots: 16,
            test_shots: 100,
            seed: 1,
        }
    }
}

impl<S: Scalar> SynthConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.shots < 2 {
            return Err(Error::InvalidConfig(format!(
                "shots must be at least 2 so the train split can be halved, got {}",
                self.shots
            )));
        }
        if self.dev_shots == 0 || self.test_shots == 0 || self.views_per_record == 0 {
            return Err(Error::InvalidConfig(
                "dev_shots, test_shots, and views_per_record must be at least 1".into(),
            ));
        }
        if self.languages.is_empty() {
            return Err(Error::InvalidConfig("need at least one language".into()));
        }
        for (i, lang) in self.languages.iter().enumerate() {
            if lang.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "language {i} has an empty name"
                )));
            }
            if self.languages[..i].contains(lang) {
                return Err(Error::InvalidConfig(format!("duplicate language {lang:?}")));
            }
        }
        let nonneg = |x: S| x >= S::zero() && x.is_finite();
        if !nonneg(self.noise_sigma) || !nonneg(self.shift_sigma) {
            return Err(Error::InvalidConfig(format!(
                "noise scales must be nonnegative and finite, got {} and {}",
                self.noise_sigma, self.shift_sigma
            )));
        }
        if !(self.miscalib_temp > S::zero()) || !self.miscalib_temp.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "miscalib_temp must be positive and finite, got {}",
                self.miscalib_temp
            )));
        }
        Ok(())
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::new((0..self.num_classes).map(|c| format!("class{c}")).collect())
            .expect("at least two generated class names, all distinct")
    }
}

/// Generated corpus: source-language train/dev plus one test set per target
/// language, in config language order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset<S: Scalar> {
    pub label_space: LabelSpace,
    pub dim: usize,
    pub train: Vec<EmbeddingRecord<S>>,
    pub dev: Vec<EmbeddingRecord<S>>,
    pub tests: Vec<(String, Vec<EmbeddingRecord<S>>)>,
}

impl<S: Scalar> SynthDataset<S> {
    /// Writes `train.jsonl`, `dev.jsonl`, and `test_<lang>.jsonl` under
    /// `dir`, returning the paths in that order.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::with_capacity(2 + self.tests.len());
        for (name, records) in [("train", &self.train), ("dev", &self.dev)] {
            let path = dir.join(format!("{name}.jsonl"));
            save_dataset(&path, &self.label_space, self.dim, records)?;
            paths.push(path);
        }
        for (lang, records) in &self.tests {
            let path = dir.join(format!("test_{lang}.jsonl"));
            save_dataset(&path, &self.label_space, self.dim, records)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn normal_vec<S: Scalar>(rng: &mut SeededRng, dim: usize, scale: S) -> Vec<S> {
    (0..dim).map(|_| rng.normal::<S>() * scale).collect()
}

fn add<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// Softmax over negative centroid distances, sharpened by `temp`.
fn centroid_softmax<S: Scalar>(
    point: &[S],
    centroids: &[Vec<S>],
    temp: S,
) -> Result<Distribution<S>> {
    let exponents: Vec<S> = centroids
        .iter()
        .map(|c| -euclidean(point, c) * temp)
        .collect();
    normalize(&log_sum_exp_weights(&exponents)?)
}

struct Generator<'a, S: Scalar> {
    cfg: &'a SynthConfig<S>,
    centroids: Vec<Vec<S>>,
    rng: SeededRng,
}

impl<'a, S: Scalar> Generator<'a, S> {
    fn view(&mut self, class: usize, offset: &[S]) -> Result<View<S>> {
        let sigma = self.cfg.noise_sigma;
        let dim = self.cfg.dim;
        let temp = self.cfg.miscalib_temp;
        let mut embedding = add(&self.centroids[class], offset);
        for (e, n) in embedding
            .iter_mut()
            .zip(normal_vec(&mut self.rng, dim, sigma))
        {
            *e = *e + n;
        }
        // The base model observes the embedding through its own, larger
        // noise, so retrieval over stored embeddings can genuinely beat it.
        let base_sigma = sigma * S::from_f64_lossy(BASE_NOISE_FACTOR);
        let base_point = add(&embedding, &normal_vec(&mut self.rng, dim, base_sigma));
        let base_dist = centroid_softmax(&base_point, &self.centroids, temp)?;
        // Content-free input: language offset with noise but no class signal.
        let cf_point = add(offset, &normal_vec(&mut self.rng, dim, sigma));
        let cf_dist = centroid_softmax(&cf_point, &self.centroids, temp)?;
        Ok(View {
            embedding,
            base_dist,
            cf_dist: Some(cf_dist),
        })
    }

    fn records(
        &mut self,
        prefix: &str,
        lang: &str,
        offset: &[S],
        split: Split,
        per_class: usize,
    ) -> Result<Vec<EmbeddingRecord<S>>> {
        let mut records = Vec::with_capacity(per_class * self.cfg.num_classes);
        for class in 0..self.cfg.num_classes {
            for shot in 0..per_class {
                let views = (0..self.cfg.views_per_record)
                    .map(|_| self.view(class, offset))
                    .collect::<Result<Vec<_>>>()?;
                records.push(EmbeddingRecord {
                    id: format!("{prefix}-{lang}-c{class}-{shot}"),
                    lang: lang.to_string(),
                    split,
                    label: Some(class),
                    views,
                });
            }
        }
        Ok(records)
    }
}

/// Deterministically generates the full corpus for `cfg`.
pub fn generate<S: Scalar>(cfg: &SynthConfig<S>) -> Result<SynthDataset<S>> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed).derive(stream::SYNTH);
    let centroids: Vec<Vec<S>> = (0..cfg.num_classes)
        .map(|_| normal_vec(&mut rng, cfg.dim, S::one()))
        .collect();
    let mut offsets = vec![vec![S::zero(); cfg.dim]];
    for _ in 1..cfg.languages.len() {
        offsets.push(normal_vec(&mut rng, cfg.dim, cfg.shift_sigma));
    }
    let mut gen = Generator {
        cfg,
        centroids,
        rng,
    };
    let source = cfg.languages[0].clone();
    let source_offset = offsets[0].clone();
    let train = gen.records("train", &source, &source_offset, Split::Train, cfg.shots)?;
    let dev = gen.records("dev", &source, &source_offset, Split::Dev, cfg.dev_shots)?;
    let mut tests = Vec::with_capacity(cfg.languages.len().saturating_sub(1));
    for (lang, offset) in cfg.languages[1..].iter().zip(&offsets[1..]) {
        tests.push((
            lang.clone(),
            gen.records("test", lang, offset, Split::Test, cfg.test_shots)?,
        ));
    }
    Ok(SynthDataset {
        label_space: cfg.label_space(),
        dim: cfg.dim,
        train,
        dev,
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;

    fn small_cfg() -> SynthConfig<f64> {
        SynthConfig {
            dim: 8,
            num_classes: 3,
            shots: 4,
            languages: vec!["en".into(), "de".into()],
            dev_shots: 2,
            test_shots: 3,
            views_per_record: 2,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn record_counts_follow_config() {
        let ds = generate(&small_cfg()).unwrap();
        assert_eq!(ds.train.len(), 12);
        assert_eq!(ds.dev.len(), 6);
        assert_eq!(ds.tests.len(), 1);
        assert_eq!(ds.tests[0].0, "de");
        assert_eq!(ds.tests[0].1.len(), 9);
        for r in &ds.train {
            assert_eq!(r.views.len(), 2);
            assert_eq!(r.lang, "en");
            assert!(r.label.unwrap() < 3);
        }
    }

    #[test]
    fn sixteen_shots_four_classes_give_64_train_records() {
        let cfg = SynthConfig::<f64> {
            shots: 16,
            num_classes: 4,
            languages: vec!["en".into()],
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.train.len(), 64);
        assert!(ds.tests.is_empty());
    }

    #[test]
    fn same_seed_gives_identical_datasets_and_files() {
        let cfg = small_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let da = tempfile::tempdir().unwrap();
        let db = tempfile::tempdir().unwrap();
        let pa = a.save(da.path()).unwrap();
        let pb = b.save(db.path()).unwrap();
        assert_eq!(pa.len(), 3);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut cfg = small_cfg();
        let a = generate(&cfg).unwrap();
        cfg.seed = 8;
        let b = generate(&cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn saved_files_round_trip_through_the_loader() {
        let ds = generate(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = ds.save(dir.path()).unwrap();
        let train = load_dataset::<f64>(&paths[0]).unwrap();
        assert_eq!(train.records, ds.train);
        assert_eq!(train.label_space, ds.label_space);
        assert_eq!(train.dim, 8);
        let test = load_dataset::<f64>(&paths[2]).unwrap();
        assert_eq!(test.records, ds.tests[0].1);
    }

    #[test]
    fn higher_miscalib_temp_strictly_increases_mean_confidence() {
        let mut prev = 0.0;
        for temp in [0.5, 1.0, 2.0, 4.0] {
            let cfg = SynthConfig::<f64> {
                miscalib_temp: temp,
                ..small_cfg()
            };
            let ds = generate(&cfg).unwrap();
            let confs: Vec<f64> = ds
                .train
                .iter()
                .flat_map(|r| r.views.iter().map(|v| v.base_dist.confidence()))
                .collect();
            let mean = confs.iter().sum::<f64>() / confs.len() as f64;
            assert!(
                mean > prev,
                "mean confidence {mean} not above {prev} at temp {temp}"
            );
            prev = mean;
        }
    }

    #[test]
    fn single_shot_is_rejected() {
        let cfg = SynthConfig::<f64> {
            shots: 1,
            ..small_cfg()
        };
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let base = small_cfg();
        let cases = [
            SynthConfig {
                languages: vec![],
                ..base.clone()
            },
            SynthConfig {
                languages: vec!["en".into(), "en".into()],
                ..base.clone()
            },
            SynthConfig {
                miscalib_temp: 0.0,
                ..base.clone()
            },
            SynthConfig {
                noise_sigma: -1.0,
                ..base.clone()
            },
            SynthConfig {
                num_classes: 1,
                ..base.clone()
            },
            SynthConfig {
                views_per_record: 0,
                ..base.clone()
            },
        ];
        for cfg in cases {
            assert!(generate(&cfg).is_err());
        }
    }

    #[test]
    fn zero_noise_and_shift_make_the_base_predictor_exact() {
        let cfg = SynthConfig::<f64> {
            noise_sigma: 0.0,
            shift_sigma: 0.0,
            miscalib_temp: 1.0,
            ..small_cfg()
        };
        let ds = generate(&cfg).unwrap();
        for r in ds.train.iter().chain(ds.tests[0].1.iter()) {
            for v in &r.views {
                assert_eq!(v.base_dist.argmax(), r.label.unwrap());
            }
        }
    }

    #[test]
    fn source_offset_is_zero_and_targets_are_shifted() {
        let cfg = SynthConfig::<f64> {
            noise_sigma: 0.0,
            shift_sigma: 3.0,
            ..small_cfg()
        };
        let ds = generate(&cfg).unwrap();
        // Noise-free source embeddings sit exactly on their class centroid,
        // so equal-class train and dev embeddings coincide.
        let t0 = &ds.train[0];
        let d0 = ds.dev.iter().find(|r| r.label == t0.label).unwrap();
        assert_eq!(t0.views[0].embedding, d0.views[0].embedding);
        // Target embeddings differ from source ones by the shared offset.
        let te = ds.tests[0].1.iter().find(|r| r.label == t0.label).unwrap();
        let diff0: Vec<f64> = te.views[0]
            .embedding
            .iter()
            .zip(&t0.views[0].embedding)
            .map(|(a, b)| a - b)
            .collect();
        let other = ds.tests[0]
            .1
            .iter()
            .filter(|r| r.label == t0.label)
            .nth(1)
            .unwrap();
        let diff1: Vec<f64> = other.views[1]
            .embedding
            .iter()
            .zip(&t0.views[0].embedding)
            .map(|(a, b)| a - b)
            .collect();
        assert!(diff0.iter().any(|d| d.abs() > 0.1));
        for (a, b) in diff0.iter().zip(&diff1) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
