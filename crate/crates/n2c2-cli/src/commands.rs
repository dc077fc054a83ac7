//! The six subcommands, each a thin layer of plumbing around the library.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use n2c2_core::dataset::load_dataset;
use n2c2_core::metrics::{
    temperature_apply, temperature_scale_fit, write_reliability_csv, DEFAULT_NUM_BINS,
};
use n2c2_core::model::{load_model, save_model};
use n2c2_core::pipeline::{
    base_predictions, build_inference_store, build_raw_store, ensure_compatible, evaluate_grouped,
    predict_records, train_pipeline, variant_predictor, BaseMode, Variant,
};
use n2c2_core::synthgen::generate;
use n2c2_core::{
    Dataset, Datastore, Distribution, GroupedEval, N2C2Model, Real, RetrievalConfig, SynthConfig,
    TrainOptions,
};

use crate::args::{
    need, pick, AblateArgs, EvaluateArgs, FileConfig, PredictArgs, SweepArgs, SynthArgs, TrainArgs,
    TrainFlags,
};

pub fn cmd_synth(args: &SynthArgs, file: &FileConfig) -> Result<()> {
    let out_dir = out_dir(args.out_dir.clone(), file)?;
    let base = SynthConfig::default();
    let langs = pick(
        args.langs.clone(),
        file.langs.clone(),
        base.languages.join(","),
    );
    let cfg = SynthConfig {
        dim: pick(args.dim, file.dim, base.dim),
        num_classes: pick(args.classes, file.classes, base.num_classes),
        shots: pick(args.shots, file.shots, base.shots),
        languages: langs.split(',').map(|s| s.trim().to_string()).collect(),
        noise_sigma: pick(args.noise_sigma, file.noise_sigma, base.noise_sigma),
        shift_sigma: pick(args.shift_sigma, file.shift_sigma, base.shift_sigma),
        miscalib_temp: pick(args.miscalib_temp, file.miscalib_temp, base.miscalib_temp),
        views_per_record: pick(args.views, file.views, base.views_per_record),
        dev_shots: pick(args.dev_shots, file.dev_shots, base.dev_shots),
        test_shots: pick(args.test_shots, file.test_shots, base.test_shots),
        seed: pick(args.seed, file.seed, base.seed),
    };
    let data = generate(&cfg)?;
    for path in data.save(&out_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, file: &FileConfig) -> Result<()> {
    let out_dir = out_dir(args.out_dir.clone(), file)?;
    let train = load_input(
        need(args.train.clone(), file.train.clone(), "train")?,
        "train",
    )?;
    let dev = load_input(need(args.dev.clone(), file.dev.clone(), "dev")?, "dev")?;
    let opts = train_options(&args.flags, file)?;
    let trained = train_pipeline(&train, &dev, &opts)?;
    report_warnings(&trained.warnings);
    for log in &trained.logs {
        println!(
            "epoch={} stage={} train_loss={:.6} dev_acc={:.6} dev_ece={:.6}",
            log.epoch, log.stage, log.train_loss, log.dev_acc, log.dev_ece
        );
    }
    let model_path = out_dir.join("model.json");
    save_model(&trained.model, &model_path)?;
    println!("wrote {}", model_path.display());
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs, file: &FileConfig) -> Result<()> {
    let out_dir = out_dir(args.out_dir.clone(), file)?;
    let model = load_model_input(need(args.model.clone(), file.model.clone(), "model")?)?;
    let train = load_input(
        need(args.train.clone(), file.train.clone(), "train")?,
        "train",
    )?;
    let data = load_input(need(args.data.clone(), file.data.clone(), "data")?, "data")?;
    ensure_compatible(&model, &data)?;
    let store = build_inference_store(&model, &train)?;
    let preds = predict_records(&model.predictor(), &store, &data.records)?;
    let mut out = String::new();
    for (record, pred) in data.records.iter().zip(&preds) {
        let row = serde_json::json!({
            "id": record.id,
            "lang": record.lang,
            "pred": data.label_space.name(pred.argmax()),
            "probs": pred.probs(),
        });
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    let path = out_dir.join("predictions.jsonl");
    fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

enum PredictorKind {
    N2c2,
    Base,
    BaseCc,
    BaseTs,
}

fn predictor_kind(name: Option<&str>) -> Result<PredictorKind> {
    match name.unwrap_or("n2c2") {
        "n2c2" => Ok(PredictorKind::N2c2),
        "base" => Ok(PredictorKind::Base),
        "base-cc" => Ok(PredictorKind::BaseCc),
        "base-ts" => Ok(PredictorKind::BaseTs),
        other => bail!("unknown predictor {other:?} (expected n2c2, base, base-cc, or base-ts)"),
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs, file: &FileConfig) -> Result<()> {
    let out_dir = out_dir(args.out_dir.clone(), file)?;
    let data = load_merged(&test_paths(&args.test, file))?;
    let num_bins = pick(args.num_bins, file.num_bins, DEFAULT_NUM_BINS);
    let kind = predictor_kind(args.predictor.as_deref().or(file.predictor.as_deref()))?;
    let preds = match kind {
        PredictorKind::N2c2 => {
            let model = load_model_input(need(args.model.clone(), file.model.clone(), "model")?)?;
            let train = load_input(
                need(args.train.clone(), file.train.clone(), "train")?,
                "train",
            )?;
            ensure_compatible(&model, &data)?;
            let store = build_inference_store(&model, &train)?;
            predict_records(&model.predictor(), &store, &data.records)?
        }
        PredictorKind::Base => base_predictions(&data.records, BaseMode::Raw)?,
        PredictorKind::BaseCc => base_predictions(&data.records, BaseMode::ContextCalibrated)?,
        PredictorKind::BaseTs => {
            let dev = load_input(need(args.dev.clone(), file.dev.clone(), "dev")?, "dev")?;
            let t = fit_temperature(&dev)?;
            base_predictions(&data.records, BaseMode::Raw)?
                .iter()
                .map(|d| temperature_apply(d, t))
                .collect::<n2c2_core::Result<Vec<_>>>()?
        }
    };
    let grouped = evaluate_grouped(&data.records, &preds, num_bins)?;
    write_reports(&out_dir, "metrics.json", "reliability.csv", &grouped)?;
    print_summary(&grouped);
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs, file: &FileConfig) -> Result<()> {
    let out_dir = out_dir(args.out_dir.clone(), file)?;
    let train = load_input(
        need(args.train.clone(), file.train.clone(), "train")?,
        "train",
    )?;
    let data = load_merged(&test_paths(&args.test, file))?;
    let num_bins = pick(args.num_bins, file.num_bins, DEFAULT_NUM_BINS);
    let opts = train_options(&args.flags, file)?;
    let fixed_m = opts.fixed_m;
    let lambda = opts.retrieval.lambda();

    let mut variants = vec![Variant::Full];
    let chosen = [
        (args.no_cd || file.no_cd.unwrap_or(false), Variant::NoCd),
        (
            args.raw_repr || file.raw_repr.unwrap_or(false),
            Variant::RawRepr,
        ),
        (args.no_dwe || file.no_dwe.unwrap_or(false), Variant::NoDwe),
    ];
    if chosen.iter().any(|(on, _)| *on) {
        variants.extend(chosen.iter().filter(|(on, _)| *on).map(|(_, v)| *v));
    } else {
        variants.extend(chosen.iter().map(|(_, v)| *v));
    }

    if args.retrain || file.retrain.unwrap_or(false) {
        let dev = load_input(need(args.dev.clone(), file.dev.clone(), "dev")?, "dev")?;
        for &variant in &variants {
            let mut vopts = opts.clone();
            vopts.variant = variant;
            let trained = train_pipeline(&train, &dev, &vopts)?;
            report_warnings(&trained.warnings);
            let store = variant_store(&trained.model, variant, &train)?;
            let grouped = score_variant(
                &trained.model,
                variant,
                fixed_m,
                lambda,
                &store,
                &data,
                num_bins,
            )?;
            report_variant(&out_dir, variant, &grouped)?;
        }
    } else {
        let model = load_model_input(need(args.model.clone(), file.model.clone(), "model")?)?;
        ensure_compatible(&model, &data)?;
        let shaped = build_inference_store(&model, &train)?;
        let raw = if variants.contains(&Variant::RawRepr) {
            Some(build_raw_store(&model, &train)?)
        } else {
            None
        };
        for &variant in &variants {
            let store = match variant {
                Variant::RawRepr => raw.as_ref().expect("raw store built for raw-repr"),
                _ => &shaped,
            };
            let grouped = score_variant(&model, variant, fixed_m, lambda, store, &data, num_bins)?;
            report_variant(&out_dir, variant, &grouped)?;
        }
    }
    Ok(())
}

pub fn cmd_sweep_kmax(args: &SweepArgs, file: &FileConfig) -> Result<()> {
    let out_dir = out_dir(args.out_dir.clone(), file)?;
    let train = load_input(
        need(args.train.clone(), file.train.clone(), "train")?,
        "train",
    )?;
    let dev = load_input(need(args.dev.clone(), file.dev.clone(), "dev")?, "dev")?;
    let data = load_merged(&test_paths(&args.test, file))?;
    let num_bins = pick(args.num_bins, file.num_bins, DEFAULT_NUM_BINS);
    let values = parse_values(&pick(
        args.values.clone(),
        file.values.clone(),
        "4,8,12,16".into(),
    ))?;
    let base_opts = train_options(&args.flags, file)?;

    let mut rows = Vec::with_capacity(values.len());
    for &k_max in &values {
        let started = Instant::now();
        let mut opts = base_opts.clone();
        opts.retrieval = RetrievalConfig::new(
            base_opts.retrieval.tau(),
            k_max,
            base_opts.retrieval.lambda(),
        )?;
        let trained = train_pipeline(&train, &dev, &opts)?;
        report_warnings(&trained.warnings);
        let store = build_inference_store(&trained.model, &train)?;
        let preds = predict_records(&trained.model.predictor(), &store, &data.records)?;
        let grouped = evaluate_grouped(&data.records, &preds, num_bins)?;
        println!(
            "k_max={k_max} accuracy={:.6} ece={:.6} runtime_s={:.3}",
            grouped.average.accuracy,
            grouped.average.ece,
            started.elapsed().as_secs_f64()
        );
        rows.push((k_max, grouped.average.accuracy, grouped.average.ece));
    }

    let mut csv = String::from("k_max,accuracy,ece\n");
    for (k_max, accuracy, ece) in rows {
        csv.push_str(&format!("{k_max},{accuracy},{ece}\n"));
    }
    let path = out_dir.join("sweep.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn out_dir(flag: Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    let dir = need(flag, file.out_dir.clone(), "out-dir")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_input(path: PathBuf, what: &str) -> Result<Dataset> {
    if !path.is_file() {
        bail!("{what} file {} does not exist", path.display());
    }
    load_dataset(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_model_input(path: PathBuf) -> Result<N2C2Model> {
    if !path.is_file() {
        bail!("model file {} does not exist", path.display());
    }
    load_model(&path).with_context(|| format!("loading {}", path.display()))
}

/// The command line overrides the config file's list as a whole.
fn test_paths(flag: &[PathBuf], file: &FileConfig) -> Vec<PathBuf> {
    if flag.is_empty() {
        file.test.clone().unwrap_or_default()
    } else {
        flag.to_vec()
    }
}

fn load_merged(paths: &[PathBuf]) -> Result<Dataset> {
    let mut merged: Option<Dataset> = None;
    for path in paths {
        let part = load_input(path.clone(), "test")?;
        match &mut merged {
            None => merged = Some(part),
            Some(all) => {
                if part.label_space != all.label_space {
                    bail!(
                        "label space in {} differs from the first test file",
                        path.display()
                    );
                }
                if part.dim != all.dim {
                    bail!(
                        "dim {} in {} differs from the first test file's {}",
                        part.dim,
                        path.display(),
                        all.dim
                    );
                }
                all.records.extend(part.records);
            }
        }
    }
    merged.ok_or_else(|| anyhow!("--test is required (flag or config key)"))
}

fn train_options(flags: &TrainFlags, file: &FileConfig) -> Result<TrainOptions> {
    let mut opts = TrainOptions::default();
    let retrieval = RetrievalConfig::default();
    opts.retrieval = RetrievalConfig::new(
        pick(flags.tau, file.tau, retrieval.tau()),
        pick(flags.k_max, file.k_max, retrieval.k_max()),
        pick(flags.lambda, file.lambda, retrieval.lambda()),
    )?;
    opts.z_dim = flags.z_dim.or(file.z_dim);
    opts.hidden = pick(flags.hidden, file.hidden, opts.hidden);
    opts.fixed_m = pick(flags.fixed_m, file.fixed_m, opts.fixed_m);
    opts.normalize_distances =
        flags.normalize_distances || file.normalize_distances.unwrap_or(false);
    opts.train.lr = pick(flags.lr, file.lr, opts.train.lr);
    opts.train.batch_size = pick(flags.batch_size, file.batch_size, opts.train.batch_size);
    opts.train.epochs = pick(flags.epochs, file.epochs, opts.train.epochs);
    opts.train.seed = pick(flags.seed, file.seed, opts.train.seed);
    Ok(opts)
}

fn parse_values(list: &str) -> Result<Vec<usize>> {
    let mut values = Vec::new();
    for part in list.split(',') {
        let value: usize = part
            .trim()
            .parse()
            .with_context(|| format!("bad k_max value {part:?}"))?;
        if value < 4 {
            bail!("k_max values must be at least 4, got {value}");
        }
        values.push(value);
    }
    Ok(values)
}

fn fit_temperature(dev: &Dataset) -> Result<Real> {
    let preds = base_predictions(&dev.records, BaseMode::Raw)?;
    let mut pairs = Vec::with_capacity(preds.len());
    for (record, pred) in dev.records.iter().zip(preds) {
        let gold = record
            .label
            .ok_or_else(|| anyhow!("record {} has no label", record.id))?;
        pairs.push((pred, gold));
    }
    Ok(temperature_scale_fit(&pairs)?)
}

fn variant_store(model: &N2C2Model, variant: Variant, train: &Dataset) -> Result<Datastore> {
    match variant {
        Variant::RawRepr => Ok(build_raw_store(model, train)?),
        _ => Ok(build_inference_store(model, train)?),
    }
}

fn score_variant(
    model: &N2C2Model,
    variant: Variant,
    fixed_m: usize,
    lambda: Real,
    store: &Datastore,
    data: &Dataset,
    num_bins: usize,
) -> Result<GroupedEval> {
    let predictor = variant_predictor(model, variant, fixed_m, lambda);
    let preds: Vec<Distribution> = predict_records(&predictor, store, &data.records)?;
    Ok(evaluate_grouped(&data.records, &preds, num_bins)?)
}

fn report_variant(out_dir: &Path, variant: Variant, grouped: &GroupedEval) -> Result<()> {
    let name = variant.as_str();
    write_reports(
        out_dir,
        &format!("metrics_{name}.json"),
        &format!("reliability_{name}.csv"),
        grouped,
    )?;
    println!(
        "variant={name} avg_accuracy={:.4} avg_ece={:.4}",
        grouped.average.accuracy, grouped.average.ece
    );
    Ok(())
}

fn write_reports(dir: &Path, json_name: &str, csv_name: &str, grouped: &GroupedEval) -> Result<()> {
    let json_path = dir.join(json_name);
    let mut text = serde_json::to_string_pretty(grouped)?;
    text.push('\n');
    fs::write(&json_path, text).with_context(|| format!("writing {}", json_path.display()))?;
    let csv_path = dir.join(csv_name);
    let mut csv = Vec::new();
    write_reliability_csv(&mut csv, &grouped.overall)?;
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn report_warnings(warnings: &[String]) {
    for warning in warnings {
        eprintln!("warning: {warning}");
    }
}

fn print_summary(grouped: &GroupedEval) {
    for (lang, result) in &grouped.languages {
        println!(
            "lang={lang} n={} accuracy={:.4} ece={:.4}",
            result.n, result.accuracy, result.ece
        );
    }
    println!(
        "avg accuracy={:.4} ece={:.4} over {} language(s)",
        grouped.average.accuracy, grouped.average.ece, grouped.average.languages
    );
}
