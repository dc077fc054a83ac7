//! Accuracy, expected calibration error, reliability-diagram data, and the
//! classical post-hoc calibration baselines (temperature scaling, label
//! smoothing, contextual calibration).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{log_sum_exp_weights, normalize, Distribution};
use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Standard bin count in the calibration literature.
pub const DEFAULT_NUM_BINS: usize = 10;

/// Probabilities below this are clamped before taking logs.
const LOG_FLOOR: f64 = 1e-300;

/// One equal-width confidence bin over (lower, upper].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BinStat<S: Scalar> {
    pub lower: S,
    pub upper: S,
    pub count: usize,
    pub mean_confidence: S,
    pub accuracy: S,
}

/// Accuracy and ECE over a prediction set, with per-bin reliability data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EvalResult<S: Scalar> {
    pub accuracy: S,
    pub ece: S,
    pub n: usize,
    pub num_bins: usize,
    pub bins: Vec<BinStat<S>>,
}

/// Accuracy and ECE of predictions against gold labels. Confidence is the
/// max probability; bins are equal-width and right-inclusive over (0, 1].
pub fn evaluate<S: Scalar>(
    preds: &[(Distribution<S>, usize)],
    num_bins: usize,
) -> Result<EvalResult<S>> {
    if preds.is_empty() {
        return Err(Error::EmptyPreds);
    }
    if num_bins == 0 {
        return Err(Error::InvalidConfig("num_bins must be at least 1".into()));
    }
    let mut counts = vec![0usize; num_bins];
    let mut conf_sums = vec![S::zero(); num_bins];
    let mut correct_sums = vec![S::zero(); num_bins];
    let mut correct_total = 0usize;
    for (dist, gold) in preds {
        let conf = dist.confidence();
        let correct = dist.argmax() == *gold;
        // ceil(conf * B) - 1 maps (0, 1] onto right-inclusive bins.
        let raw = (conf.to_f64_lossy() * num_bins as f64).ceil() as isize - 1;
        let idx = raw.clamp(0, num_bins as isize - 1) as usize;
        counts[idx] += 1;
        conf_sums[idx] = conf_sums[idx] + conf;
        if correct {
            correct_sums[idx] = correct_sums[idx] + S::one();
            correct_total += 1;
        }
    }
    let n = preds.len();
    let n_s = cast::<S>(n as f64);
    let mut ece = S::zero();
    let mut bins = Vec::with_capacity(num_bins);
    for b in 0..num_bins {
        let lower = cast::<S>(b as f64 / num_bins as f64);
        let upper = cast::<S>((b + 1) as f64 / num_bins as f64);
        if counts[b] == 0 {
            bins.push(BinStat {
                lower,
                upper,
                count: 0,
                mean_confidence: S::zero(),
                accuracy: S::zero(),
            });
            continue;
        }
        let size = cast::<S>(counts[b] as f64);
        let mean_conf = conf_sums[b] / size;
        let acc = correct_sums[b] / size;
        ece = ece + (size / n_s) * (acc - mean_conf).abs();
        bins.push(BinStat {
            lower,
            upper,
            count: counts[b],
            mean_confidence: mean_conf,
            accuracy: acc,
        });
    }
    Ok(EvalResult {
        accuracy: cast::<S>(correct_total as f64) / n_s,
        ece,
        n,
        num_bins,
        bins,
    })
}

/// Reliability-diagram rows: bin_lower, bin_upper, count, mean_conf, acc.
pub fn write_reliability_csv<S: Scalar, W: Write>(
    mut out: W,
    result: &EvalResult<S>,
) -> Result<()> {
    writeln!(out, "bin_lower,bin_upper,count,mean_conf,acc")?;
    for bin in &result.bins {
        writeln!(
            out,
            "{},{},{},{},{}",
            bin.lower, bin.upper, bin.count, bin.mean_confidence, bin.accuracy
        )?;
    }
    Ok(())
}

/// Dev-NLL-minimizing temperature for `softmax(log p / T)`, found by
/// golden-section search over the inverse temperature. The NLL is convex in
/// the inverse temperature, so the search converges to the global optimum.
pub fn temperature_scale_fit<S: Scalar>(dev_preds: &[(Distribution<S>, usize)]) -> Result<S> {
    if dev_preds.is_empty() {
        return Err(Error::EmptyDev);
    }
    let log_probs: Vec<(Vec<f64>, usize)> = dev_preds
        .iter()
        .map(|(dist, gold)| {
            if *gold >= dist.len() {
                return Err(Error::InvalidConfig(format!(
                    "gold label {gold} out of range for {} classes",
                    dist.len()
                )));
            }
            let logs = dist
                .probs()
                .iter()
                .map(|p| p.to_f64_lossy().max(LOG_FLOOR).ln())
                .collect();
            Ok((logs, *gold))
        })
        .collect::<Result<_>>()?;
    let nll = |beta: f64| -> f64 {
        log_probs
            .iter()
            .map(|(logs, gold)| {
                let max = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(beta * b));
                let lse = max
                    + logs
                        .iter()
                        .map(|&l| (beta * l - max).exp())
                        .sum::<f64>()
                        .ln();
                lse - beta * logs[*gold]
            })
            .sum()
    };
    let (mut lo, mut hi) = (1e-2, 1e2);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (nll(x1), nll(x2));
    for _ in 0..200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = nll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = nll(x2);
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    let beta = 0.5 * (lo + hi);
    Ok(cast(1.0 / beta))
}

/// `softmax(log p / T)`. T = 1 is the exact identity.
pub fn temperature_apply<S: Scalar>(dist: &Distribution<S>, t: S) -> Result<Distribution<S>> {
    if !(t > S::zero()) || !t.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    if t == S::one() {
        return Ok(dist.clone());
    }
    let exponents: Vec<S> = dist
        .probs()
        .iter()
        .map(|p| {
            let clamped = if *p > cast(LOG_FLOOR) {
                *p
            } else {
                cast(LOG_FLOOR)
            };
            clamped.ln() / t
        })
        .collect();
    normalize(&log_sum_exp_weights(&exponents)?)
}

/// Smoothed one-hot target: gold gets `1 - eps + eps / C`, others `eps / C`.
pub fn label_smooth<S: Scalar>(
    gold: usize,
    num_classes: usize,
    epsilon: S,
) -> Result<Distribution<S>> {
    if !epsilon.is_finite() || epsilon < S::zero() || epsilon >= S::one() {
        return Err(Error::InvalidEpsilon {
            value: epsilon.to_f64_lossy(),
        });
    }
    if gold >= num_classes {
        return Err(Error::InvalidConfig(format!(
            "gold label {gold} out of range for {num_classes} classes"
        )));
    }
    let share = epsilon / cast(num_classes as f64);
    let mut probs = vec![share; num_classes];
    probs[gold] = probs[gold] + (S::one() - epsilon);
    Distribution::new(probs)
}

/// Divides the prediction by the content-free distribution elementwise and
/// renormalizes, removing the base model's context-free label preference.
pub fn contextual_calibrate<S: Scalar>(
    pred: &Distribution<S>,
    cf: &Distribution<S>,
) -> Result<Distribution<S>> {
    if pred.len() != cf.len() {
        return Err(Error::LengthMismatch {
            context: "contextual_calibrate".into(),
            left: pred.len(),
            right: cf.len(),
        });
    }
    for (class, p) in cf.probs().iter().enumerate() {
        if !(*p > S::zero()) {
            return Err(Error::ZeroContentFreeProb { class });
        }
    }
    let ratios: Vec<S> = pred
        .probs()
        .iter()
        .zip(cf.probs())
        .map(|(p, c)| *p / *c)
        .collect();
    normalize(&ratios)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> Distribution<f64> {
        Distribution::new(p.to_vec()).unwrap()
    }

    /// Prediction whose max probability is `conf`, correct iff `correct`.
    fn pred(conf: f64, correct: bool) -> (Distribution<f64>, usize) {
        let d = dist(&[conf, 1.0 - conf]);
        let gold = if correct { 0 } else { 1 };
        (d, gold)
    }

    #[test]
    fn perfect_one_hot_predictions_have_zero_ece() {
        let preds = vec![(dist(&[1.0, 0.0]), 0), (dist(&[0.0, 1.0]), 1)];
        let r = evaluate(&preds, 10).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.ece, 0.0);
    }

    #[test]
    fn four_sample_two_bin_fixture_gives_exact_ece() {
        // Confidences [0.9, 0.8, 0.6, 0.2], correctness [1, 1, 0, 0].
        // Bin (0, .5]: |0 - 0.2| * 1/4 = 0.05.
        // Bin (.5, 1]: |2/3 - 23/30| * 3/4 = 0.075. Total 0.125.
        // Confidence 0.2 needs five classes; a uniform 5-way prediction
        // picks class 0 on the tie and gold 1 makes it wrong.
        let preds = vec![
            pred(0.9, true),
            pred(0.8, true),
            pred(0.6, false),
            (dist(&[0.2, 0.2, 0.2, 0.2, 0.2]), 1),
        ];
        let r = evaluate(&preds, 2).unwrap();
        assert!((r.ece - 0.125).abs() < 1e-12, "ece {}", r.ece);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn single_wrong_prediction_ece_is_its_confidence() {
        let r = evaluate(&[pred(0.7, false)], 10).unwrap();
        assert!((r.ece - 0.7).abs() < 1e-12);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn calibrated_bin_has_zero_ece() {
        // Four predictions at confidence 0.75, three of them correct.
        let preds = vec![
            pred(0.75, true),
            pred(0.75, true),
            pred(0.75, true),
            pred(0.75, false),
        ];
        let r = evaluate(&preds, 10).unwrap();
        assert!(r.ece < 1e-12);
    }

    #[test]
    fn bin_boundaries_are_right_inclusive() {
        // Confidence exactly 0.5 lands in (0.4, 0.5] with 10 bins.
        let r = evaluate(&[pred(0.5, true)], 10).unwrap();
        let occupied: Vec<usize> = r
            .bins
            .iter()
            .enumerate()
            .filter(|(_, b)| b.count > 0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(occupied, vec![4]);
    }

    #[test]
    fn evaluate_is_permutation_invariant() {
        let mut preds = vec![
            pred(0.9, true),
            pred(0.55, false),
            pred(0.7, true),
            pred(0.61, false),
        ];
        let a = evaluate(&preds, 10).unwrap();
        preds.reverse();
        let b = evaluate(&preds, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bin_counts_sum_to_n_and_ece_recomputes_from_bins() {
        let preds = vec![
            pred(0.9, true),
            pred(0.8, false),
            pred(0.3, true),
            pred(0.55, false),
            pred(0.62, true),
        ];
        let r = evaluate(&preds, 10).unwrap();
        let total: usize = r.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, r.n);
        let recomputed: f64 = r
            .bins
            .iter()
            .map(|b| (b.count as f64 / r.n as f64) * (b.accuracy - b.mean_confidence).abs())
            .sum();
        assert!((recomputed - r.ece).abs() < 1e-15);
    }

    #[test]
    fn empty_predictions_rejected() {
        assert!(matches!(evaluate::<f64>(&[], 10), Err(Error::EmptyPreds)));
    }

    #[test]
    fn reliability_csv_has_header_and_all_bins() {
        let r = evaluate(&[pred(0.9, true)], 4).unwrap();
        let mut buf = Vec::new();
        write_reliability_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "bin_lower,bin_upper,count,mean_conf,acc");
        assert_eq!(lines[4], "0.75,1,1,0.9,1");
    }

    #[test]
    fn temperature_one_is_exact_identity() {
        let d = dist(&[0.2, 0.5, 0.3]);
        let out = temperature_apply(&d, 1.0).unwrap();
        assert_eq!(out.probs(), d.probs());
    }

    #[test]
    fn temperature_apply_matches_power_oracle() {
        let d = dist(&[0.7, 0.2, 0.1]);
        let t = 2.0;
        let out = temperature_apply(&d, t).unwrap();
        let powered: Vec<f64> = d.probs().iter().map(|p| p.powf(1.0 / t)).collect();
        let total: f64 = powered.iter().sum();
        for (a, e) in out.probs().iter().zip(&powered) {
            assert!((a - e / total).abs() < 1e-12);
        }
    }

    #[test]
    fn temperature_never_changes_argmax() {
        let d = dist(&[0.5, 0.3, 0.2]);
        for t in [0.2, 0.5, 1.0, 3.0, 20.0] {
            assert_eq!(temperature_apply(&d, t).unwrap().argmax(), d.argmax());
        }
    }

    /// Synthetic two-class set whose confidences match empirical accuracy.
    fn calibrated_dev() -> Vec<(Distribution<f64>, usize)> {
        let mut preds = Vec::new();
        for &conf in &[0.6f64, 0.7, 0.8, 0.9] {
            // Out of 10 predictions at this confidence, make the right
            // fraction correct.
            let correct = (conf * 10.0).round() as usize;
            for i in 0..10 {
                preds.push(pred(conf, i < correct));
            }
        }
        preds
    }

    #[test]
    fn calibrated_dev_set_fits_temperature_near_one() {
        let t = temperature_scale_fit(&calibrated_dev()).unwrap();
        assert!((0.9..=1.1).contains(&t), "fitted T {t}");
    }

    #[test]
    fn overconfident_predictor_fits_temperature_near_three() {
        let preds: Vec<(Distribution<f64>, usize)> = calibrated_dev()
            .into_iter()
            .map(|(d, gold)| {
                let sharp: Vec<f64> = d.probs().iter().map(|p| p.powf(3.0)).collect();
                (normalize(&sharp).unwrap(), gold)
            })
            .collect();
        let t = temperature_scale_fit(&preds).unwrap();
        assert!((2.5..=3.5).contains(&t), "fitted T {t}");
        let before = evaluate(&preds, 10).unwrap();
        let after: Vec<(Distribution<f64>, usize)> = preds
            .iter()
            .map(|(d, g)| (temperature_apply(d, t).unwrap(), *g))
            .collect();
        let after = evaluate(&after, 10).unwrap();
        assert!(after.ece < before.ece);
        assert_eq!(after.accuracy, before.accuracy);
    }

    #[test]
    fn empty_dev_set_rejected() {
        assert!(matches!(
            temperature_scale_fit::<f64>(&[]),
            Err(Error::EmptyDev)
        ));
    }

    #[test]
    fn label_smooth_matches_formula() {
        let d: Distribution<f64> = label_smooth(0, 2, 0.2).unwrap();
        assert!((d.get(0) - 0.9).abs() < 1e-15);
        assert!((d.get(1) - 0.1).abs() < 1e-15);
        let unsmoothed = label_smooth(1, 3, 0.0).unwrap();
        assert_eq!(unsmoothed.probs(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn label_smooth_rejects_bad_epsilon() {
        assert!(matches!(
            label_smooth::<f64>(0, 2, 1.0),
            Err(Error::InvalidEpsilon { .. })
        ));
        assert!(matches!(
            label_smooth::<f64>(0, 2, -0.1),
            Err(Error::InvalidEpsilon { .. })
        ));
    }

    #[test]
    fn contextual_calibrate_matches_hand_arithmetic() {
        let out = contextual_calibrate(&dist(&[0.6, 0.4]), &dist(&[0.75, 0.25])).unwrap();
        assert!((out.get(0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.get(1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_content_free_is_identity() {
        let p = dist(&[0.2, 0.5, 0.3]);
        let out = contextual_calibrate(&p, &Distribution::uniform(3).unwrap()).unwrap();
        for (a, b) in out.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn content_free_equal_to_prediction_gives_uniform() {
        let p = dist(&[0.2, 0.5, 0.3]);
        let out = contextual_calibrate(&p, &p).unwrap();
        for x in out.probs() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_content_free_probability_rejected() {
        assert!(matches!(
            contextual_calibrate(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])),
            Err(Error::ZeroContentFreeProb { class: 1 })
        ));
    }
}
