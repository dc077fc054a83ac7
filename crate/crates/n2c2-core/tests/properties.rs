//! Property tests for the invariants the modules promise: outputs stay
//! normalized, evaluation ignores order, scaling keeps the argmax, and the
//! structural helpers hold their documented shapes.

use proptest::collection::vec;
use proptest::prelude::*;

use n2c2_core::adaptive::{candidate_sizes, combine};
use n2c2_core::confidence::{cd_distribution, neighbor_features, padded_input};
use n2c2_core::linalg::Mat;
use n2c2_core::metrics::{contextual_calibrate, evaluate, label_smooth, temperature_apply};
use n2c2_core::retrieval::{interpolate, knn_distribution, search};
use n2c2_core::{Datastore, DatastoreEntry, Distribution, DweNetwork, SeededRng, ShapingLayer};

fn dist_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.05f64..1.0, n).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect()
    })
}

fn preds() -> impl Strategy<Value = Vec<(Distribution, usize)>> {
    (2usize..6).prop_flat_map(|c| {
        vec(
            (dist_vec(c), 0..c).prop_map(|(p, y)| (Distribution::new(p).unwrap(), y)),
            1..40,
        )
    })
}

fn store_and_query() -> impl Strategy<Value = (Datastore, Vec<f64>, usize, f64, f64)> {
    (1usize..5, 1usize..20, 2usize..5).prop_flat_map(|(dim, n, c)| {
        (
            vec(vec(-3.0f64..3.0, dim), n..=n),
            vec(0usize..c, n..=n),
            vec(0.05f64..0.95, n..=n),
            vec(-3.0f64..3.0, dim),
            1usize..24,
            0.3f64..6.0,
            0.1f64..4.0,
        )
            .prop_map(move |(keys, labels, sps, query, k, tau, t)| {
                let entries: Vec<DatastoreEntry> = keys
                    .into_iter()
                    .enumerate()
                    .map(|(i, key)| DatastoreEntry {
                        id: format!("p{i}"),
                        key,
                        label: labels[i],
                        self_prob: sps[i],
                    })
                    .collect();
                let store = Datastore::new(entries, c, false).unwrap();
                (store, query, k, tau, t)
            })
    })
}

fn is_normalized(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

proptest! {
    #[test]
    fn evaluation_stays_in_the_unit_interval_and_ignores_order(
        preds in preds(),
        seed in 0u64..1 << 48,
    ) {
        let r = evaluate(&preds, 10).unwrap();
        prop_assert!(r.ece >= 0.0 && r.ece <= 1.0);
        prop_assert!(r.accuracy >= 0.0 && r.accuracy <= 1.0);
        let mut shuffled = preds.clone();
        SeededRng::new(seed).shuffle(&mut shuffled);
        let s = evaluate(&shuffled, 10).unwrap();
        prop_assert_eq!(r.accuracy, s.accuracy);
        prop_assert!((r.ece - s.ece).abs() <= 1e-12);
    }

    #[test]
    fn temperature_scaling_preserves_the_argmax(
        p in (2usize..6).prop_flat_map(dist_vec),
        t in 0.05f64..20.0,
    ) {
        let d = Distribution::new(p).unwrap();
        let scaled = temperature_apply(&d, t).unwrap();
        prop_assert_eq!(d.argmax(), scaled.argmax());
        prop_assert!(is_normalized(scaled.probs()));
    }

    #[test]
    fn contextual_calibration_with_a_uniform_cf_is_identity(
        p in (2usize..6).prop_flat_map(dist_vec),
    ) {
        let d = Distribution::new(p).unwrap();
        let cf = Distribution::uniform(d.len()).unwrap();
        let out = contextual_calibrate(&d, &cf).unwrap();
        let worst = d
            .probs()
            .iter()
            .zip(out.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn retrieval_is_sorted_and_its_distributions_are_normalized(
        (store, query, k, tau, t) in store_and_query(),
    ) {
        let ns = search(&store, &query, k).unwrap();
        prop_assert_eq!(ns.len(), k.min(store.len()));
        for w in ns.neighbors().windows(2) {
            prop_assert!(w[0].distance <= w[1].distance);
        }
        prop_assert!(ns.neighbors().iter().all(|n| n.distance >= 0.0));
        for m in [1, ns.len()] {
            let knn = knn_distribution(&ns, m, tau, store.num_classes()).unwrap();
            prop_assert!(is_normalized(knn.probs()));
            let biases = vec![0.3; ns.len()];
            let cd = cd_distribution(&ns, m, tau, t, &biases, store.num_classes()).unwrap();
            prop_assert!(is_normalized(cd.probs()));
        }
    }

    #[test]
    fn padded_features_fill_the_fixed_width_with_the_worst_distance(
        (store, query, k, _tau, _t) in store_and_query(),
    ) {
        let ns = search(&store, &query, k).unwrap();
        let base = Distribution::uniform(store.num_classes()).unwrap();
        let feats = neighbor_features(&ns, &base).unwrap();
        let k_max = k.max(ns.len());
        for m in [1, ns.len()] {
            let f = padded_input(&feats, m, k_max, None).unwrap();
            prop_assert_eq!(f.len(), 2 * k_max);
            let sentinel = *feats.distances.last().unwrap();
            for i in m..k_max {
                prop_assert_eq!(f[i], sentinel);
                prop_assert_eq!(f[k_max + i], feats.distinct_label_counts[m - 1]);
            }
        }
    }

    #[test]
    fn interpolation_stays_between_its_endpoints(
        (a, b) in (2usize..6).prop_flat_map(|c| (dist_vec(c), dist_vec(c))),
        lambda in 0.0f64..=1.0,
    ) {
        let da = Distribution::new(a).unwrap();
        let db = Distribution::new(b).unwrap();
        let out = interpolate(&da, &db, lambda).unwrap();
        for ((&x, &y), &z) in da.probs().iter().zip(db.probs()).zip(out.probs()) {
            prop_assert!(z >= x.min(y) - 1e-15 && z <= x.max(y) + 1e-15);
        }
    }

    #[test]
    fn candidate_sizes_start_at_zero_and_step_by_four_up_to_the_cap(
        k_max in 0usize..40,
        store in 0usize..80,
    ) {
        let sizes = candidate_sizes(k_max, store);
        prop_assert_eq!(sizes[0], 0);
        for w in sizes.windows(2) {
            prop_assert_eq!(w[1] - w[0], 4);
        }
        let cap = k_max.min(store);
        prop_assert!(*sizes.last().unwrap() <= cap);
        prop_assert!(sizes.last().unwrap() + 4 > cap);
    }

    #[test]
    fn gate_weights_are_convex_and_combine_keeps_a_distribution(
        seed in 0u64..1 << 48,
        k_max in 1usize..10,
        hidden in 1usize..6,
        c in 2usize..5,
        scale in 0.1f64..3.0,
    ) {
        let mut rng = SeededRng::new(seed);
        let options = candidate_sizes(k_max, 32).len();
        let rand_mat = |rng: &mut SeededRng, r: usize, cols: usize| {
            Mat::from_rows((0..r).map(|_| (0..cols).map(|_| rng.normal::<f64>() * 0.5).collect()).collect()).unwrap()
        };
        let gate = DweNetwork::from_parts(
            rand_mat(&mut rng, hidden, 2 * k_max),
            rand_mat(&mut rng, options, hidden),
        )
        .unwrap();
        let f: Vec<f64> = (0..2 * k_max).map(|_| rng.normal::<f64>() * scale).collect();
        let w = gate.weights(&f).unwrap();
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let uniform_in_c = |rng: &mut SeededRng| {
            let raw: Vec<f64> = (0..c).map(|_| rng.uniform_in::<f64>(0.05, 1.0)).collect();
            let total: f64 = raw.iter().sum();
            Distribution::new(raw.iter().map(|v| v / total).collect()).unwrap()
        };
        let base = uniform_in_c(&mut rng);
        let per: Vec<Distribution> = (1..options).map(|_| uniform_in_c(&mut rng)).collect();
        let mixed = combine(&w, &base, &per).unwrap();
        prop_assert!(is_normalized(mixed.probs()));
    }

    #[test]
    fn label_smoothing_peaks_at_gold_and_stays_normalized(
        (c, gold) in (2usize..6).prop_flat_map(|c| (Just(c), 0..c)),
        eps in 0.0f64..0.8,
    ) {
        let d: Distribution = label_smooth(gold, c, eps).unwrap();
        prop_assert_eq!(d.argmax(), gold);
        prop_assert!(is_normalized(d.probs()));
    }

    #[test]
    fn identity_shaping_returns_the_embedding_unchanged(
        h in vec(-5.0f64..5.0, 1..12),
    ) {
        let layer = ShapingLayer::identity(h.len());
        prop_assert_eq!(layer.shape(&h).unwrap(), h);
    }
}
