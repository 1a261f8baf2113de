use ascertain_core::likelihood::{complete_loglik_counts, observed_loglik_counts};
use ascertain_core::rasch::{self, n_pairs, CaptureModel, RaschParams};
use ascertain_core::report::{num, Report};
use ascertain_core::tables::{aggregate, read_aggregated, write_aggregated, RecordRow};
use ascertain_core::threesided::{decide_with_quantiles, Quantiles};
use ascertain_core::{CapturePattern, Completeness, ContingencyTable};
use proptest::prelude::*;

fn params_strategy(max_lists: usize) -> impl Strategy<Value = (RaschParams, f64)> {
    (1..=max_lists).prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec(-2.0..2.0f64, n_pairs(n)),
            -2.0..2.0f64,
            any::<bool>(),
        )
            .prop_map(|(alpha, alpha2, shift, dynamic)| {
                let p = if dynamic {
                    RaschParams::dynamic(alpha, alpha2, 0.0)
                } else {
                    RaschParams::independent(alpha, 0.0)
                };
                (p.unwrap(), shift)
            })
    })
}

fn quantiles_strategy() -> impl Strategy<Value = Quantiles> {
    prop::collection::vec(-1.0..1.0f64, 4).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        Quantiles { lower_half: v[0], lower: v[1], upper: v[2], upper_half: v[3] }
    })
}

/// Applies a permutation of the lists to a pattern index.
fn permute_index(index: usize, n: usize, perm: &[usize]) -> usize {
    let p = CapturePattern::from_index(index, n);
    let bits: Vec<u8> = (0..n).map(|k| u8::from(p.captured(perm[k]))).collect();
    CapturePattern::new(&bits).unwrap().index()
}

proptest! {
    #[test]
    fn cell_probabilities_sum_to_one((params, shift) in params_strategy(8)) {
        let total: f64 = rasch::cell_probabilities(&params, shift).iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "{}", total);
    }

    #[test]
    fn zero_interactions_reduce_to_independence(
        alpha in prop::collection::vec(-3.0..3.0f64, 1..7),
        shift in -2.0..2.0f64,
    ) {
        let n = alpha.len();
        let dynamic = RaschParams::dynamic(alpha.clone(), vec![0.0; n_pairs(n)], 0.0).unwrap();
        let independent = RaschParams::independent(alpha, 0.0).unwrap();
        let a = rasch::cell_probabilities(&dynamic, shift);
        let b = rasch::cell_probabilities(&independent, shift);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn miss_probability_falls_as_capture_strength_rises(
        (params, shift) in params_strategy(6),
        step in 1e-3..1.0f64,
        k in 0usize..6,
    ) {
        let p0 = rasch::miss_probability(&params, shift);
        prop_assert!(rasch::miss_probability(&params, shift + step) < p0);
        let k = k % params.n_lists();
        let mut alpha = params.alpha().to_vec();
        alpha[k] += step;
        let stronger = RaschParams::new(alpha, params.alpha2().to_vec(), 0.0, params.model()).unwrap();
        prop_assert!(rasch::miss_probability(&stronger, shift) < p0);
    }

    #[test]
    fn independent_model_ignores_list_order(
        alpha in prop::collection::vec(-2.0..2.0f64, 2..6),
        shift in -1.0..1.0f64,
        seed in any::<u64>(),
        counts_seed in prop::collection::vec(0u32..40, 64),
    ) {
        let n = alpha.len();
        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle driven by the seed
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let params = RaschParams::independent(alpha.clone(), 0.0).unwrap();
        let permuted = RaschParams::independent(perm.iter().map(|&k| alpha[k]).collect(), 0.0).unwrap();
        let counts: Vec<f64> = (0..1usize << n).map(|i| f64::from(counts_seed[i % 64])).collect();
        let mut moved = vec![0.0; counts.len()];
        for (i, &c) in counts.iter().enumerate() {
            moved[permute_index(i, n, &perm)] = c;
        }
        let a = complete_loglik_counts(&counts, &params, shift);
        let b = complete_loglik_counts(&moved, &permuted, shift);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let (mut co, mut mo) = (counts.clone(), moved.clone());
        co[0] = 0.0;
        mo[0] = 0.0;
        let a = observed_loglik_counts(&co, 250.0, &params, shift);
        let b = observed_loglik_counts(&mo, 250.0, &permuted, shift);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn aggregation_preserves_totals(
        rows in prop::collection::vec((any::<bool>(), prop::collection::vec(0u8..=1, 3)), 1..200),
    ) {
        let records: Vec<RecordRow> = rows
            .into_iter()
            .filter(|(_, m)| m.iter().any(|&b| b == 1))
            .map(|(e, m)| RecordRow { exposure: if e { "E".into() } else { "U".into() }, memberships: m })
            .collect();
        let groups = aggregate(&records, 3).unwrap();
        let total: u64 = groups.values().map(|t| t.total()).sum();
        prop_assert_eq!(total as usize, records.len());
        for (label, table) in &groups {
            let mine: Vec<&RecordRow> = records.iter().filter(|r| &r.exposure == label).collect();
            let margins = table.list_margins();
            for k in 0..3 {
                let on_list = mine.iter().filter(|r| r.memberships[k] == 1).count() as u64;
                prop_assert_eq!(margins[k], on_list);
            }
        }
    }

    #[test]
    fn aggregated_csv_round_trips(cells in prop::collection::vec(0u64..10_000, 14)) {
        let e = ContingencyTable::from_dense(
            "E", 3, Completeness::MissingAllZero,
            std::iter::once(0).chain(cells[..7].iter().copied()).collect(),
        ).unwrap();
        let u = ContingencyTable::from_dense(
            "U", 3, Completeness::MissingAllZero,
            std::iter::once(0).chain(cells[7..].iter().copied()).collect(),
        ).unwrap();
        let mut buf = Vec::new();
        write_aggregated(&mut buf, [&e, &u]).unwrap();
        let back = read_aggregated(buf.as_slice()).unwrap();
        prop_assert_eq!(back.get("E").unwrap().dense(), e.dense());
        prop_assert_eq!(back.get("U").unwrap().dense(), u.dense());
    }

    #[test]
    fn report_numbers_round_trip(values in prop::collection::vec(any::<f64>(), 1..20), key in "[a-z_]{1,12}") {
        let mut r = Report::new();
        r.add_pairs("values", values.iter().enumerate().map(|(i, v)| (format!("{key}{i}"), num(*v))));
        r.add_table("rows", &["value"], values.iter().map(|v| vec![num(*v)]).collect());
        let back = Report::parse(&r.render()).unwrap();
        let (_, rows) = back.table("rows").unwrap();
        for (i, v) in values.iter().enumerate() {
            let a: f64 = back.get("values", &format!("{key}{i}")).unwrap().parse().unwrap();
            let b: f64 = rows[i][0].parse().unwrap();
            prop_assert!(a.to_bits() == v.to_bits() || (a.is_nan() && v.is_nan()));
            prop_assert!(b.to_bits() == v.to_bits() || (b.is_nan() && v.is_nan()));
        }
    }

    #[test]
    fn decisions_are_monotone_in_the_margin(
        theta in -1.0..1.0f64,
        q in quantiles_strategy(),
        d in 0.0..1.0f64,
        extra in 0.0..1.0f64,
    ) {
        let a = decide_with_quantiles(theta, q, 0.05, d).unwrap().decisions;
        let b = decide_with_quantiles(theta, q, 0.05, d + extra).unwrap().decisions;
        prop_assert!(!a.reject_plus || b.reject_plus);
        prop_assert!(!a.reject_minus || b.reject_minus);
        prop_assert!(!b.reject_h0 || a.reject_h0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn decisions_respect_the_hypothesis_partition(
        theta in -1.5..1.5f64,
        q in quantiles_strategy(),
        delta in 0.0..1.5f64,
    ) {
        let out = decide_with_quantiles(theta, q, 0.05, delta).unwrap();
        let d = out.decisions;
        // the hypotheses cover the line, so at least one always survives
        prop_assert!(!(d.reject_h0 && d.reject_plus && d.reject_minus));
        if d.reject_h0 {
            prop_assert!(d.reject_plus != d.reject_minus);
        }
        let gap = 1e-12;
        if delta > out.delta1 + gap {
            prop_assert!(d.reject_plus);
        }
        if delta < out.delta1 - gap {
            prop_assert!(!d.reject_plus);
        }
        if delta > out.delta2 + gap {
            prop_assert!(d.reject_minus);
        }
        if delta < out.delta2 - gap {
            prop_assert!(!d.reject_minus);
        }
    }
}

#[test]
fn permutation_changes_the_dynamic_model() {
    // list order is part of the dynamic model: reordering lists moves the
    // interaction onto a different conditional capture
    let params = RaschParams::dynamic(vec![0.2, -0.5, 0.9], vec![1.5, 0.0, 0.0], 0.0).unwrap();
    let swapped = RaschParams::dynamic(vec![0.9, -0.5, 0.2], vec![0.0, 0.0, 1.5], 0.0).unwrap();
    let counts: Vec<f64> = (1..=8).map(f64::from).collect();
    let perm = [2, 1, 0];
    let mut moved = vec![0.0; 8];
    for (i, &c) in counts.iter().enumerate() {
        moved[permute_index(i, 3, &perm)] = c;
    }
    let a = complete_loglik_counts(&counts, &params, 0.0);
    let b = complete_loglik_counts(&moved, &swapped, 0.0);
    assert!((a - b).abs() > 1e-3);
    assert_eq!(params.model(), CaptureModel::Dynamic);
}
