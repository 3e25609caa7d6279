//! The generator induces unfairness through group shifts and only through them.

use fairpol_core::adjust::{ks_distance, mq_adjust_table};
use fairpol_core::scores::evaluate_policy;
use fairpol_core::synthetic::{generate_synthetic, SyntheticSpec};
use fairpol_core::tree::{fit_tree, predict_tree, Scale, SplitCandidates};

fn unadjusted_tree_v(spec: &SyntheticSpec, seed: u64) -> f64 {
    let data = generate_synthetic(spec, seed).unwrap();
    let d = &data.dataset;
    let cand = SplitCandidates::from_table(&d.features, 100);
    let tree = fit_tree(&d.features, &d.scores, 3, &cand, Scale::Raw).unwrap();
    let a = predict_tree(&tree, &d.features).unwrap();
    evaluate_policy(&a, &d.scores, &d.sensitive, 1.0).unwrap().fairness.cramers_v
}

#[test]
fn default_shifts_make_the_unadjusted_tree_unfair() {
    let v = unadjusted_tree_v(&SyntheticSpec { n: 10_000, ..SyntheticSpec::default() }, 0);
    assert!(v >= 0.2, "V = {v}");
}

#[test]
fn zero_shifts_leave_nothing_to_remove() {
    let spec = SyntheticSpec { n: 10_000, shift_scale: 0.0, ..SyntheticSpec::default() };
    let v = unadjusted_tree_v(&spec, 0);
    assert!(v <= 0.03, "V = {v}");
    // adjustment barely moves continuous values
    let data = generate_synthetic(&spec, 0).unwrap();
    let d = &data.dataset;
    let adj = mq_adjust_table(&d.features, &d.sensitive, 0).unwrap();
    let age = &d.features.column(0).values;
    assert!(ks_distance(age, &adj.adjusted[0]) < 1e-3);
    let mean_shift = age.iter().zip(&adj.adjusted[0]).map(|(a, b)| (a - b).abs()).sum::<f64>() / age.len() as f64;
    assert!(mean_shift < 0.05 * 8.0, "mean |shift| {mean_shift}");
}

#[test]
fn truth_records_noiseless_group_score_means() {
    let spec = SyntheticSpec { n: 2000, ..SyntheticSpec::default() };
    let data = generate_synthetic(&spec, 4).unwrap();
    let d = &data.dataset;
    let col = |j: usize| &d.features.column(j).values;
    for (g, rows) in d.sensitive.group_rows().iter().enumerate() {
        assert_eq!(data.truth.group_sizes[g], rows.len());
        let mut sums = [0.0; 3];
        for &i in rows {
            let m = spec.score_means(g, col(0)[i], col(1)[i], col(2)[i]);
            for t in 0..3 {
                sums[t] += m[t];
            }
        }
        for t in 0..3 {
            let mean = sums[t] / rows.len() as f64;
            assert!((mean - data.truth.group_score_means[g][t]).abs() < 1e-9, "group {g}, treatment {t}");
        }
    }
}
