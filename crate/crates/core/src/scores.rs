//! Score construction from nuisance estimates and allocation evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{Assignment, NuisanceEstimates, ScoreMatrix, SensitiveVector};
use crate::error::{Error, Result};
use crate::metrics::{self, FairnessReport};

/// Individualized average potential outcomes: the outcome regressions
/// themselves.
pub fn iapo_scores(nuisance: &NuisanceEstimates) -> ScoreMatrix {
    nuisance.mu.clone()
}

/// Doubly robust scores `mu_d + 1{D=d} (Y - mu_d) / e_d`.
pub fn aipw_scores(nuisance: &NuisanceEstimates) -> Result<ScoreMatrix> {
    let mu = &nuisance.mu;
    let m = mu.n_treatments();
    let mut values = mu.values().to_vec();
    for (i, &d) in nuisance.d_obs.iter().enumerate() {
        let e = nuisance.e.get(i, d);
        if e == 0.0 {
            return Err(Error::ZeroPropensity { row: i, treatment: d });
        }
        let cell = &mut values[i * m + d];
        *cell += (nuisance.y[i] - mu.get(i, d)) / e;
    }
    ScoreMatrix::new(values, mu.treatment_names().to_vec())
}

/// Mean of the scores selected by `assignment`.
pub fn policy_value(assignment: &Assignment, scores: &ScoreMatrix) -> Result<f64> {
    if assignment.len() != scores.n_rows() {
        return Err(Error::Shape(format!(
            "assignment has {} rows, scores have {}",
            assignment.len(),
            scores.n_rows()
        )));
    }
    if assignment.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty assignment".into()));
    }
    let total: f64 = assignment.0.iter().enumerate().map(|(i, &d)| scores.get(i, d)).sum();
    Ok(total / assignment.len() as f64)
}

/// First index of the maximum; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (d, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = d;
        }
    }
    best
}

/// Per-row argmax of the scores.
pub fn blackbox_policy(scores: &ScoreMatrix) -> Assignment {
    Assignment((0..scores.n_rows()).map(|i| argmax(scores.row(i))).collect())
}

/// Treatment with the highest mean score, assigned to everyone.
pub fn all_in_one_policy(scores: &ScoreMatrix) -> (Assignment, usize) {
    let m = scores.n_treatments();
    let mut sums = vec![0.0; m];
    for i in 0..scores.n_rows() {
        for (s, v) in sums.iter_mut().zip(scores.row(i)) {
            *s += v;
        }
    }
    let best = argmax(&sums);
    (Assignment(vec![best; scores.n_rows()]), best)
}

/// Elementwise `(1 - lambda) * original + lambda * adjusted`.
pub fn blend_scores(original: &ScoreMatrix, adjusted: &ScoreMatrix, lambda: f64) -> Result<ScoreMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    if original.n_rows() != adjusted.n_rows() || original.n_treatments() != adjusted.n_treatments() {
        return Err(Error::Shape("blended score matrices differ in shape".into()));
    }
    let values = original
        .values()
        .iter()
        .zip(adjusted.values())
        .map(|(&a, &b)| blend(a, b, lambda))
        .collect();
    ScoreMatrix::new(values, original.treatment_names().to_vec())
}

/// Convex combination that returns the endpoints exactly.
pub(crate) fn blend(a: f64, b: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        a
    } else if lambda == 1.0 {
        b
    } else {
        (1.0 - lambda) * a + lambda * b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalReport {
    pub policy_value: f64,
    pub program_shares: Vec<f64>,
    pub fairness: FairnessReport,
}

/// Policy value, treatment shares and fairness statistics of an allocation.
pub fn evaluate_policy(
    assignment: &Assignment,
    scores: &ScoreMatrix,
    sensitive: &SensitiveVector,
    prior_concentration: f64,
) -> Result<PolicyEvalReport> {
    if sensitive.len() != assignment.len() {
        return Err(Error::Shape("assignment and sensitive labels differ in length".into()));
    }
    let policy_value = policy_value(assignment, scores)?;
    let m = scores.n_treatments();
    if let Some(&d) = assignment.0.iter().find(|&&d| d >= m) {
        return Err(Error::Invalid(format!("treatment {d} is out of range")));
    }
    let table = metrics::contingency(assignment, sensitive, m)?;
    Ok(PolicyEvalReport {
        policy_value,
        program_shares: assignment.shares(m),
        fairness: metrics::fairness_report(&table, prior_concentration),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nuisance(mu: Vec<Vec<f64>>, e: Vec<Vec<f64>>, y: Vec<f64>, d: Vec<usize>) -> NuisanceEstimates {
        NuisanceEstimates {
            mu: ScoreMatrix::unnamed(&mu).unwrap(),
            e: ScoreMatrix::unnamed(&e).unwrap(),
            y,
            d_obs: d,
        }
    }

    #[test]
    fn iapo_is_identity_on_mu() {
        let a = nuisance(vec![vec![1.0, 2.0]], vec![vec![0.5, 0.5]], vec![9.0], vec![0]);
        let b = nuisance(vec![vec![1.0, 2.0]], vec![vec![0.2, 0.8]], vec![-3.0], vec![1]);
        assert_eq!(iapo_scores(&a).row(0), &[1.0, 2.0]);
        assert_eq!(iapo_scores(&a), iapo_scores(&b));
        let z = nuisance(vec![vec![0.0; 3]; 2], vec![vec![1.0 / 3.0; 3]; 2], vec![1.0, 2.0], vec![0, 2]);
        assert!(iapo_scores(&z).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aipw_examples() {
        // residual zero
        let n = nuisance(vec![vec![1.0, 2.0]], vec![vec![0.3, 0.7]], vec![2.0], vec![1]);
        assert_eq!(aipw_scores(&n).unwrap().row(0), &[1.0, 2.0]);
        // 0.5 + (1 - 0.5) / 0.25
        let n = nuisance(vec![vec![0.5, 0.1]], vec![vec![0.25, 0.75]], vec![1.0], vec![0]);
        let g = aipw_scores(&n).unwrap();
        assert_eq!(g.get(0, 0), 2.5);
        assert_eq!(g.get(0, 1), 0.1);
    }

    #[test]
    fn aipw_rejects_zero_propensity() {
        let n = nuisance(vec![vec![0.5, 0.1]], vec![vec![0.0, 1.0]], vec![1.0], vec![0]);
        assert_eq!(aipw_scores(&n), Err(Error::ZeroPropensity { row: 0, treatment: 0 }));
        // zero propensity on a non-observed arm is harmless
        let n = nuisance(vec![vec![0.5, 0.1]], vec![vec![0.0, 1.0]], vec![1.0], vec![1]);
        assert!(aipw_scores(&n).is_ok());
    }

    #[test]
    fn aipw_reduces_to_outcome() {
        let n = nuisance(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![vec![1.0, 1.0]; 2], vec![3.5, -1.0], vec![1, 0]);
        let g = aipw_scores(&n).unwrap();
        assert_eq!(g.get(0, 1), 3.5);
        assert_eq!(g.get(1, 0), -1.0);
    }

    #[test]
    fn policy_value_examples() {
        let g = ScoreMatrix::unnamed(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(policy_value(&Assignment(vec![1, 0]), &g).unwrap(), 2.5);
        let g = ScoreMatrix::unnamed(&[vec![7.0, 9.0]]).unwrap();
        assert_eq!(policy_value(&Assignment(vec![0]), &g).unwrap(), 7.0);
        let g = ScoreMatrix::unnamed(&[vec![4.0, 1.0], vec![0.0, 4.0], vec![4.0, 4.0]]).unwrap();
        assert_eq!(policy_value(&Assignment(vec![0, 1, 1]), &g).unwrap(), 4.0);
        assert!(policy_value(&Assignment(vec![0]), &g).is_err());
    }

    #[test]
    fn blackbox_and_all_in_one_ties() {
        let g = ScoreMatrix::unnamed(&[vec![1.0, 3.0, 2.0]]).unwrap();
        assert_eq!(blackbox_policy(&g).0, vec![1]);
        // tie-break by enumeration: every row of equal scores picks index 0
        for m in 2..5 {
            let g = ScoreMatrix::unnamed(&[vec![5.0; m]]).unwrap();
            assert_eq!(blackbox_policy(&g).0, vec![0]);
        }
        let g = ScoreMatrix::unnamed(&[vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(all_in_one_policy(&g), (Assignment(vec![1, 1]), 1));
        let g = ScoreMatrix::unnamed(&[vec![2.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(all_in_one_policy(&g).1, 0);
        let g = ScoreMatrix::new(vec![1.0, 2.0], vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(all_in_one_policy(&g).0.len(), 1);
    }

    #[test]
    fn blend_examples() {
        let a = ScoreMatrix::unnamed(&[vec![10.0, 1.0]]).unwrap();
        let b = ScoreMatrix::unnamed(&[vec![20.0, 3.0]]).unwrap();
        assert_eq!(blend_scores(&a, &b, 0.0).unwrap(), a);
        assert_eq!(blend_scores(&a, &b, 1.0).unwrap(), b);
        assert_eq!(blend_scores(&a, &b, 0.5).unwrap().get(0, 0), 15.0);
        assert_eq!(blend_scores(&a, &b, 1.5), Err(Error::LambdaOutOfRange(1.5)));
        assert_eq!(blend_scores(&a, &b, -0.1), Err(Error::LambdaOutOfRange(-0.1)));
    }

    fn score_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..5).prop_flat_map(|m| prop::collection::vec(prop::collection::vec(-50.0f64..50.0, m), 1..40))
    }

    proptest! {
        #[test]
        fn blackbox_dominates_every_assignment(rows in score_rows(), seed in any::<u64>()) {
            let g = ScoreMatrix::unnamed(&rows).unwrap();
            let m = g.n_treatments();
            let best = policy_value(&blackbox_policy(&g), &g).unwrap();
            let mut state = seed;
            for _ in 0..20 {
                let a: Vec<usize> = (0..g.n_rows()).map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((state >> 33) as usize) % m
                }).collect();
                prop_assert!(policy_value(&Assignment(a), &g).unwrap() <= best + 1e-9);
            }
            let (aio, _) = all_in_one_policy(&g);
            prop_assert!(policy_value(&aio, &g).unwrap() <= best + 1e-9);
        }

        #[test]
        fn blackbox_is_shift_invariant(rows in score_rows(), shift in prop::collection::vec(-1e3f64..1e3, 40)) {
            let g = ScoreMatrix::unnamed(&rows).unwrap();
            let shifted: Vec<Vec<f64>> = rows.iter().zip(&shift)
                .map(|(r, c)| r.iter().map(|v| v + c).collect()).collect();
            let h = ScoreMatrix::unnamed(&shifted).unwrap();
            // shifting can only merge near-ties through rounding; compare on rows with a clear winner
            let a = blackbox_policy(&g);
            let b = blackbox_policy(&h);
            for i in 0..g.n_rows() {
                let mut sorted = g.row(i).to_vec();
                sorted.sort_by(|x, y| y.total_cmp(x));
                if sorted[0] - sorted[1] > 1e-6 {
                    prop_assert_eq!(a.0[i], b.0[i]);
                }
            }
        }
    }
}
