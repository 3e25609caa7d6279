//! Synthetic data with a known group structure.
//!
//! Two binary sensitive attributes (`female`, `foreign`) give four groups,
//! labelled `2 * female + foreign`. Decision-relevant features are drawn
//! independently given the group: a normal `age`, an `earnings` variable
//! with a mass point at zero and a log-normal positive part, and a binary
//! `degree`. Group offsets are multiplied by `shift_scale`, so a scale of 0
//! makes all groups identically distributed.
//!
//! Scores are individualized mean potential outcomes for three treatments
//! (`none`, `vocational`, `computer`): vocational gains grow with age,
//! computer gains with positive earnings and a degree.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{
    Assignment, Dataset, FeatureColumn, FeatureTable, NuisanceEstimates, ScoreMatrix,
    SensitiveVector,
};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

pub const TREATMENTS: [&str; 3] = ["none", "vocational", "computer"];
pub const GROUP_NAMES: [&str; 4] = [
    "female=0,foreign=0",
    "female=0,foreign=1",
    "female=1,foreign=0",
    "female=1,foreign=1",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub group_probs: [f64; 4],
    pub shift_scale: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// In units of `age_sd`.
    pub age_offsets: [f64; 4],
    pub zero_earnings_prob: f64,
    pub zero_earnings_offsets: [f64; 4],
    pub log_earnings_mean: f64,
    pub log_earnings_sd: f64,
    /// In units of `log_earnings_sd`.
    pub log_earnings_offsets: [f64; 4],
    pub degree_prob: f64,
    pub degree_offsets: [f64; 4],
    pub baseline: f64,
    pub vocational_slope: f64,
    pub vocational_intercept: f64,
    pub computer_slope: f64,
    pub computer_degree_effect: f64,
    pub computer_intercept: f64,
    /// Computer gain for units without earnings.
    pub computer_zero_earnings: f64,
    /// Direct group effect on the vocational score.
    pub direct_effects: [f64; 4],
    pub heterogeneity_sd: f64,
    pub outcome_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 15_000,
            group_probs: [0.3, 0.25, 0.25, 0.2],
            shift_scale: 1.0,
            age_mean: 38.0,
            age_sd: 8.0,
            age_offsets: [0.6, -0.5, 0.2, -0.9],
            zero_earnings_prob: 0.2,
            zero_earnings_offsets: [-0.05, 0.05, 0.0, 0.1],
            log_earnings_mean: 8.0,
            log_earnings_sd: 0.6,
            log_earnings_offsets: [0.7, -0.4, -0.1, -1.0],
            degree_prob: 0.4,
            degree_offsets: [0.15, -0.15, 0.05, -0.2],
            baseline: 12.0,
            vocational_slope: 0.8,
            vocational_intercept: -0.1,
            computer_slope: 0.6,
            computer_degree_effect: 0.3,
            computer_intercept: -0.2,
            computer_zero_earnings: -0.8,
            direct_effects: [0.0, 0.1, -0.1, 0.1],
            heterogeneity_sd: 0.5,
            outcome_sd: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::Invalid(format!("synthetic n must be at least 100, got {}", self.n)));
        }
        let total: f64 = self.group_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.group_probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::Invalid("group probabilities must be positive and sum to 1".into()));
        }
        for g in 0..4 {
            for (what, p) in [("zero-earnings", self.zero_prob(g)), ("degree", self.degree_p(g))] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Invalid(format!("{what} probability of group {g} is {p}")));
                }
            }
        }
        if self.age_sd <= 0.0 || self.log_earnings_sd <= 0.0 || self.heterogeneity_sd < 0.0 || self.outcome_sd < 0.0 {
            return Err(Error::Invalid("scale parameters must be positive".into()));
        }
        Ok(())
    }

    fn zero_prob(&self, g: usize) -> f64 {
        self.zero_earnings_prob + self.shift_scale * self.zero_earnings_offsets[g]
    }

    fn degree_p(&self, g: usize) -> f64 {
        self.degree_prob + self.shift_scale * self.degree_offsets[g]
    }

    /// Mean potential outcomes of one unit before heterogeneity noise.
    pub fn score_means(&self, group: usize, age: f64, earnings: f64, degree: f64) -> [f64; 3] {
        let z_age = (age - self.age_mean) / self.age_sd;
        let computer = if earnings > 0.0 {
            let z = (earnings.ln() - self.log_earnings_mean) / self.log_earnings_sd;
            self.computer_slope * z + self.computer_intercept
        } else {
            self.computer_zero_earnings
        } + self.computer_degree_effect * degree;
        [
            self.baseline,
            self.baseline + self.vocational_slope * z_age + self.vocational_intercept
                + self.shift_scale * self.direct_effects[group],
            self.baseline + computer,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub group_names: Vec<String>,
    pub group_sizes: Vec<usize>,
    /// Sample means of the noiseless scores per group and treatment.
    pub group_score_means: Vec<Vec<f64>>,
    pub treatment_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Raw sensitive attributes, `(name, 0/1 values)`.
    pub sensitive_columns: Vec<(String, Vec<f64>)>,
    pub nuisance: NuisanceEstimates,
    pub truth: SyntheticTruth,
}

fn draw_group(probs: &[f64; 4], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return g;
        }
    }
    3
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / total).collect()
}

/// Draws a dataset; all randomness comes from stream `(seed, SYNTHETIC, 0)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = rng::stream(seed, domain::SYNTHETIC, 0);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let spells_dist = Poisson::new(1.5).expect("valid poisson");
    let n = spec.n;
    let mut labels = Vec::with_capacity(n);
    let (mut age, mut earnings, mut degree) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut married, mut spells) = (vec![0.0; n], vec![0.0; n]);
    let mut mu = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut d_obs = Vec::with_capacity(n);

    for i in 0..n {
        let g = draw_group(&spec.group_probs, &mut rng);
        labels.push(g);
        let z: f64 = std_normal.sample(&mut rng);
        age[i] = spec.age_mean + spec.age_sd * (z + spec.shift_scale * spec.age_offsets[g]);
        earnings[i] = if rng.random::<f64>() < spec.zero_prob(g) {
            0.0
        } else {
            let z: f64 = std_normal.sample(&mut rng);
            let log_e = spec.log_earnings_mean
                + spec.log_earnings_sd * (z + spec.shift_scale * spec.log_earnings_offsets[g]);
            log_e.exp().round()
        };
        degree[i] = f64::from(rng.random::<f64>() < spec.degree_p(g));
        married[i] = f64::from(rng.random::<f64>() < 0.5 + 0.1 * (g as f64 - 1.5) / 1.5);
        spells[i] = f64::min(spells_dist.sample(&mut rng), 10.0);

        let base = spec.score_means(g, age[i], earnings[i], degree[i]);
        let row: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(d, &b)| if d == 0 { b } else { b + spec.heterogeneity_sd * std_normal.sample(&mut rng) })
            .collect();
        let z_age = (age[i] - spec.age_mean) / spec.age_sd;
        let probs = softmax(&[0.0, 0.3 * z_age - 0.8, 0.4 * degree[i] - 0.9 + 0.2 * (g % 2) as f64]);
        let u: f64 = rng.random();
        let d = if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        };
        y.push(row[d] + spec.outcome_sd * std_normal.sample(&mut rng));
        d_obs.push(d);
        mu.push(row);
        e.push(probs);
    }

    let names: Vec<String> = TREATMENTS.iter().map(|s| s.to_string()).collect();
    let scores = ScoreMatrix::from_rows(&mu, names.clone())?;
    let e = ScoreMatrix::from_rows(&e, names.clone())?;
    let nuisance = NuisanceEstimates::new(scores.clone(), e, y, d_obs.clone())?;

    let features = FeatureTable::new(vec![
        FeatureColumn::continuous("age", age),
        FeatureColumn::continuous("earnings", earnings),
        FeatureColumn::discrete_with_support("degree", degree, vec![0.0, 1.0])?,
    ])?;
    let covariates = FeatureTable::new(vec![
        FeatureColumn::discrete_with_support("married", married, vec![0.0, 1.0])?,
        FeatureColumn::continuous("spells", spells),
    ])?;
    let group_names: Vec<String> = GROUP_NAMES.iter().map(|s| s.to_string()).collect();
    let sensitive_columns = vec![
        ("female".to_string(), labels.iter().map(|&g| (g / 2) as f64).collect()),
        ("foreign".to_string(), labels.iter().map(|&g| (g % 2) as f64).collect()),
    ];
    let sensitive = SensitiveVector::new(labels, group_names.clone())?;

    let sizes = sensitive.group_sizes();
    let mut means = vec![vec![0.0; 3]; 4];
    for g in 0..4 {
        for d in 0..3 {
            let rows: Vec<usize> = (0..n).filter(|&i| sensitive.label(i) == g).collect();
            let sum: f64 = rows.iter().map(|&i| {
                let f = &features;
                spec.score_means(g, f.value(i, 0), f.value(i, 1), f.value(i, 2))[d]
            }).sum();
            means[g][d] = if rows.is_empty() { f64::NAN } else { sum / rows.len() as f64 };
        }
    }

    Ok(SyntheticData {
        dataset: Dataset {
            features,
            sensitive,
            scores,
            observed: Some(Assignment(d_obs)),
            covariates: Some(covariates),
        },
        sensitive_columns,
        nuisance,
        truth: SyntheticTruth {
            group_names,
            group_sizes: sizes,
            group_score_means: means,
            treatment_names: names,
        },
    })
}
