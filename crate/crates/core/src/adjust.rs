//! Marginal-quantile (MQ) adjustment and its conditional-quantile (CQ) inverse.
//!
//! MQ-adjustment maps each value through the empirical cdf of its sensitive
//! group and then through the pooled marginal quantile function, so that the
//! adjusted column has the same empirical distribution in every group while
//! within-group ranks and the pooled marginal are kept. Tied values receive
//! uniform draws inside their conditional-cdf interval.
//!
//! The empirical cdf maps the sample minimum to 0, the maximum to 1 and
//! spaces the remaining order statistics evenly:
//! `p_i = (#{j : a_j <= a_i} - 1) / (m - 1)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureColumn, FeatureKind, FeatureTable, ScoreMatrix, SensitiveVector};
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};
use crate::scores::blend;

/// Empirical cdf values without tie randomization.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<f64>> {
    let m = values.len();
    if m < 2 {
        return Err(Error::SingletonGroup { group: 0, size: m });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let denom = (m - 1) as f64;
    Ok(values
        .iter()
        .map(|&a| {
            let rank = sorted.partition_point(|&x| x <= a);
            (rank - 1) as f64 / denom
        })
        .collect())
}

/// Empirical quantile of a sorted sample by linear interpolation between
/// order statistics: `c = 1 + (N - 1) p`.
pub fn marginal_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let c = 1.0 + (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lambda = c.floor();
    let kappa = c - lambda;
    let lo = lambda as usize; // 1-based
    if lo >= n {
        return sorted[n - 1];
    }
    if kappa == 0.0 {
        return sorted[lo - 1];
    }
    (1.0 - kappa) * sorted[lo - 1] + kappa * sorted[lo]
}

/// Result of adjusting one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnAdjustment {
    /// Within-group empirical cdf values, randomized on ties.
    pub p: Vec<f64>,
    /// Marginal-quantile images of `p`.
    pub adjusted: Vec<f64>,
}

fn check_groups(sensitive: &SensitiveVector) -> Result<()> {
    for (group, &size) in sensitive.group_sizes().iter().enumerate() {
        if size < 2 {
            return Err(Error::SingletonGroup { group, size });
        }
    }
    Ok(())
}

/// MQ-adjusts one column.
///
/// Draw order: groups in label order, rows in row order within a group; one
/// uniform draw per tied row. The caller owns the generator, so a column
/// adjusted with a given stream is reproducible bit for bit.
pub fn mq_adjust_column(
    values: &[f64],
    _kind: &FeatureKind,
    sensitive: &SensitiveVector,
    rng: &mut StreamRng,
) -> Result<ColumnAdjustment> {
    if values.len() != sensitive.len() {
        return Err(Error::Shape(format!(
            "column has {} rows, sensitive vector {}",
            values.len(),
            sensitive.len()
        )));
    }
    if let Some(row) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { feature: String::new(), row });
    }
    check_groups(sensitive)?;

    let mut p = vec![0.0; values.len()];
    for rows in sensitive.group_rows() {
        let mut sorted: Vec<f64> = rows.iter().map(|&i| values[i]).collect();
        sorted.sort_by(f64::total_cmp);
        let denom = (rows.len() - 1) as f64;
        for &i in &rows {
            let a = values[i];
            let below = sorted.partition_point(|&x| x < a);
            let rank = sorted.partition_point(|&x| x <= a);
            let upper = (rank - 1) as f64 / denom;
            p[i] = if rank - below > 1 {
                // tied: uniform on (p_lower, upper] with p_lower = #{a_j <= a_lower} / (m - 1)
                let lower = below as f64 / denom;
                let u: f64 = rng.random();
                upper - u * (upper - lower)
            } else {
                upper
            };
        }
    }

    let mut pooled = values.to_vec();
    pooled.sort_by(f64::total_cmp);
    let adjusted = p.iter().map(|&q| marginal_quantile(&pooled, q)).collect();
    Ok(ColumnAdjustment { p, adjusted })
}

/// Per-row cdf draws and adjusted values for every feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedFeatures {
    pub names: Vec<String>,
    /// Column-major `G_a x n`.
    pub p_values: Vec<Vec<f64>>,
    /// Column-major `G_a x n`.
    pub adjusted: Vec<Vec<f64>>,
    pub seed: u64,
}

impl AdjustedFeatures {
    pub fn n_rows(&self) -> usize {
        self.p_values.first().map_or(0, Vec::len)
    }

    /// cdf-scale features (all continuous), used to fit fairness-aware trees.
    pub fn cdf_table(&self) -> FeatureTable {
        FeatureTable::new(
            self.names
                .iter()
                .zip(&self.p_values)
                .map(|(n, p)| FeatureColumn::continuous(n.clone(), p.clone()))
                .collect(),
        )
        .expect("columns share a length")
    }

    /// Adjusted features on the marginal scale (all continuous).
    pub fn adjusted_table(&self) -> FeatureTable {
        FeatureTable::new(
            self.names
                .iter()
                .zip(&self.adjusted)
                .map(|(n, a)| FeatureColumn::continuous(n.clone(), a.clone()))
                .collect(),
        )
        .expect("columns share a length")
    }
}

/// Pairwise heuristic: every column is adjusted on its own, column `j`
/// drawing from stream `(seed, ADJUST_FEATURES, j)`.
pub fn mq_adjust_table(
    features: &FeatureTable,
    sensitive: &SensitiveVector,
    seed: u64,
) -> Result<AdjustedFeatures> {
    let results: Vec<Result<ColumnAdjustment>> = features
        .columns()
        .par_iter()
        .enumerate()
        .map(|(j, col)| {
            let mut rng = rng::stream(seed, domain::ADJUST_FEATURES, j as u64);
            mq_adjust_column(&col.values, &col.kind, sensitive, &mut rng).map_err(|e| match e {
                Error::NonFiniteFeature { row, .. } => {
                    Error::NonFiniteFeature { feature: col.name.clone(), row }
                }
                other => other,
            })
        })
        .collect();
    let mut p_values = Vec::with_capacity(results.len());
    let mut adjusted = Vec::with_capacity(results.len());
    for r in results {
        let c = r?;
        p_values.push(c.p);
        adjusted.push(c.adjusted);
    }
    Ok(AdjustedFeatures {
        names: features.columns().iter().map(|c| c.name.clone()).collect(),
        p_values,
        adjusted,
        seed,
    })
}

/// MQ-adjusts every score column as a continuous variable, column `d`
/// drawing from stream `(seed, ADJUST_SCORES, d)`.
pub fn mq_adjust_scores(
    scores: &ScoreMatrix,
    sensitive: &SensitiveVector,
    seed: u64,
) -> Result<ScoreMatrix> {
    let columns: Vec<Result<Vec<f64>>> = (0..scores.n_treatments())
        .into_par_iter()
        .map(|d| {
            let mut rng = rng::stream(seed, domain::ADJUST_SCORES, d as u64);
            mq_adjust_column(&scores.column(d), &FeatureKind::Continuous, sensitive, &mut rng)
                .map(|c| c.adjusted)
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    ScoreMatrix::from_columns(&columns, scores.treatment_names().to_vec())
}

/// Maps a cdf-scale threshold back to the original scale of one group.
///
/// `pairs` holds `(a, p)` sorted ascending by `p`. An exact match on `p`
/// returns its `a`; otherwise the bracketing pairs are interpolated
/// linearly. Thresholds outside the stored cdf range clamp to the group
/// minimum or maximum.
pub fn cq_lookup(p: f64, pairs: &[(f64, f64)]) -> f64 {
    assert!(!pairs.is_empty(), "cq_lookup needs at least one pair");
    let idx = pairs.partition_point(|&(_, q)| q < p);
    if idx < pairs.len() && pairs[idx].1 == p {
        return pairs[idx].0;
    }
    if idx == 0 {
        return pairs[0].0;
    }
    if idx == pairs.len() {
        return pairs[pairs.len() - 1].0;
    }
    let (a_lo, p_lo) = pairs[idx - 1];
    let (a_hi, p_hi) = pairs[idx];
    a_lo + ((a_hi - a_lo) / (p_hi - p_lo)) * (p - p_lo)
}

/// One distinct value of a group with its conditional-cdf interval
/// `(p_low, p_high]`; `p_low == p_high` for untied values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfLevel {
    pub value: f64,
    pub p_low: f64,
    pub p_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCdf {
    /// `(a, p)` per training row, sorted by `p`.
    pub pairs: Vec<(f64, f64)>,
    pub levels: Vec<CdfLevel>,
}

impl GroupCdf {
    fn fit(values: &[f64], p: &[f64]) -> Self {
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(p.iter().copied()).collect();
        pairs.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)));
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let denom = (sorted.len() - 1).max(1) as f64;
        let mut levels = Vec::new();
        let mut start = 0;
        while start < sorted.len() {
            let v = sorted[start];
            let end = sorted.partition_point(|&x| x <= v);
            let p_high = (end - 1) as f64 / denom;
            let p_low = if end - start > 1 { start as f64 / denom } else { p_high };
            levels.push(CdfLevel { value: v, p_low, p_high });
            start = end;
        }
        Self { pairs, levels }
    }

    /// Conditional cdf of a fresh value: exact levels reuse their interval
    /// (with a uniform draw when tied), values between levels interpolate
    /// linearly, values outside the range clamp to 0 or 1.
    pub fn forward(&self, a: f64, rng: &mut StreamRng) -> f64 {
        let levels = &self.levels;
        let idx = levels.partition_point(|l| l.value < a);
        if idx < levels.len() && levels[idx].value == a {
            let l = levels[idx];
            if l.p_high > l.p_low {
                let u: f64 = rng.random();
                return l.p_high - u * (l.p_high - l.p_low);
            }
            return l.p_high;
        }
        if idx == 0 {
            return 0.0;
        }
        if idx == levels.len() {
            return 1.0;
        }
        let lo = levels[idx - 1];
        let hi = levels[idx];
        let w = (a - lo.value) / (hi.value - lo.value);
        lo.p_high + w * (hi.p_low - lo.p_high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnCdf {
    pub name: String,
    pub kind: FeatureKind,
    pub groups: Vec<GroupCdf>,
    /// Pooled training sample, sorted; defines `F_A` and its inverse.
    pub marginal: Vec<f64>,
}

/// Conditional and marginal empirical cdfs estimated on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfModel {
    pub columns: Vec<ColumnCdf>,
}

impl CdfModel {
    pub fn fit(
        features: &FeatureTable,
        sensitive: &SensitiveVector,
        adjusted: &AdjustedFeatures,
    ) -> Result<Self> {
        if adjusted.p_values.len() != features.n_cols() || adjusted.n_rows() != features.n_rows() {
            return Err(Error::Shape("adjusted features do not match the feature table".into()));
        }
        check_groups(sensitive)?;
        let group_rows = sensitive.group_rows();
        let columns = features
            .columns()
            .iter()
            .zip(&adjusted.p_values)
            .map(|(col, p)| {
                let groups = group_rows
                    .iter()
                    .map(|rows| {
                        let a: Vec<f64> = rows.iter().map(|&i| col.values[i]).collect();
                        let q: Vec<f64> = rows.iter().map(|&i| p[i]).collect();
                        GroupCdf::fit(&a, &q)
                    })
                    .collect();
                let mut marginal = col.values.clone();
                marginal.sort_by(f64::total_cmp);
                ColumnCdf { name: col.name.clone(), kind: col.kind.clone(), groups, marginal }
            })
            .collect();
        Ok(Self { columns })
    }

    pub fn n_groups(&self) -> usize {
        self.columns.first().map_or(0, |c| c.groups.len())
    }

    /// `g(p, s)` for column `j`.
    pub fn lookup(&self, j: usize, group: usize, p: f64) -> f64 {
        cq_lookup(p, &self.columns[j].groups[group].pairs)
    }

    /// Maps fresh observations onto the training cdf scale and the training
    /// marginal. Column `j` draws ties from stream `(seed, FORWARD_CDF, j)`.
    pub fn apply(
        &self,
        features: &FeatureTable,
        sensitive: &SensitiveVector,
        seed: u64,
    ) -> Result<AdjustedFeatures> {
        if features.n_cols() != self.columns.len() {
            return Err(Error::Shape("feature table does not match the cdf model".into()));
        }
        if sensitive.len() != features.n_rows() || sensitive.n_groups() != self.n_groups() {
            return Err(Error::Shape("sensitive labels do not match the cdf model".into()));
        }
        let mut p_values = Vec::with_capacity(self.columns.len());
        let mut adjusted = Vec::with_capacity(self.columns.len());
        for (j, (cdf, col)) in self.columns.iter().zip(features.columns()).enumerate() {
            let mut rng = rng::stream(seed, domain::FORWARD_CDF, j as u64);
            let mut p = Vec::with_capacity(col.len());
            for (i, &a) in col.values.iter().enumerate() {
                if !a.is_finite() {
                    return Err(Error::NonFiniteFeature { feature: col.name.clone(), row: i });
                }
                p.push(cdf.groups[sensitive.label(i)].forward(a, &mut rng));
            }
            adjusted.push(p.iter().map(|&q| marginal_quantile(&cdf.marginal, q)).collect());
            p_values.push(p);
        }
        Ok(AdjustedFeatures {
            names: self.columns.iter().map(|c| c.name.clone()).collect(),
            p_values,
            adjusted,
            seed,
        })
    }
}

/// Elementwise `(1 - lambda) A + lambda A~`; blended columns are continuous.
pub fn blend_features(
    original: &FeatureTable,
    adjusted: &AdjustedFeatures,
    lambda: f64,
) -> Result<FeatureTable> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    if adjusted.adjusted.len() != original.n_cols() || adjusted.n_rows() != original.n_rows() {
        return Err(Error::Shape("adjusted features do not match the feature table".into()));
    }
    let columns = original
        .columns()
        .iter()
        .zip(&adjusted.adjusted)
        .map(|(col, adj)| {
            let values = col.values.iter().zip(adj).map(|(&a, &b)| blend(a, b, lambda)).collect();
            FeatureColumn::continuous(col.name.clone(), values)
        })
        .collect();
    FeatureTable::new(columns)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}
