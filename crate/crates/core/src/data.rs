//! Typed containers shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// Ordered discrete variable with a strictly increasing support.
    Discrete { support: Vec<f64> },
}

impl FeatureKind {
    pub fn is_discrete(&self) -> bool {
        matches!(self, FeatureKind::Discrete { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

impl FeatureColumn {
    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), kind: FeatureKind::Continuous, values }
    }

    /// Discrete column whose support is the set of observed values.
    pub fn discrete(name: impl Into<String>, values: Vec<f64>) -> Self {
        let mut support: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        support.sort_by(f64::total_cmp);
        support.dedup();
        Self { name: name.into(), kind: FeatureKind::Discrete { support }, values }
    }

    /// Discrete column with an explicit support. Values outside the support
    /// are not rejected here; `validate_dataset` reports them.
    pub fn discrete_with_support(
        name: impl Into<String>,
        values: Vec<f64>,
        support: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if support.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid(format!(
                "support of discrete column {name} is not strictly increasing"
            )));
        }
        Ok(Self { name, kind: FeatureKind::Discrete { support }, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `n` observations of the decision-relevant features, stored column-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    n: usize,
    columns: Vec<FeatureColumn>,
}

impl FeatureTable {
    pub fn new(columns: Vec<FeatureColumn>) -> Result<Self> {
        let n = columns.first().map_or(0, FeatureColumn::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "column {} has {} rows, expected {n}",
                bad.name,
                bad.len()
            )));
        }
        Ok(Self { n, columns })
    }

    /// Table with `n` rows and no columns.
    pub fn empty(n: usize) -> Self {
        Self { n, columns: Vec::new() }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &FeatureColumn {
        &self.columns[j]
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col].values[row]
    }

    pub fn push_column(&mut self, column: FeatureColumn) -> Result<()> {
        if !self.columns.is_empty() || self.n != 0 {
            if column.len() != self.n {
                return Err(Error::Shape(format!(
                    "column {} has {} rows, expected {}",
                    column.name,
                    column.len(),
                    self.n
                )));
            }
        } else {
            self.n = column.len();
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| FeatureColumn {
                name: c.name.clone(),
                kind: c.kind.clone(),
                values: rows.iter().map(|&i| c.values[i]).collect(),
            })
            .collect();
        Self { n: rows.len(), columns }
    }
}

/// Per-observation sensitive group label in `0..K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveVector {
    labels: Vec<usize>,
    group_names: Vec<String>,
}

impl SensitiveVector {
    pub fn new(labels: Vec<usize>, group_names: Vec<String>) -> Result<Self> {
        if group_names.is_empty() {
            return Err(Error::Invalid("at least one sensitive group is required".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= group_names.len()) {
            return Err(Error::Invalid(format!(
                "sensitive label {l} at row {i} exceeds group count {}",
                group_names.len()
            )));
        }
        Ok(Self { labels, group_names })
    }

    /// Labels with generated names `g0..g{k-1}`.
    pub fn from_labels(labels: Vec<usize>, k: usize) -> Result<Self> {
        Self::new(labels, (0..k).map(|g| format!("g{g}")).collect())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Row indices of each group, in row order.
    pub fn group_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_groups()];
        for (i, &l) in self.labels.iter().enumerate() {
            rows[l].push(i);
        }
        rows
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            group_names: self.group_names.clone(),
        }
    }
}

/// Row-major `n x (M+1)` matrix of per-treatment scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    values: Vec<f64>,
    treatment_names: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(values: Vec<f64>, treatment_names: Vec<String>) -> Result<Self> {
        let m = treatment_names.len();
        if m < 2 {
            return Err(Error::Invalid("at least two treatments are required".into()));
        }
        if values.len() % m != 0 {
            return Err(Error::Shape(format!(
                "{} score entries do not fill rows of {m} treatments",
                values.len()
            )));
        }
        Ok(Self { n: values.len() / m, values, treatment_names })
    }

    pub fn from_rows(rows: &[Vec<f64>], treatment_names: Vec<String>) -> Result<Self> {
        let m = treatment_names.len();
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::Shape(format!("score row {i} does not have {m} entries")));
        }
        Self::new(rows.concat(), treatment_names)
    }

    /// Names `d0..d{m-1}`.
    pub fn unnamed(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        Self::from_rows(rows, (0..m).map(|d| format!("d{d}")).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_treatments(&self) -> usize {
        self.treatment_names.len()
    }

    pub fn treatment_names(&self) -> &[String] {
        &self.treatment_names
    }

    pub fn get(&self, row: usize, d: usize) -> f64 {
        self.values[row * self.n_treatments() + d]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let m = self.n_treatments();
        &self.values[row * m..(row + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, d)).collect()
    }

    /// Builds a matrix from columns (one `Vec` per treatment).
    pub fn from_columns(columns: &[Vec<f64>], treatment_names: Vec<String>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.len() != treatment_names.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("score columns have inconsistent shapes".into()));
        }
        let m = columns.len();
        let mut values = vec![0.0; n * m];
        for (d, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                values[i * m + d] = v;
            }
        }
        Self::new(values, treatment_names)
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_treatments());
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self { n: rows.len(), values, treatment_names: self.treatment_names.clone() }
    }
}

/// Treatment index per observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Assignment(rows.iter().map(|&i| self.0[i]).collect())
    }

    /// Share of observations per treatment.
    pub fn shares(&self, n_treatments: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_treatments];
        for &d in &self.0 {
            counts[d] += 1;
        }
        let n = self.0.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

/// Outcome regressions, propensities, outcomes and observed treatments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceEstimates {
    pub mu: ScoreMatrix,
    pub e: ScoreMatrix,
    pub y: Vec<f64>,
    pub d_obs: Vec<usize>,
}

impl NuisanceEstimates {
    pub fn new(mu: ScoreMatrix, e: ScoreMatrix, y: Vec<f64>, d_obs: Vec<usize>) -> Result<Self> {
        let n = mu.n_rows();
        if e.n_rows() != n || y.len() != n || d_obs.len() != n {
            return Err(Error::Shape("nuisance components have different row counts".into()));
        }
        if e.n_treatments() != mu.n_treatments() {
            return Err(Error::Shape("mu and e have different treatment counts".into()));
        }
        if let Some((i, &d)) = d_obs.iter().enumerate().find(|(_, &d)| d >= mu.n_treatments()) {
            return Err(Error::Invalid(format!("observed treatment {d} at row {i} is out of range")));
        }
        for i in 0..n {
            let row = e.row(i);
            if let Some(d) = row.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
                return Err(Error::Invalid(format!(
                    "propensity e[{i}][{d}] = {} is outside (0, 1]",
                    row[d]
                )));
            }
            let s: f64 = row.iter().sum();
            if !(0.99..=1.01).contains(&s) {
                return Err(Error::Invalid(format!("propensities of row {i} sum to {s}")));
            }
        }
        Ok(Self { mu, e, y, d_obs })
    }

    pub fn n_rows(&self) -> usize {
        self.mu.n_rows()
    }
}

/// Everything a comparison run needs, aligned row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: FeatureTable,
    pub sensitive: SensitiveVector,
    pub scores: ScoreMatrix,
    pub observed: Option<Assignment>,
    /// Extra covariates reported in cluster summaries only.
    pub covariates: Option<FeatureTable>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.scores.n_rows()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.subset(rows),
            sensitive: self.sensitive.subset(rows),
            scores: self.scores.subset(rows),
            observed: self.observed.as_ref().map(|a| a.subset(rows)),
            covariates: self.covariates.as_ref().map(|c| c.subset(rows)),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = validate_dataset(&self.features, &self.sensitive, &self.scores);
        if let Some(obs) = &self.observed {
            if obs.len() != self.n_rows() {
                v.push(Violation::LengthMismatch {
                    what: "observed assignment".into(),
                    expected: self.n_rows(),
                    found: obs.len(),
                });
            }
            if let Some((row, &d)) =
                obs.0.iter().enumerate().find(|(_, &d)| d >= self.scores.n_treatments())
            {
                v.push(Violation::InvalidTreatment { row, treatment: d });
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    LengthMismatch { what: String, expected: usize, found: usize },
    TooFewRows { n: usize },
    EmptyGroup { group: usize, name: String },
    SingletonGroup { group: usize, name: String },
    NonFiniteScore { row: usize, treatment: usize },
    NonFiniteFeature { row: usize, feature: String },
    UnsupportedDiscreteValue { row: usize, feature: String, value: f64 },
    InvalidTreatment { row: usize, treatment: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { what, expected, found } => {
                write!(f, "length mismatch: {what} has {found} rows, expected {expected}")
            }
            Violation::TooFewRows { n } => write!(f, "too few rows: {n} (need at least 2)"),
            Violation::EmptyGroup { group, name } => {
                write!(f, "empty sensitive group {group} ({name})")
            }
            Violation::SingletonGroup { group, name } => {
                write!(f, "sensitive group {group} ({name}) has a single member")
            }
            Violation::NonFiniteScore { row, treatment } => {
                write!(f, "non-finite score at row {row}, treatment column {treatment}")
            }
            Violation::NonFiniteFeature { row, feature } => {
                write!(f, "non-finite value in feature {feature} at row {row}")
            }
            Violation::UnsupportedDiscreteValue { row, feature, value } => {
                write!(f, "value {value} of discrete feature {feature} at row {row} is not in its support")
            }
            Violation::InvalidTreatment { row, treatment } => {
                write!(f, "treatment {treatment} at row {row} is out of range")
            }
        }
    }
}

/// Checks the cross-object invariants of a dataset. An empty report means
/// every fitting operation accepts the inputs.
pub fn validate_dataset(
    features: &FeatureTable,
    sensitive: &SensitiveVector,
    scores: &ScoreMatrix,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scores.n_rows();
    if features.n_rows() != n {
        out.push(Violation::LengthMismatch {
            what: "features".into(),
            expected: n,
            found: features.n_rows(),
        });
    }
    if sensitive.len() != n {
        out.push(Violation::LengthMismatch {
            what: "sensitive".into(),
            expected: n,
            found: sensitive.len(),
        });
    }
    if n < 2 {
        out.push(Violation::TooFewRows { n });
    }
    for (g, &size) in sensitive.group_sizes().iter().enumerate() {
        let name = sensitive.group_names()[g].clone();
        match size {
            0 => out.push(Violation::EmptyGroup { group: g, name }),
            1 => out.push(Violation::SingletonGroup { group: g, name }),
            _ => {}
        }
    }
    for row in 0..n {
        for (d, v) in scores.row(row).iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFiniteScore { row, treatment: d });
            }
        }
    }
    for col in features.columns() {
        for (row, &v) in col.values.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFiniteFeature { row, feature: col.name.clone() });
            } else if let FeatureKind::Discrete { support } = &col.kind {
                if support.binary_search_by(|s| s.total_cmp(&v)).is_err() {
                    out.push(Violation::UnsupportedDiscreteValue {
                        row,
                        feature: col.name.clone(),
                        value: v,
                    });
                }
            }
        }
    }
    out
}
