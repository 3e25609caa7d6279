//! Contingency-table fairness statistics: Cramér's V with its chi-square
//! p-value and the log Bayes factor for independent multinomial sampling.
//!
//! Rows of a table are sensitive groups, columns are treatments. All-zero
//! rows and columns carry no information and are dropped before any
//! statistic is computed; a table with fewer than two nonzero rows or
//! columns is degenerate and reports `V = 0`, `p = 1`, `log BF = -inf`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::data::{Assignment, SensitiveVector};
use crate::error::{Error, Result};

/// Default symmetric Dirichlet concentration per cell.
pub const DEFAULT_PRIOR_CONCENTRATION: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_totals: Vec<u64>,
    col_totals: Vec<u64>,
    total: u64,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.first().map_or(0, Vec::len);
        if counts.is_empty() || c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("contingency table must be a nonempty rectangle".into()));
        }
        let row_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let col_totals: Vec<u64> = (0..c).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = row_totals.iter().sum();
        if total == 0 {
            return Err(Error::Invalid("contingency table has no observations".into()));
        }
        Ok(Self { counts, row_totals, col_totals, total })
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn col_totals(&self) -> &[u64] {
        &self.col_totals
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn transpose(&self) -> Self {
        let c = self.col_totals.len();
        let counts = (0..c).map(|j| self.counts.iter().map(|r| r[j]).collect()).collect();
        Self::new(counts).expect("transpose of a valid table")
    }

    /// Counts restricted to nonzero rows and columns.
    fn reduced(&self) -> Vec<Vec<u64>> {
        let cols: Vec<usize> = (0..self.col_totals.len()).filter(|&j| self.col_totals[j] > 0).collect();
        self.counts
            .iter()
            .zip(&self.row_totals)
            .filter(|(_, &t)| t > 0)
            .map(|(r, _)| cols.iter().map(|&j| r[j]).collect())
            .collect()
    }

    fn is_degenerate(&self) -> bool {
        let rows = self.row_totals.iter().filter(|&&t| t > 0).count();
        let cols = self.col_totals.iter().filter(|&&t| t > 0).count();
        rows < 2 || cols < 2
    }
}

/// Cross-tabulates treatments (columns) against sensitive groups (rows).
/// Treatments nobody receives still get an all-zero column.
pub fn contingency(
    assignment: &Assignment,
    sensitive: &SensitiveVector,
    n_treatments: usize,
) -> Result<ContingencyTable> {
    if assignment.len() != sensitive.len() {
        return Err(Error::Shape("assignment and sensitive labels differ in length".into()));
    }
    let mut counts = vec![vec![0u64; n_treatments]; sensitive.n_groups()];
    for (&d, &s) in assignment.0.iter().zip(sensitive.labels()) {
        if d >= n_treatments {
            return Err(Error::Invalid(format!("treatment {d} is out of range")));
        }
        counts[s][d] += 1;
    }
    ContingencyTable::new(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CramersV {
    pub v: f64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Upper tail of the chi-square distribution.
pub fn chi2_survival(chi2: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    if chi2 <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, chi2 / 2.0).clamp(0.0, 1.0)
}

/// Pearson chi-square against the independence expectation and Cramér's V
/// `sqrt(chi2 / (N (C - 1)))` with `C` the smaller number of categories.
pub fn cramers_v(table: &ContingencyTable) -> CramersV {
    if table.is_degenerate() {
        return CramersV { v: 0.0, chi2: 0.0, dof: 0, p_value: 1.0 };
    }
    let counts = table.reduced();
    let r = counts.len();
    let c = counts[0].len();
    let row_tot: Vec<f64> = counts.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = (0..c).map(|j| counts.iter().map(|row| row[j]).sum::<u64>() as f64).collect();
    let n = table.total() as f64;
    let mut chi2 = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let expected = row_tot[i] * col_tot[j] / n;
            let diff = o as f64 - expected;
            chi2 += diff * diff / expected;
        }
    }
    let k = r.min(c) as f64;
    let v = (chi2 / (n * (k - 1.0))).sqrt().clamp(0.0, 1.0);
    let dof = (r - 1) * (c - 1);
    CramersV { v, chi2, dof, p_value: chi2_survival(chi2, dof) }
}

/// Log normaliser of a Dirichlet-multinomial: `ln B(y + a) - ln B(a)` with
/// `B(v) = prod Gamma(v_i) / Gamma(sum v_i)`.
fn log_dirichlet_ratio(counts: impl Iterator<Item = u64> + Clone, a: f64) -> f64 {
    let k = counts.clone().count() as f64;
    let n: u64 = counts.clone().sum();
    let cells: f64 = counts.map(|y| ln_gamma(y as f64 + a) - ln_gamma(a)).sum();
    cells + ln_gamma(k * a) - ln_gamma(n as f64 + k * a)
}

/// Natural-log Bayes factor of dependence against independence.
///
/// Under dependence every row (sensitive group) has its own multinomial over
/// the columns with a symmetric Dirichlet prior; under independence all rows
/// share one multinomial with the same prior. Multinomial coefficients cancel,
/// leaving gamma-function sums over cell, row and column counts. Positive
/// values favour dependence.
pub fn log_bayes_factor(table: &ContingencyTable, prior_concentration: f64) -> Result<f64> {
    if !(prior_concentration > 0.0 && prior_concentration.is_finite()) {
        return Err(Error::Invalid(format!(
            "prior concentration must be positive, got {prior_concentration}"
        )));
    }
    if table.is_degenerate() {
        return Ok(f64::NEG_INFINITY);
    }
    let counts = table.reduced();
    let a = prior_concentration;
    let dependent: f64 = counts.iter().map(|row| log_dirichlet_ratio(row.iter().copied(), a)).sum();
    let c = counts[0].len();
    let col_tot: Vec<u64> = (0..c).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
    let independent = log_dirichlet_ratio(col_tot.into_iter(), a);
    Ok(dependent - independent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub cramers_v: f64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Natural log; `-inf` for degenerate tables (serialised as `null`).
    pub log_bf: f64,
    pub degenerate: bool,
}

pub fn fairness_report(table: &ContingencyTable, prior_concentration: f64) -> FairnessReport {
    let cv = cramers_v(table);
    let log_bf = log_bayes_factor(table, prior_concentration).unwrap_or(f64::NAN);
    FairnessReport {
        cramers_v: cv.v,
        chi2: cv.chi2,
        dof: cv.dof,
        p_value: cv.p_value,
        log_bf,
        degenerate: table.is_degenerate(),
    }
}
