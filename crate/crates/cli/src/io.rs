//! CSV dialect: comma separated, one header row, UTF-8, `.` decimals.
//! Floats are written in shortest round-trip form, so reading back what was
//! written reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairpol_core::data::{
    Assignment, Dataset, FeatureColumn, FeatureTable, NuisanceEstimates, ScoreMatrix, SensitiveVector,
};
use fairpol_core::scores::{aipw_scores, iapo_scores};
use fairpol_core::synthetic::SyntheticData;

use crate::config::{ColumnRole, DataPaths, KindName, LoadedConfig, Roles, RunConfig, ScoreType};
use crate::error::{CliError, CliResult};

/// Group counts above this trigger a warning: cells get thin quickly.
pub const MANY_GROUPS: usize = 32;

/// A CSV file held as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            rows.push(record.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Validation(format!("{}: no column named '{name}'", self.path.display()))
        })
    }

    pub fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Parses one column; errors name the file, data row (1-based) and column.
    pub fn numbers(&self, name: &str) -> CliResult<Vec<f64>> {
        let j = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].parse::<f64>().map_err(|_| {
                    CliError::Validation(format!(
                        "{}: row {}, column '{name}': cannot parse '{}' as a number",
                        self.path.display(),
                        i + 1,
                        r[j]
                    ))
                })
            })
            .collect()
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        CliError::io(path, e)
    } else {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

/// Writes a header and rows of already formatted cells.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same value; very small
/// and very large magnitudes use exponent notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_columns(path: &Path, names: &[String], columns: &[Vec<f64>]) -> CliResult<()> {
    let n = columns.first().map_or(0, Vec::len);
    let rows: Vec<Vec<String>> = (0..n).map(|i| columns.iter().map(|c| fmt_f64(c[i])).collect()).collect();
    write_csv(path, names, &rows)
}

pub fn write_table(path: &Path, table: &FeatureTable) -> CliResult<()> {
    let names: Vec<String> = table.columns().iter().map(|c| c.name.clone()).collect();
    let cols: Vec<Vec<f64>> = table.columns().iter().map(|c| c.values.clone()).collect();
    write_columns(path, &names, &cols)
}

pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> CliResult<()> {
    let cols: Vec<Vec<f64>> = (0..scores.n_treatments()).map(|d| scores.column(d)).collect();
    write_columns(path, scores.treatment_names(), &cols)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn build_table(raw: &RawTable, roles: &[ColumnRole]) -> CliResult<FeatureTable> {
    let roles: Vec<ColumnRole> = if roles.is_empty() {
        raw.header
            .iter()
            .map(|h| ColumnRole { name: h.clone(), kind: KindName::Continuous, support: None })
            .collect()
    } else {
        roles.to_vec()
    };
    let mut cols = Vec::with_capacity(roles.len());
    for role in &roles {
        let values = raw.numbers(&role.name)?;
        let col = match (role.kind, &role.support) {
            (KindName::Continuous, _) => FeatureColumn::continuous(role.name.clone(), values),
            (KindName::Discrete, None) => FeatureColumn::discrete(role.name.clone(), values),
            (KindName::Discrete, Some(s)) => {
                FeatureColumn::discrete_with_support(role.name.clone(), values, s.clone())?
            }
        };
        cols.push(col);
    }
    Ok(FeatureTable::new(cols)?)
}

/// Sort key that orders numeric cells numerically and the rest lexically.
fn cell_key(s: &str) -> (u8, f64, String) {
    match s.parse::<f64>() {
        Ok(v) => (0, v, String::new()),
        Err(_) => (1, 0.0, s.to_string()),
    }
}

/// Encodes the cross-product of the sensitive columns as one label per row.
/// Groups are ordered by their value tuples.
pub fn encode_sensitive(raw: &RawTable, columns: &[String]) -> CliResult<(SensitiveVector, Vec<String>)> {
    let columns: Vec<String> = if columns.is_empty() { raw.header.clone() } else { columns.to_vec() };
    if columns.is_empty() {
        return Err(CliError::Validation(format!("{}: no sensitive columns", raw.path.display())));
    }
    // numeric cells in canonical form, so "1" and "1.0" name one group
    let canonical = |s: String| s.parse::<f64>().map_or(s, |v| format!("{v}"));
    let cells: Vec<Vec<String>> = columns
        .iter()
        .map(|c| raw.strings(c).map(|v| v.into_iter().map(canonical).collect()))
        .collect::<CliResult<_>>()?;
    let n = raw.n_rows();
    let tuples: Vec<Vec<String>> = (0..n).map(|i| cells.iter().map(|c| c[i].clone()).collect()).collect();
    let mut distinct: Vec<Vec<String>> = tuples.clone();
    distinct.sort_by(|a, b| {
        let ka: Vec<_> = a.iter().map(|s| cell_key(s)).collect();
        let kb: Vec<_> = b.iter().map(|s| cell_key(s)).collect();
        ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    let index: BTreeMap<Vec<String>, usize> = distinct.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
    let labels = tuples.iter().map(|t| index[t]).collect();
    let names = distinct
        .iter()
        .map(|t| columns.iter().zip(t).map(|(c, v)| format!("{c}={v}")).collect::<Vec<_>>().join(","))
        .collect();
    let mut warnings = Vec::new();
    if distinct.len() > MANY_GROUPS {
        warnings.push(format!(
            "{} sensitive groups exceed {MANY_GROUPS}; group-level cdfs rest on few rows",
            distinct.len()
        ));
    }
    Ok((SensitiveVector::new(labels, names)?, warnings))
}

/// Observed treatments as indices or treatment names.
pub fn parse_observed(raw: &RawTable, column: Option<&str>, treatments: &[String]) -> CliResult<Assignment> {
    let column = match column {
        Some(c) => c.to_string(),
        None => raw.header.first().cloned().ok_or_else(|| {
            CliError::Validation(format!("{}: no columns", raw.path.display()))
        })?,
    };
    let cells = raw.strings(&column)?;
    let mut out = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let d = if let Some(d) = treatments.iter().position(|t| t == c) {
            d
        } else if let Ok(d) = c.parse::<usize>() {
            d
        } else {
            return Err(CliError::Validation(format!(
                "{}: row {}, column '{column}': '{c}' is neither a treatment index nor a treatment name",
                raw.path.display(),
                i + 1
            )));
        };
        if d >= treatments.len() {
            return Err(CliError::Validation(format!(
                "{}: row {}, column '{column}': treatment {d} out of range",
                raw.path.display(),
                i + 1
            )));
        }
        out.push(d);
    }
    Ok(Assignment(out))
}

fn score_matrix(raw: &RawTable, names: &[String]) -> CliResult<ScoreMatrix> {
    let names: Vec<String> = if names.is_empty() { raw.header.clone() } else { names.to_vec() };
    let cols: Vec<Vec<f64>> = names.iter().map(|n| raw.numbers(n)).collect::<CliResult<_>>()?;
    Ok(ScoreMatrix::from_columns(&cols, names)?)
}

/// A dataset plus loader warnings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

/// Reads and validates the files named in `data`.
pub fn load_dataset(cfg: &LoadedConfig) -> CliResult<Loaded> {
    let data = cfg.config.data.as_ref().ok_or_else(|| {
        CliError::Config("config has no data block (run `synth` first or add one)".into())
    })?;
    load_from_paths(data, &cfg.config.roles, &|p| cfg.resolve(p))
}

pub fn load_from_paths(data: &DataPaths, roles: &Roles, resolve: &dyn Fn(&Path) -> PathBuf) -> CliResult<Loaded> {
    let features_raw = RawTable::read(&resolve(&data.features))?;
    let features = build_table(&features_raw, &roles.features)?;
    let (sensitive, warnings) = encode_sensitive(&RawTable::read(&resolve(&data.sensitive))?, &roles.sensitive)?;

    let (mut scores, nuisance_raw) = match (&data.scores, &data.nuisance) {
        (Some(p), _) => (Some(score_matrix(&RawTable::read(&resolve(p))?, &roles.scores)?), data.nuisance.as_ref()),
        (None, Some(n)) => (None, Some(n)),
        (None, None) => return Err(CliError::Config("no scores or nuisance files".into())),
    };
    let treatment_names: Vec<String> = match &scores {
        Some(s) => s.treatment_names().to_vec(),
        None => {
            let n = nuisance_raw.expect("checked above");
            let mu = RawTable::read(&resolve(&n.mu))?;
            if roles.scores.is_empty() { mu.header.clone() } else { roles.scores.clone() }
        }
    };
    let observed = match &data.observed {
        Some(p) => Some(parse_observed(&RawTable::read(&resolve(p))?, roles.observed.as_deref(), &treatment_names)?),
        None => None,
    };
    if scores.is_none() {
        let n = nuisance_raw.expect("checked above");
        let mu = score_matrix(&RawTable::read(&resolve(&n.mu))?, &treatment_names)?;
        let e = score_matrix(&RawTable::read(&resolve(&n.e))?, &treatment_names)?;
        let y_raw = RawTable::read(&resolve(&n.outcomes))?;
        let y_col = y_raw.header.first().cloned().unwrap_or_default();
        let y = y_raw.numbers(&y_col)?;
        let d_obs = match (&observed, n.score_type) {
            (Some(o), _) => o.0.clone(),
            (None, ScoreType::Iapo) => vec![0; mu.n_rows()],
            (None, ScoreType::Aipw) => {
                return Err(CliError::Config("AIPW scores need an observed treatment file".into()))
            }
        };
        let nuisance = NuisanceEstimates::new(mu, e, y, d_obs)?;
        scores = Some(match n.score_type {
            ScoreType::Iapo => iapo_scores(&nuisance),
            ScoreType::Aipw => aipw_scores(&nuisance)?,
        });
    }
    let covariates = match &data.covariates {
        Some(p) => Some(build_table(&RawTable::read(&resolve(p))?, &roles.covariates)?),
        None => None,
    };
    let dataset = Dataset { features, sensitive, scores: scores.expect("set above"), observed, covariates };
    let violations = dataset.validate();
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(CliError::Validation(text.join("; ")));
    }
    Ok(Loaded { dataset, warnings })
}

/// Writes a generated dataset and a config that loads it back.
pub fn write_synthetic(dir: &Path, data: &SyntheticData, base: &RunConfig) -> CliResult<RunConfig> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let d = &data.dataset;
    write_table(&dir.join("features.csv"), &d.features)?;
    let (names, cols): (Vec<String>, Vec<Vec<f64>>) = data.sensitive_columns.iter().cloned().unzip();
    write_columns(&dir.join("sensitive.csv"), &names, &cols)?;
    write_scores(&dir.join("scores.csv"), &d.scores)?;
    let treatments = d.scores.treatment_names();
    if let Some(obs) = &d.observed {
        let rows: Vec<Vec<String>> = obs.0.iter().map(|&t| vec![treatments[t].clone()]).collect();
        write_csv(&dir.join("observed.csv"), &["treatment".to_string()], &rows)?;
    }
    if let Some(c) = &d.covariates {
        write_table(&dir.join("covariates.csv"), c)?;
    }
    write_scores(&dir.join("mu.csv"), &data.nuisance.mu)?;
    write_scores(&dir.join("e.csv"), &data.nuisance.e)?;
    write_columns(&dir.join("outcomes.csv"), &["y".to_string()], std::slice::from_ref(&data.nuisance.y))?;
    write_json(&dir.join("truth.json"), &data.truth)?;

    let role = |c: &FeatureColumn| ColumnRole {
        name: c.name.clone(),
        kind: if c.kind.is_discrete() { KindName::Discrete } else { KindName::Continuous },
        support: match &c.kind {
            fairpol_core::FeatureKind::Discrete { support } => Some(support.clone()),
            fairpol_core::FeatureKind::Continuous => None,
        },
    };
    let config = RunConfig {
        data: Some(DataPaths {
            features: "features.csv".into(),
            sensitive: "sensitive.csv".into(),
            scores: Some("scores.csv".into()),
            observed: d.observed.as_ref().map(|_| "observed.csv".into()),
            covariates: d.covariates.as_ref().map(|_| "covariates.csv".into()),
            nuisance: None,
        }),
        synthetic: None,
        roles: Roles {
            features: d.features.columns().iter().map(role).collect(),
            sensitive: names,
            scores: treatments.to_vec(),
            observed: d.observed.as_ref().map(|_| "treatment".to_string()),
            covariates: d.covariates.as_ref().map(|c| c.columns().iter().map(role).collect()).unwrap_or_default(),
        },
        out: Some("results".into()),
        ..base.clone()
    };
    write_json(&dir.join("config.json"), &config)?;
    Ok(config)
}
