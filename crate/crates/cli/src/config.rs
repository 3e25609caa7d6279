//! Run configuration: one JSON document.
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use fairpol_core::analysis::{AnalysisConfig, Target, DEFAULT_TRAIN_FRACTION};
use fairpol_core::metrics::DEFAULT_PRIOR_CONCENTRATION;
use fairpol_core::synthetic::SyntheticSpec;
use fairpol_core::tree::{DEFAULT_N_POINTS, MAX_DEPTH};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRole {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: KindName,
    /// Explicit support of a discrete column; derived from the data if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<f64>>,
}

fn default_kind() -> KindName {
    KindName::Continuous
}

/// Column names per role. Empty lists mean "every column of the file".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub features: Vec<ColumnRole>,
    pub sensitive: Vec<String>,
    pub scores: Vec<String>,
    pub observed: Option<String>,
    pub covariates: Vec<ColumnRole>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreType {
    Iapo,
    Aipw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisancePaths {
    pub mu: PathBuf,
    pub e: PathBuf,
    pub outcomes: PathBuf,
    pub score_type: ScoreType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub features: PathBuf,
    pub sensitive: PathBuf,
    /// Either `scores` or `nuisance` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nuisance: Option<NuisancePaths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub min_share: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 10, min_share: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataPaths>,
    pub synthetic: Option<SyntheticSpec>,
    pub roles: Roles,
    pub depth: usize,
    pub n_points: usize,
    pub lambdas: Vec<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub targets: Vec<Target>,
    pub train_fraction: f64,
    pub prior_concentration: f64,
    pub cluster: ClusterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: None,
            roles: Roles::default(),
            depth: 3,
            n_points: DEFAULT_N_POINTS,
            lambdas: Vec::new(),
            seed: None,
            out: None,
            targets: Target::ALL.to_vec(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
            prior_concentration: DEFAULT_PRIOR_CONCENTRATION,
            cluster: ClusterConfig::default(),
        }
    }
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn read_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let config = parse_config(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let config: RunConfig =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config JSON: {e}")))?;
    config.check()?;
    Ok(config)
}

impl RunConfig {
    pub fn check(&self) -> CliResult<()> {
        let err = |m: String| Err(CliError::Config(m));
        if self.depth > MAX_DEPTH {
            return err(format!("depth must be at most {MAX_DEPTH}, got {}", self.depth));
        }
        if self.n_points == 0 {
            return err("n_points must be at least 1".into());
        }
        if let Some(&l) = self.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return err(format!("lambda {l} lies outside [0, 1]"));
        }
        if self.lambdas.windows(2).any(|w| w[0] > w[1]) {
            return err("lambdas must be sorted ascending".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return err(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.prior_concentration > 0.0) {
            return err("prior_concentration must be positive".into());
        }
        let c = &self.cluster;
        if c.k_min < 2 || c.k_max < c.k_min || c.k_max > 10 {
            return err(format!("cluster k range {}..={} must lie within 2..=10", c.k_min, c.k_max));
        }
        if !(c.min_share > 0.0 && c.min_share < 0.5) {
            return err(format!("cluster min_share must lie in (0, 0.5), got {}", c.min_share));
        }
        if let Some(d) = &self.data {
            if d.scores.is_none() && d.nuisance.is_none() {
                return err("data needs either a scores file or nuisance estimates".into());
            }
            if d.nuisance.as_ref().is_some_and(|n| n.score_type == ScoreType::Aipw) && d.observed.is_none() {
                return err("AIPW scores need an observed treatment file".into());
            }
        }
        self.check_roles()
    }

    fn check_roles(&self) -> CliResult<()> {
        let r = &self.roles;
        let mut seen = HashSet::new();
        let named = r
            .features
            .iter()
            .map(|c| ("features", c.name.as_str()))
            .chain(r.sensitive.iter().map(|s| ("sensitive", s.as_str())))
            .chain(r.observed.iter().map(|s| ("observed", s.as_str())))
            .chain(r.covariates.iter().map(|c| ("covariates", c.name.as_str())));
        for (role, name) in named {
            if !seen.insert(name) {
                return Err(CliError::Config(format!("column '{name}' is assigned more than one role (again as {role})")));
            }
        }
        let mut treatments = HashSet::new();
        for s in &r.scores {
            if !treatments.insert(s.as_str()) {
                return Err(CliError::Config(format!("score column '{s}' is listed twice")));
            }
        }
        for c in r.features.iter().chain(&r.covariates) {
            if c.support.is_some() && c.kind == KindName::Continuous {
                return Err(CliError::Config(format!("column '{}': support is only valid for discrete columns", c.name)));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            depth: self.depth,
            n_points: self.n_points,
            train_fraction: self.train_fraction,
            prior_concentration: self.prior_concentration,
            seed: self.seed(),
        }
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
