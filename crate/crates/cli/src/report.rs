//! Report files. Every CSV here reads back through [`crate::io::RawTable`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fairpol_core::analysis::{ClusterSummary, Comparison, NamedProbTree, NamedTree, SweepPoint};
use fairpol_core::probsplit::condense;
use serde::Serialize;

use crate::error::CliResult;
use crate::io::{fmt_f64, write_csv, write_json};

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_TXT: &str = "comparison.txt";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CLUSTERS_CSV: &str = "clusters.csv";
pub const TREES_TXT: &str = "trees.txt";
pub const TREES_JSON: &str = "trees.json";
pub const METADATA_JSON: &str = "run_metadata.json";

pub fn comparison_header(n_treatments: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["policy", "interpretable", "policy_value", "cramers_v", "p_value", "log_bf"].map(String::from).to_vec();
    h.extend((0..n_treatments).map(|d| format!("share_{d}")));
    h
}

pub fn write_comparison(dir: &Path, c: &Comparison) -> CliResult<PathBuf> {
    let m = c.rows.first().map_or(0, |r| r.program_shares.len());
    let rows: Vec<Vec<String>> = c
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.policy.clone(),
                r.interpretable.to_string(),
                fmt_f64(r.policy_value),
                fmt_f64(r.fairness.cramers_v),
                fmt_f64(r.fairness.p_value),
                fmt_f64(r.fairness.log_bf),
            ];
            cells.extend(r.program_shares.iter().map(|&s| fmt_f64(s)));
            cells
        })
        .collect();
    let path = dir.join(COMPARISON_CSV);
    write_csv(&path, &comparison_header(m), &rows)?;
    Ok(path)
}

/// Column-aligned text table with rounded numbers.
pub fn comparison_text(c: &Comparison, treatment_names: &[String]) -> String {
    let mut header = vec!["Policy".to_string(), "Interp.".into(), "Value".into(), "V".into(), "p".into(), "log BF".into()];
    header.extend(treatment_names.iter().map(|t| format!("% {t}")));
    let mut lines = vec![header];
    for r in &c.rows {
        let mut l = vec![
            r.policy.clone(),
            if r.interpretable { "yes".into() } else { "no".into() },
            format!("{:.4}", r.policy_value),
            format!("{:.3}", r.fairness.cramers_v),
            format!("{:.3}", r.fairness.p_value),
            format!("{:.2}", r.fairness.log_bf),
        ];
        l.extend(r.program_shares.iter().map(|s| format!("{:.1}", 100.0 * s)));
        lines.push(l);
    }
    align(&lines)
}

fn align(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> =
        (0..cols).map(|j| lines.iter().filter_map(|l| l.get(j)).map(|c| c.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for l in lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = width[j]) } else { format!("{c:>w$}", w = width[j]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

pub const SWEEP_HEADER: [&str; 6] = ["target", "lambda", "policy_value", "cramers_v", "p_value", "log_bf"];

pub fn write_sweep(dir: &Path, points: &[SweepPoint]) -> CliResult<PathBuf> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.target.name().to_string(),
                fmt_f64(p.lambda),
                fmt_f64(p.policy_value),
                fmt_f64(p.cramers_v),
                fmt_f64(p.p_value),
                fmt_f64(p.log_bf),
            ]
        })
        .collect();
    let path = dir.join(SWEEP_CSV);
    write_csv(&path, &SWEEP_HEADER.map(String::from), &rows)?;
    Ok(path)
}

/// One row per cluster in ascending mean delta; covariate means follow.
pub fn write_clusters(dir: &Path, s: &ClusterSummary) -> CliResult<PathBuf> {
    let mut header: Vec<String> = ["cluster", "label", "size", "share", "mean_delta"].map(String::from).to_vec();
    header.extend(s.covariate_names.iter().map(|n| format!("mean_{n}")));
    let n: usize = s.clusters.iter().map(|c| c.size).sum();
    let rows: Vec<Vec<String>> = s
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut cells = vec![
                i.to_string(),
                c.label.clone(),
                c.size.to_string(),
                fmt_f64(c.size as f64 / n.max(1) as f64),
                fmt_f64(c.mean_delta),
            ];
            cells.extend(c.covariate_means.iter().map(|&v| fmt_f64(v)));
            cells
        })
        .collect();
    let path = dir.join(CLUSTERS_CSV);
    write_csv(&path, &header, &rows)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeBundle<'a> {
    pub trees: &'a [NamedTree],
    pub prob_trees: &'a [NamedProbTree],
}

pub fn trees_text(trees: &[NamedTree], prob_trees: &[NamedProbTree]) -> String {
    let mut out = String::new();
    for t in trees {
        let _ = writeln!(out, "## {}", t.policy);
        out.push_str(&t.tree.render_text());
        out.push('\n');
    }
    for t in prob_trees {
        let _ = writeln!(out, "## {}", t.policy);
        out.push_str(&condense(&t.policy_tree).render_text());
        out.push('\n');
    }
    out
}

pub fn write_trees(dir: &Path, trees: &[NamedTree], prob_trees: &[NamedProbTree]) -> CliResult<Vec<PathBuf>> {
    let txt = dir.join(TREES_TXT);
    std::fs::write(&txt, trees_text(trees, prob_trees)).map_err(|e| crate::error::CliError::io(&txt, e))?;
    let json = dir.join(TREES_JSON);
    write_json(&json, &TreeBundle { trees, prob_trees })?;
    Ok(vec![txt, json])
}

#[derive(Debug, Clone, Serialize)]
pub struct BayesFactorInfo {
    pub prior: &'static str,
    pub prior_concentration: f64,
    pub log_base: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterInfo {
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
    pub fallback: bool,
    pub compared: [String; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct DataInfo {
    pub n_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_eval: Option<usize>,
    pub groups: Vec<String>,
    pub treatments: Vec<String>,
    pub features: Vec<String>,
}

/// Run provenance. Holds no timestamps so reruns reproduce it byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub seed_defaulted: bool,
    pub config_sha256: String,
    pub data: DataInfo,
    pub bayes_factor: BayesFactorInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterInfo>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl RunMetadata {
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(METADATA_JSON);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn bayes_factor_info(prior_concentration: f64) -> BayesFactorInfo {
    BayesFactorInfo { prior: "symmetric Dirichlet", prior_concentration, log_base: "natural" }
}

/// File names relative to the output directory, for the metadata.
pub fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect()
}
