//! Policy comparison, partial adjustment sweep and winners/losers analysis.
//!
//! Policies are fitted on a training split and evaluated on a held-out
//! split, always against the original (unadjusted) held-out scores.

mod kmeans;

use serde::{Deserialize, Serialize};

use crate::adjust::{blend_features, mq_adjust_scores, mq_adjust_table, AdjustedFeatures, CdfModel};
use crate::data::{Assignment, Dataset, FeatureColumn, FeatureKind, FeatureTable, ScoreMatrix};
use crate::error::{Error, Result};
use crate::metrics::{FairnessReport, DEFAULT_PRIOR_CONCENTRATION};
use crate::probsplit::{predict_prob, transform, ProbSplitPolicy};
use crate::rng::{self, domain};
use crate::scores::{blackbox_policy, blend_scores, evaluate_policy, PolicyEvalReport};
use crate::tree::{fit_tree, predict_tree, PolicyTree, Scale, SplitCandidates, DEFAULT_N_POINTS};

pub use kmeans::{
    cluster_labels, kmeans_best, kmeans_cluster, kmeans_once, silhouette_1d, Cluster, ClusterSummary,
    KMeansFit, MAX_ITER, RESTARTS,
};

pub const DEFAULT_TRAIN_FRACTION: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub depth: usize,
    pub n_points: usize,
    pub train_fraction: f64,
    pub prior_concentration: f64,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            n_points: DEFAULT_N_POINTS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            prior_concentration: DEFAULT_PRIOR_CONCENTRATION,
            seed: 0,
        }
    }
}

/// Sorted, disjoint row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSplit {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl SampleSplit {
    /// Uniform random split; `round(n * train_fraction)` rows train.
    pub fn random(n: usize, train_fraction: f64, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
        }
        let n_train = (n as f64 * train_fraction).round() as usize;
        if n_train == 0 || n_train == n {
            return Err(Error::Invalid(format!("{n} rows cannot be split with fraction {train_fraction}")));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::stream(seed, domain::SAMPLE_SPLIT, 0));
        let mut train = idx[..n_train].to_vec();
        let mut eval = idx[n_train..].to_vec();
        train.sort_unstable();
        eval.sort_unstable();
        Ok(Self { train, eval })
    }
}

/// Which inputs a heuristic adjusts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "A")]
    Features,
    #[serde(rename = "scores")]
    Scores,
    #[serde(rename = "both")]
    Both,
}

impl Target {
    pub fn adjusts_features(self) -> bool {
        matches!(self, Target::Features | Target::Both)
    }

    pub fn adjusts_scores(self) -> bool {
        matches!(self, Target::Scores | Target::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Features => "A",
            Target::Scores => "scores",
            Target::Both => "both",
        }
    }

    pub const ALL: [Target; 3] = [Target::Features, Target::Scores, Target::Both];
}

/// Row names of the comparison table.
pub mod rows {
    pub const OBSERVED: &str = "Observed";
    pub const BLACKBOX: &str = "Blackbox";
    pub const BLACKBOX_FAIR: &str = "Blackbox fair";
    pub const ALL_IN_ONE: &str = "All in one";
    pub const TREE_INCL_S: &str = "Tree unadjusted incl. S";
    pub const TREE_EXCL_S: &str = "Tree unadjusted excl. S";
    pub const TREE_ADJUST_A: &str = "Tree adjust A";
    pub const TREE_ADJUST_SCORES: &str = "Tree adjust scores";
    pub const TREE_ADJUST_BOTH: &str = "Tree adjust both";
    pub const PST_ADJUST_A: &str = "Prob. split tree adjust A";
    pub const PST_ADJUST_BOTH: &str = "Prob. split tree adjust both";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub interpretable: bool,
    pub policy_value: f64,
    pub fairness: FairnessReport,
    pub program_shares: Vec<f64>,
}

impl ComparisonRow {
    fn new(policy: &str, interpretable: bool, report: PolicyEvalReport) -> Self {
        Self {
            policy: policy.to_string(),
            interpretable,
            policy_value: report.policy_value,
            fairness: report.fairness,
            program_shares: report.program_shares,
        }
    }
}

/// Training-side artefacts shared by the comparison and the sweep.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: AnalysisConfig,
    pub split: SampleSplit,
    pub train: Dataset,
    pub eval: Dataset,
    pub adjusted_train: AdjustedFeatures,
    pub cdf_model: CdfModel,
    /// Held-out rows mapped through the training cdfs.
    pub adjusted_eval: AdjustedFeatures,
    pub adjusted_train_scores: ScoreMatrix,
}

pub fn prepare(data: &Dataset, config: &AnalysisConfig) -> Result<Prepared> {
    if config.depth > crate::tree::MAX_DEPTH {
        return Err(Error::DepthTooLarge(config.depth));
    }
    if let Some(v) = data.validate().first() {
        return Err(Error::Invalid(v.to_string()));
    }
    let split = SampleSplit::random(data.n_rows(), config.train_fraction, config.seed)?;
    let train = data.subset(&split.train);
    let eval = data.subset(&split.eval);
    let adjusted_train = mq_adjust_table(&train.features, &train.sensitive, config.seed)?;
    let cdf_model = CdfModel::fit(&train.features, &train.sensitive, &adjusted_train)?;
    let adjusted_eval = cdf_model.apply(&eval.features, &eval.sensitive, config.seed)?;
    let adjusted_train_scores = mq_adjust_scores(&train.scores, &train.sensitive, config.seed)?;
    Ok(Prepared {
        config: config.clone(),
        split,
        train,
        eval,
        adjusted_train,
        cdf_model,
        adjusted_eval,
        adjusted_train_scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTree {
    pub policy: String,
    pub tree: PolicyTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedProbTree {
    pub policy: String,
    pub policy_tree: ProbSplitPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub trees: Vec<NamedTree>,
    pub prob_trees: Vec<NamedProbTree>,
    /// Held-out assignment of every row, in row order.
    pub assignments: Vec<(String, Assignment)>,
    pub notes: Vec<String>,
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn assignment(&self, policy: &str) -> Option<&Assignment> {
        self.assignments.iter().find(|(p, _)| p == policy).map(|(_, a)| a)
    }
}

fn with_group_column(features: &FeatureTable, labels: &[usize], k: usize) -> Result<FeatureTable> {
    let mut t = features.clone();
    let name = if t.names().contains(&"S") { "__group".to_string() } else { "S".to_string() };
    t.push_column(FeatureColumn::discrete_with_support(
        name,
        labels.iter().map(|&l| l as f64).collect(),
        (0..k).map(|g| g as f64).collect(),
    )?)?;
    Ok(t)
}

fn fit_on(features: &FeatureTable, scores: &ScoreMatrix, cfg: &AnalysisConfig, scale: Scale) -> Result<PolicyTree> {
    let candidates = SplitCandidates::from_table(features, cfg.n_points);
    fit_tree(features, scores, cfg.depth, &candidates, scale)
}

/// Fits and evaluates every benchmark policy.
pub fn run_comparison(p: &Prepared) -> Result<Comparison> {
    let cfg = &p.config;
    let (train, eval) = (&p.train, &p.eval);
    let k = train.sensitive.n_groups();
    let prior = cfg.prior_concentration;
    let evaluate = |a: &Assignment| evaluate_policy(a, &eval.scores, &eval.sensitive, prior);
    let mut out = Comparison { rows: vec![], trees: vec![], prob_trees: vec![], assignments: vec![], notes: vec![] };
    let push = |out: &mut Comparison, name: &str, interpretable: bool, a: Assignment| -> Result<()> {
        out.rows.push(ComparisonRow::new(name, interpretable, evaluate(&a)?));
        out.assignments.push((name.to_string(), a));
        Ok(())
    };

    match &eval.observed {
        Some(obs) => push(&mut out, rows::OBSERVED, false, obs.clone())?,
        None => out.notes.push("no observed assignment supplied; Observed row omitted".into()),
    }
    push(&mut out, rows::BLACKBOX, false, blackbox_policy(&eval.scores))?;
    let fair_seed = rng::child_seed(cfg.seed, domain::BLACKBOX_FAIR, 0);
    let fair_scores = mq_adjust_scores(&eval.scores, &eval.sensitive, fair_seed)?;
    push(&mut out, rows::BLACKBOX_FAIR, false, blackbox_policy(&fair_scores))?;
    let leaf = fit_tree(&FeatureTable::empty(train.n_rows()), &train.scores, 0, &SplitCandidates { thresholds: vec![] }, Scale::Raw)?;
    let constant = predict_tree(&leaf, &FeatureTable::empty(eval.n_rows()))?;
    push(&mut out, rows::ALL_IN_ONE, true, constant)?;

    // unadjusted, with the group label as an extra discrete feature
    let train_s = with_group_column(&train.features, train.sensitive.labels(), k)?;
    let eval_s = with_group_column(&eval.features, eval.sensitive.labels(), k)?;
    let tree = fit_on(&train_s, &train.scores, cfg, Scale::Raw)?;
    push(&mut out, rows::TREE_INCL_S, true, predict_tree(&tree, &eval_s)?)?;
    out.trees.push(NamedTree { policy: rows::TREE_INCL_S.into(), tree });

    let tree = fit_on(&train.features, &train.scores, cfg, Scale::Raw)?;
    push(&mut out, rows::TREE_EXCL_S, true, predict_tree(&tree, &eval.features)?)?;
    out.trees.push(NamedTree { policy: rows::TREE_EXCL_S.into(), tree });

    let cdf_train = p.adjusted_train.cdf_table();
    let cdf_eval = p.adjusted_eval.cdf_table();
    let tree_a = fit_on(&cdf_train, &train.scores, cfg, Scale::Cdf)?;
    push(&mut out, rows::TREE_ADJUST_A, false, predict_tree(&tree_a, &cdf_eval)?)?;

    let tree_g = fit_on(&train.features, &p.adjusted_train_scores, cfg, Scale::Raw)?;
    push(&mut out, rows::TREE_ADJUST_SCORES, true, predict_tree(&tree_g, &eval.features)?)?;

    let tree_b = fit_on(&cdf_train, &p.adjusted_train_scores, cfg, Scale::Cdf)?;
    push(&mut out, rows::TREE_ADJUST_BOTH, false, predict_tree(&tree_b, &cdf_eval)?)?;

    for (i, (name, tree)) in [(rows::PST_ADJUST_A, &tree_a), (rows::PST_ADJUST_BOTH, &tree_b)].into_iter().enumerate() {
        let policy = transform(tree, &p.adjusted_train, &train.features, &train.sensitive)?;
        let seed = rng::child_seed(cfg.seed, domain::PREDICT_PROB, i as u64);
        push(&mut out, name, true, predict_prob(&policy, &eval.features, &eval.sensitive, seed)?)?;
        out.prob_trees.push(NamedProbTree { policy: name.into(), policy_tree: policy });
    }
    out.trees.push(NamedTree { policy: rows::TREE_ADJUST_A.into(), tree: tree_a });
    out.trees.push(NamedTree { policy: rows::TREE_ADJUST_SCORES.into(), tree: tree_g });
    out.trees.push(NamedTree { policy: rows::TREE_ADJUST_BOTH.into(), tree: tree_b });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub target: Target,
    pub lambda: f64,
    pub policy_value: f64,
    pub cramers_v: f64,
    pub p_value: f64,
    pub log_bf: f64,
}

fn blended_features(p: &Prepared, lambda: f64) -> Result<(FeatureTable, FeatureTable)> {
    Ok((
        blend_features(&p.train.features, &p.adjusted_train, lambda)?,
        blend_features(&p.eval.features, &p.adjusted_eval, lambda)?,
    ))
}

/// Refits the tree for every `(target, lambda)` with features
/// `(1 - lambda) A + lambda A~` and/or scores blended the same way.
pub fn partial_sweep(p: &Prepared, lambdas: &[f64], targets: &[Target]) -> Result<Vec<SweepPoint>> {
    if let Some(&bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::LambdaOutOfRange(bad));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("lambda grid must be sorted".into()));
    }
    let cfg = &p.config;
    let mut out = Vec::with_capacity(lambdas.len() * targets.len());
    for &target in targets {
        for &lambda in lambdas {
            let (train_f, eval_f) = if target.adjusts_features() {
                blended_features(p, lambda)?
            } else {
                (p.train.features.clone(), p.eval.features.clone())
            };
            let scores = if target.adjusts_scores() {
                blend_scores(&p.train.scores, &p.adjusted_train_scores, lambda)?
            } else {
                p.train.scores.clone()
            };
            let tree = fit_on(&train_f, &scores, cfg, Scale::Raw)?;
            let a = predict_tree(&tree, &eval_f)?;
            let r = evaluate_policy(&a, &p.eval.scores, &p.eval.sensitive, cfg.prior_concentration)?;
            out.push(SweepPoint {
                target,
                lambda,
                policy_value: r.policy_value,
                cramers_v: r.fairness.cramers_v,
                p_value: r.fairness.p_value,
                log_bf: r.fairness.log_bf,
            });
        }
    }
    Ok(out)
}

/// `delta_i = Gamma_{b(i)} - Gamma_{a(i)}`.
pub fn winners_losers(policy_a: &Assignment, policy_b: &Assignment, scores: &ScoreMatrix) -> Result<Vec<f64>> {
    if policy_a.len() != scores.n_rows() || policy_b.len() != scores.n_rows() {
        return Err(Error::Shape("assignments and scores differ in length".into()));
    }
    let m = scores.n_treatments();
    policy_a
        .0
        .iter()
        .zip(&policy_b.0)
        .enumerate()
        .map(|(i, (&a, &b))| {
            if a >= m || b >= m {
                return Err(Error::Invalid(format!("treatment out of range in row {i}")));
            }
            Ok(scores.get(i, b) - scores.get(i, a))
        })
        .collect()
}

/// Features and covariates side by side for cluster summaries.
pub fn cluster_covariates(data: &Dataset) -> FeatureTable {
    let mut t = data.features.clone();
    if let Some(c) = &data.covariates {
        for col in c.columns() {
            let mut col = col.clone();
            if t.names().contains(&col.name.as_str()) {
                col.name = format!("{} (covariate)", col.name);
            }
            if let FeatureKind::Discrete { .. } = col.kind {
                col.kind = FeatureKind::Continuous;
            }
            t.push_column(col).expect("aligned rows");
        }
    }
    t
}
