//! Verb dispatch. Stage verbs (`adjust`, `fit`, `transform`, `evaluate`) use
//! every row; `compare`, `sweep` and `cluster` fit on a training split and
//! report on the held-out rows.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fairpol_core::adjust::{mq_adjust_scores, mq_adjust_table, AdjustedFeatures};
use fairpol_core::analysis::{
    cluster_covariates, kmeans_cluster, partial_sweep, prepare, rows, run_comparison, winners_losers, ClusterSummary,
    Comparison, Prepared,
};
use fairpol_core::probsplit::{condense, predict_prob, transform, ProbSplitPolicy};
use fairpol_core::rng::{self, domain};
use fairpol_core::scores::evaluate_policy;
use fairpol_core::synthetic::generate_synthetic;
use fairpol_core::tree::{fit_tree, predict_tree, PolicyTree, Scale, SplitCandidates};
use fairpol_core::{Assignment, Dataset};
use serde::Serialize;

use crate::config::{read_config, LoadedConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{load_dataset, parse_observed, write_json, write_scores, write_synthetic, write_table, RawTable};
use crate::report::{self, ClusterInfo, DataInfo, RunMetadata};

pub const DEFAULT_OUT: &str = "results";

#[derive(Debug, Parser)]
#[command(name = "fairpol", version, about = "Fairness-aware policy trees from precomputed scores")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitTarget {
    /// Original features and scores.
    None,
    /// Group-adjusted features, tree on the cdf scale.
    #[value(name = "A")]
    A,
    /// Group-adjusted scores.
    Scores,
    /// Both adjustments.
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and check the input data.
    Validate,
    /// Write group-adjusted features, their cdf values and adjusted scores.
    Adjust,
    /// Fit one policy tree on all rows.
    Fit {
        #[arg(long, value_enum, default_value_t = FitTarget::None)]
        target: FitTarget,
    },
    /// Turn a cdf-scale tree into group-specific probabilistic split trees.
    Transform {
        #[arg(long)]
        tree: PathBuf,
    },
    /// Policy value and fairness of an assignment, a tree or the observed policy.
    Evaluate {
        /// CSV whose first column holds treatment indices or names.
        #[arg(long, conflicts_with = "tree")]
        assignment: Option<PathBuf>,
        /// Output of `fit` or `transform`.
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Benchmark comparison, sweep, clustering and tree renderings.
    Compare,
    /// Partial adjustment sweep over the configured lambda grid.
    Sweep,
    /// Winners and losers of the fairness-aware reassignment.
    Cluster,
    /// Write a synthetic dataset and a config that reads it.
    Synth,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Adjust => "adjust",
            Command::Fit { .. } => "fit",
            Command::Transform { .. } => "transform",
            Command::Evaluate { .. } => "evaluate",
            Command::Compare => "compare",
            Command::Sweep => "sweep",
            Command::Cluster => "cluster",
            Command::Synth => "synth",
        }
    }
}

/// Effective settings after command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: LoadedConfig,
    pub out_dir: PathBuf,
    pub seed_defaulted: bool,
    pub command: &'static str,
}

impl Context {
    pub fn new(cli: &Cli) -> CliResult<Self> {
        let mut loaded = match &cli.config {
            Some(p) => read_config(p)?,
            None => LoadedConfig { config: RunConfig::default(), base_dir: PathBuf::from(".") },
        };
        let cfg = &mut loaded.config;
        if cli.seed.is_some() {
            cfg.seed = cli.seed;
        }
        let seed_defaulted = cfg.seed.is_none();
        cfg.seed = Some(cfg.seed());
        let configured_out = cfg.out.clone();
        let out_dir = match (&cli.out, configured_out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => loaded.resolve(&o),
            (None, None) => PathBuf::from(DEFAULT_OUT),
        };
        Ok(Self { loaded, out_dir, seed_defaulted, command: cli.command.name() })
    }

    pub fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    pub fn seed(&self) -> u64 {
        self.config().seed()
    }

    fn ensure_out(&self) -> CliResult<&Path> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| CliError::io(&self.out_dir, e))?;
        Ok(&self.out_dir)
    }

    /// Files named by the config, or the synthetic block generated in memory.
    pub fn dataset(&self) -> CliResult<(Dataset, Vec<String>)> {
        let cfg = self.config();
        if cfg.data.is_some() {
            let l = load_dataset(&self.loaded)?;
            return Ok((l.dataset, l.warnings));
        }
        match &cfg.synthetic {
            Some(spec) => Ok((generate_synthetic(spec, self.seed())?.dataset, vec![])),
            None => Err(CliError::Config("config needs a `data` or a `synthetic` block".into())),
        }
    }

    fn metadata(&self, data: &Dataset, warnings: Vec<String>) -> RunMetadata {
        RunMetadata {
            tool: "fairpol",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            seed: self.seed(),
            seed_defaulted: self.seed_defaulted,
            config_sha256: self.config().hash(),
            data: DataInfo {
                n_rows: data.n_rows(),
                n_train: None,
                n_eval: None,
                groups: data.sensitive.group_names().to_vec(),
                treatments: data.scores.treatment_names().to_vec(),
                features: data.features.names().iter().map(|s| s.to_string()).collect(),
            },
            bayes_factor: report::bayes_factor_info(self.config().prior_concentration),
            cluster: None,
            outputs: vec![],
            warnings,
            notes: vec![],
        }
    }
}

/// Runs one verb; the text it returns goes to stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Validate => validate(&ctx),
        Command::Adjust => adjust(&ctx),
        Command::Fit { target } => fit(&ctx, *target),
        Command::Transform { tree } => transform_tree(&ctx, tree),
        Command::Evaluate { assignment, tree } => evaluate(&ctx, assignment.as_deref(), tree.as_deref()),
        Command::Compare => compare(&ctx),
        Command::Sweep => sweep(&ctx),
        Command::Cluster => cluster(&ctx),
        Command::Synth => synth(&ctx),
    }
}

fn validate(ctx: &Context) -> CliResult<String> {
    let (d, warnings) = ctx.dataset()?;
    let mut out = format!(
        "ok: {} rows, {} features, {} treatments, {} sensitive groups\n",
        d.n_rows(),
        d.features.n_cols(),
        d.scores.n_treatments(),
        d.sensitive.n_groups()
    );
    for (name, size) in d.sensitive.group_names().iter().zip(d.sensitive.group_sizes()) {
        out.push_str(&format!("  {name}: {size}\n"));
    }
    for w in warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    Ok(out)
}

fn adjust(ctx: &Context) -> CliResult<String> {
    let (d, warnings) = ctx.dataset()?;
    let dir = ctx.ensure_out()?;
    let adjusted = mq_adjust_table(&d.features, &d.sensitive, ctx.seed())?;
    let scores = mq_adjust_scores(&d.scores, &d.sensitive, ctx.seed())?;
    let paths = [dir.join("adjusted_features.csv"), dir.join("cdf_values.csv"), dir.join("adjusted_scores.csv")];
    write_table(&paths[0], &adjusted.adjusted_table())?;
    write_table(&paths[1], &adjusted.cdf_table())?;
    write_scores(&paths[2], &scores)?;
    finish(ctx, &d, warnings, &paths, vec![], None)
}

/// Tree fitting inputs for one target on all rows.
fn fit_inputs(d: &Dataset, adjusted: &AdjustedFeatures, target: FitTarget, seed: u64) -> CliResult<PolicyTreeInputs> {
    let (features, scale) = match target {
        FitTarget::A | FitTarget::Both => (adjusted.cdf_table(), Scale::Cdf),
        FitTarget::None | FitTarget::Scores => (d.features.clone(), Scale::Raw),
    };
    let scores = match target {
        FitTarget::Scores | FitTarget::Both => mq_adjust_scores(&d.scores, &d.sensitive, seed)?,
        FitTarget::None | FitTarget::A => d.scores.clone(),
    };
    Ok(PolicyTreeInputs { features, scores, scale })
}

struct PolicyTreeInputs {
    features: fairpol_core::FeatureTable,
    scores: fairpol_core::ScoreMatrix,
    scale: Scale,
}

fn fit(ctx: &Context, target: FitTarget) -> CliResult<String> {
    let (d, warnings) = ctx.dataset()?;
    let cfg = ctx.config();
    let adjusted = mq_adjust_table(&d.features, &d.sensitive, ctx.seed())?;
    let inputs = fit_inputs(&d, &adjusted, target, ctx.seed())?;
    let candidates = SplitCandidates::from_table(&inputs.features, cfg.n_points);
    let tree = fit_tree(&inputs.features, &inputs.scores, cfg.depth, &candidates, inputs.scale)?;
    let dir = ctx.ensure_out()?;
    let paths = [dir.join("tree.json"), dir.join("tree.txt")];
    write_json(&paths[0], &tree)?;
    write_text(&paths[1], &tree.render_text())?;
    let mut out = tree.render_text();
    out.push_str(&format!("training value: {}\n", tree.training_value));
    finish(ctx, &d, warnings, &paths, vec![], None)?;
    Ok(out)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn transform_tree(ctx: &Context, tree_path: &Path) -> CliResult<String> {
    let tree: PolicyTree = read_json(tree_path)?;
    if tree.scale != Scale::Cdf {
        return Err(CliError::Validation(format!(
            "{}: transform needs a tree fitted on adjusted features (`fit --target A` or `both`)",
            tree_path.display()
        )));
    }
    let (d, warnings) = ctx.dataset()?;
    let adjusted = mq_adjust_table(&d.features, &d.sensitive, ctx.seed())?;
    let policy = transform(&tree, &adjusted, &d.features, &d.sensitive)?;
    let text = condense(&policy).render_text();
    let dir = ctx.ensure_out()?;
    let paths = [dir.join("prob_tree.json"), dir.join("prob_tree.txt")];
    write_json(&paths[0], &policy)?;
    write_text(&paths[1], &text)?;
    finish(ctx, &d, warnings, &paths, vec![], None)?;
    Ok(text)
}

/// A stored policy of either kind.
enum StoredPolicy {
    Tree(PolicyTree),
    Prob(ProbSplitPolicy),
}

fn read_policy(path: &Path) -> CliResult<StoredPolicy> {
    let value: serde_json::Value = read_json(path)?;
    let bad = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    if value.get("groups").is_some() {
        Ok(StoredPolicy::Prob(serde_json::from_value(value).map_err(bad)?))
    } else {
        Ok(StoredPolicy::Tree(serde_json::from_value(value).map_err(bad)?))
    }
}

#[derive(Debug, Serialize)]
struct Evaluation {
    policy: String,
    n_rows: usize,
    #[serde(flatten)]
    report: fairpol_core::scores::PolicyEvalReport,
}

fn evaluate(ctx: &Context, assignment: Option<&Path>, tree: Option<&Path>) -> CliResult<String> {
    let (d, warnings) = ctx.dataset()?;
    let (source, a) = match (assignment, tree) {
        (Some(p), _) => {
            let raw = RawTable::read(p)?;
            (p.display().to_string(), parse_observed(&raw, None, d.scores.treatment_names())?)
        }
        (None, Some(p)) => (p.display().to_string(), predict_stored(ctx, &d, &read_policy(p)?)?),
        (None, None) => match &d.observed {
            Some(o) => ("observed".to_string(), o.clone()),
            None => {
                return Err(CliError::Config(
                    "nothing to evaluate: pass --assignment or --tree, or supply observed treatments".into(),
                ))
            }
        },
    };
    let report = evaluate_policy(&a, &d.scores, &d.sensitive, ctx.config().prior_concentration)?;
    let e = Evaluation { policy: source, n_rows: d.n_rows(), report };
    let dir = ctx.ensure_out()?;
    let path = dir.join("evaluation.json");
    write_json(&path, &e)?;
    finish(ctx, &d, warnings, &[path], vec![], None)?;
    let f = &e.report.fairness;
    Ok(format!(
        "policy value {:.6}\ncramers_v {:.4}  p {:.4}  log_bf {:.3}\nshares {:?}\n",
        e.report.policy_value, f.cramers_v, f.p_value, f.log_bf, e.report.program_shares
    ))
}

fn predict_stored(ctx: &Context, d: &Dataset, policy: &StoredPolicy) -> CliResult<Assignment> {
    Ok(match policy {
        StoredPolicy::Tree(t) if t.scale == Scale::Raw => predict_tree(t, &d.features)?,
        StoredPolicy::Tree(t) => {
            let adjusted = mq_adjust_table(&d.features, &d.sensitive, ctx.seed())?;
            predict_tree(t, &adjusted.cdf_table())?
        }
        StoredPolicy::Prob(p) => {
            let seed = rng::child_seed(ctx.seed(), domain::PREDICT_PROB, 0);
            predict_prob(p, &d.features, &d.sensitive, seed)?
        }
    })
}

fn prepared(ctx: &Context) -> CliResult<(Dataset, Vec<String>, Prepared)> {
    let (d, warnings) = ctx.dataset()?;
    let p = prepare(&d, &ctx.config().analysis())?;
    Ok((d, warnings, p))
}

/// Delta between the fairness-unaware tree and the probabilistic split tree
/// on adjusted features, clustered on the held-out rows.
fn clusters(ctx: &Context, p: &Prepared, c: &Comparison) -> CliResult<(ClusterSummary, ClusterInfo)> {
    let get = |name: &str| {
        c.assignment(name).ok_or_else(|| CliError::Validation(format!("comparison lacks the row {name}")))
    };
    let (from, to) = (rows::TREE_EXCL_S, rows::PST_ADJUST_A);
    let delta = winners_losers(get(from)?, get(to)?, &p.eval.scores)?;
    let cc = &ctx.config().cluster;
    let s = kmeans_cluster(&delta, &cluster_covariates(&p.eval), cc.k_min, cc.k_max, cc.min_share, ctx.seed())?;
    let info = ClusterInfo {
        k: s.k,
        silhouette: s.silhouette,
        inertia: s.inertia,
        fallback: s.fallback,
        compared: [from.to_string(), to.to_string()],
    };
    Ok((s, info))
}

fn compare(ctx: &Context) -> CliResult<String> {
    let (d, warnings, p) = prepared(ctx)?;
    let cfg = ctx.config();
    let c = run_comparison(&p)?;
    let dir = ctx.ensure_out()?.to_path_buf();
    let text = report::comparison_text(&c, d.scores.treatment_names());
    let mut paths = vec![report::write_comparison(&dir, &c)?];
    let txt = dir.join(report::COMPARISON_TXT);
    write_text(&txt, &text)?;
    paths.push(txt);
    paths.extend(report::write_trees(&dir, &c.trees, &c.prob_trees)?);
    let mut notes = c.notes.clone();
    if cfg.lambdas.is_empty() {
        notes.push(sweep_omitted_note());
    } else {
        paths.push(report::write_sweep(&dir, &partial_sweep(&p, &cfg.lambdas, &cfg.targets)?)?);
    }
    let (s, info) = clusters(ctx, &p, &c)?;
    paths.push(report::write_clusters(&dir, &s)?);
    finish_split(ctx, &d, &p, warnings, &paths, notes, Some(info))?;
    Ok(text)
}

fn sweep_omitted_note() -> String {
    "lambda grid is empty; sweep.csv not written".to_string()
}

fn sweep(ctx: &Context) -> CliResult<String> {
    let (d, warnings, p) = prepared(ctx)?;
    let cfg = ctx.config();
    let dir = ctx.ensure_out()?.to_path_buf();
    if cfg.lambdas.is_empty() {
        finish_split(ctx, &d, &p, warnings, &[], vec![sweep_omitted_note()], None)?;
        return Ok(format!("{}\n", sweep_omitted_note()));
    }
    let points = partial_sweep(&p, &cfg.lambdas, &cfg.targets)?;
    let path = report::write_sweep(&dir, &points)?;
    finish_split(ctx, &d, &p, warnings, &[path], vec![], None)?;
    let mut out = String::from("target  lambda  value  V\n");
    for q in &points {
        out.push_str(&format!("{}  {}  {:.4}  {:.4}\n", q.target.name(), q.lambda, q.policy_value, q.cramers_v));
    }
    Ok(out)
}

fn cluster(ctx: &Context) -> CliResult<String> {
    let (d, warnings, p) = prepared(ctx)?;
    let c = run_comparison(&p)?;
    let (s, info) = clusters(ctx, &p, &c)?;
    let dir = ctx.ensure_out()?.to_path_buf();
    let path = report::write_clusters(&dir, &s)?;
    finish_split(ctx, &d, &p, warnings, &[path], c.notes.clone(), Some(info))?;
    let mut out = format!("k = {}, silhouette {:.3}{}\n", s.k, s.silhouette, if s.fallback { " (fallback)" } else { "" });
    for cl in &s.clusters {
        out.push_str(&format!("{:<12} size {:>6}  mean delta {:.4}\n", cl.label, cl.size, cl.mean_delta));
    }
    Ok(out)
}

fn synth(ctx: &Context) -> CliResult<String> {
    let cfg = ctx.config();
    let spec = cfg.synthetic.clone().unwrap_or_default();
    let data = generate_synthetic(&spec, ctx.seed())?;
    let dir = ctx.ensure_out()?;
    let base = RunConfig { synthetic: None, data: None, ..cfg.clone() };
    write_synthetic(dir, &data, &base)?;
    Ok(format!(
        "wrote {} rows to {} (config: {})\n",
        data.dataset.n_rows(),
        dir.display(),
        dir.join("config.json").display()
    ))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn finish(
    ctx: &Context,
    d: &Dataset,
    warnings: Vec<String>,
    paths: &[PathBuf],
    notes: Vec<String>,
    cluster: Option<ClusterInfo>,
) -> CliResult<String> {
    let mut m = ctx.metadata(d, warnings);
    write_metadata(ctx, &mut m, paths, notes, cluster)?;
    Ok(String::new())
}

fn finish_split(
    ctx: &Context,
    d: &Dataset,
    p: &Prepared,
    warnings: Vec<String>,
    paths: &[PathBuf],
    notes: Vec<String>,
    cluster: Option<ClusterInfo>,
) -> CliResult<()> {
    let mut m = ctx.metadata(d, warnings);
    m.data.n_train = Some(p.split.train.len());
    m.data.n_eval = Some(p.split.eval.len());
    write_metadata(ctx, &mut m, paths, notes, cluster)
}

fn write_metadata(
    ctx: &Context,
    m: &mut RunMetadata,
    paths: &[PathBuf],
    notes: Vec<String>,
    cluster: Option<ClusterInfo>,
) -> CliResult<()> {
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    if m.seed_defaulted {
        m.notes.push(format!("no seed configured; using {}", m.seed));
    }
    m.notes.extend(notes);
    m.cluster = cluster;
    m.outputs = report::file_names(paths);
    m.outputs.push(report::METADATA_JSON.to_string());
    m.write(ctx.ensure_out()?)?;
    Ok(())
}
