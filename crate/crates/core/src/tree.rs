//! Exact depth-limited policy trees.
//!
//! Rows are binned once per feature against that feature's candidate
//! thresholds, so a split "value <= t_k" is "bin <= k". Depth-1 subtrees are
//! solved by a prefix/suffix sweep over a histogram of summed scores, depth-2
//! subtrees by 2-D histograms over feature pairs, and depth-3 trees by
//! enumerating the root split and solving both sides at depth 2.
//!
//! Ties are resolved by scanning candidates in a fixed order (leaf, then
//! feature index, then threshold index) and replacing the incumbent only when
//! a candidate is better by more than a scale-relative tolerance, or equal
//! within tolerance and shallower.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjust::marginal_quantile;
use crate::data::{Assignment, FeatureKind, FeatureTable, ScoreMatrix};
use crate::error::{Error, Result};
use crate::scores::argmax;

pub const MAX_DEPTH: usize = 3;
pub const DEFAULT_N_POINTS: usize = 100;

/// Whether thresholds live on the original feature scale or on the
/// within-group cdf scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Raw,
    Cdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        treatment: usize,
    },
    Split {
        feature: usize,
        feature_name: String,
        threshold: f64,
        scale: Scale,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn route(&self, features: &FeatureTable, row: usize) -> usize {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { treatment } => return *treatment,
                Node::Split { feature, threshold, left, right, .. } => {
                    node = if features.value(row, *feature) <= *threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub root: Node,
    pub scale: Scale,
    pub treatment_names: Vec<String>,
    /// Mean selected score on the rows the tree was fitted on.
    pub training_value: f64,
}

impl PolicyTree {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf(treatment: usize, treatment_names: Vec<String>, scale: Scale) -> Self {
        Self { root: Node::Leaf { treatment }, scale, treatment_names, training_value: f64::NAN }
    }

    /// Indented if/else rendering.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        render_node(&self.root, &self.treatment_names, 0, &mut out);
        out
    }
}

fn render_node(node: &Node, names: &[String], indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    match node {
        Node::Leaf { treatment } => {
            let name = names.get(*treatment).cloned().unwrap_or_else(|| treatment.to_string());
            let _ = writeln!(out, "{pad}-> {name}");
        }
        Node::Split { feature_name, threshold, scale, left, right, .. } => {
            let lhs = match scale {
                Scale::Raw => feature_name.clone(),
                Scale::Cdf => format!("F({feature_name} | S)"),
            };
            let _ = writeln!(out, "{pad}if {lhs} <= {threshold}:");
            render_node(left, names, indent + 1, out);
            let _ = writeln!(out, "{pad}else:");
            render_node(right, names, indent + 1, out);
        }
    }
}

/// Sorted candidate thresholds per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidates {
    pub thresholds: Vec<Vec<f64>>,
}

impl SplitCandidates {
    pub fn from_table(features: &FeatureTable, n_points: usize) -> Self {
        Self {
            thresholds: features
                .columns()
                .iter()
                .map(|c| enumerate_candidates(&c.values, &c.kind, n_points))
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.thresholds.iter().map(Vec::len).sum()
    }
}

/// Candidate thresholds for one column.
///
/// Continuous: empirical quantiles at `k / (n_points + 1)`, deduplicated,
/// restricted to values below the column maximum. Discrete: midpoints
/// between consecutive observed values; above `n_points` midpoints the
/// quantile grid is snapped to the nearest midpoint.
pub fn enumerate_candidates(values: &[f64], kind: &FeatureKind, n_points: usize) -> Vec<f64> {
    let n_points = n_points.max(1);
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let max = sorted[sorted.len() - 1];
    let grid = |sorted: &[f64]| -> Vec<f64> {
        (1..=n_points)
            .map(|k| marginal_quantile(sorted, k as f64 / (n_points + 1) as f64))
            .collect()
    };
    let mut out = if kind.is_discrete() {
        let mut distinct = sorted.clone();
        distinct.dedup();
        let mids: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        if mids.len() <= n_points {
            mids
        } else {
            grid(&sorted)
                .into_iter()
                .map(|q| {
                    let i = mids.partition_point(|&m| m < q);
                    match (i.checked_sub(1), mids.get(i)) {
                        (Some(j), Some(&hi)) if q - mids[j] <= hi - q => mids[j],
                        (_, Some(&hi)) => hi,
                        (Some(j), None) => mids[j],
                        (None, None) => unreachable!(),
                    }
                })
                .collect()
        }
    } else {
        grid(&sorted).into_iter().filter(|&t| t < max).collect()
    };
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Best subtree found by the search, with thresholds as bin indices.
#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Leaf,
    Split { feature: usize, k: usize, left: Box<Shape>, right: Box<Shape> },
}

#[derive(Debug, Clone)]
struct Best {
    value: f64,
    depth: usize,
    shape: Shape,
}

/// Incumbent comparison shared by every level of the search.
#[derive(Clone, Copy)]
struct Cmp {
    eps: f64,
}

impl Cmp {
    #[inline]
    fn better(self, value: f64, depth: usize, inc_value: f64, inc_depth: usize) -> bool {
        value > inc_value + self.eps || ((value - inc_value).abs() <= self.eps && depth < inc_depth)
    }
}

struct Problem<'a> {
    /// `bins[f][i]`: number of thresholds of feature `f` below row `i`'s value.
    bins: Vec<Vec<u32>>,
    /// Number of bins per feature (`thresholds + 1`).
    n_bins: Vec<usize>,
    scores: &'a [f64],
    m: usize,
    cmp: Cmp,
}

#[inline]
fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl Problem<'_> {
    fn sums(&self, rows: &[usize]) -> Vec<f64> {
        let mut s = vec![0.0; self.m];
        for &i in rows {
            for (acc, v) in s.iter_mut().zip(&self.scores[i * self.m..(i + 1) * self.m]) {
                *acc += v;
            }
        }
        s
    }

    /// Best split of a 1-D histogram `g` (`n_bins x m`, row-major) against
    /// a leaf. `suffix` is scratch of the same size.
    fn sweep(&self, g: &[f64], n_bins: usize, suffix: &mut [f64], prefix: &mut [f64]) -> (f64, Option<usize>) {
        let m = self.m;
        suffix[(n_bins - 1) * m..n_bins * m].copy_from_slice(&g[(n_bins - 1) * m..n_bins * m]);
        for b in (0..n_bins - 1).rev() {
            for d in 0..m {
                suffix[b * m + d] = suffix[(b + 1) * m + d] + g[b * m + d];
            }
        }
        let mut best_v = max_of(&suffix[..m]);
        let mut best_k = None;
        prefix.fill(0.0);
        for k in 0..n_bins - 1 {
            for d in 0..m {
                prefix[d] += g[k * m + d];
            }
            let v = max_of(&prefix[..m]) + max_of(&suffix[(k + 1) * m..(k + 2) * m]);
            let depth = 1;
            let inc_depth = usize::from(best_k.is_some());
            if self.cmp.better(v, depth, best_v, inc_depth) {
                best_v = v;
                best_k = Some(k);
            }
        }
        (best_v, best_k)
    }

    fn solve1(&self, rows: &[usize]) -> Best {
        let m = self.m;
        let mut best = Best { value: max_of(&self.sums(rows)), depth: 0, shape: Shape::Leaf };
        let max_bins = self.n_bins.iter().copied().max().unwrap_or(1);
        let mut suffix = vec![0.0; max_bins * m];
        let mut prefix = vec![0.0; m];
        for (f, &nb) in self.n_bins.iter().enumerate() {
            if nb < 2 {
                continue;
            }
            let mut g = vec![0.0; nb * m];
            let bins = &self.bins[f];
            for &i in rows {
                let b = bins[i] as usize;
                for d in 0..m {
                    g[b * m + d] += self.scores[i * m + d];
                }
            }
            let (v, k) = self.sweep(&g, nb, &mut suffix, &mut prefix);
            if let Some(k) = k {
                if self.cmp.better(v, 1, best.value, best.depth) {
                    best = Best {
                        value: v,
                        depth: 1,
                        shape: Shape::Split { feature: f, k, left: Box::new(Shape::Leaf), right: Box::new(Shape::Leaf) },
                    };
                }
            }
        }
        best
    }

    /// Depth-2 search restricted to root feature `f1`: returns the best
    /// `(value, depth, shape)` over roots `(f1, k1)` in threshold order.
    fn solve2_root(&self, rows: &[usize], f1: usize) -> Option<Best> {
        let m = self.m;
        let nb1 = self.n_bins[f1];
        if nb1 < 2 {
            return None;
        }
        let bins1 = &self.bins[f1];
        // side sums per b1
        let mut h1 = vec![0.0; nb1 * m];
        for &i in rows {
            let b = bins1[i] as usize;
            for d in 0..m {
                h1[b * m + d] += self.scores[i * m + d];
            }
        }
        let n_split = nb1 - 1;
        // child incumbents: leaf first
        let mut left: Vec<(f64, usize, Option<(usize, usize)>)> = Vec::with_capacity(n_split);
        let mut right: Vec<(f64, usize, Option<(usize, usize)>)> = vec![(0.0, 0, None); n_split];
        let mut acc = vec![0.0; m];
        for k in 0..n_split {
            for d in 0..m {
                acc[d] += h1[k * m + d];
            }
            left.push((max_of(&acc), 0, None));
        }
        acc.fill(0.0);
        for k in (0..n_split).rev() {
            for d in 0..m {
                acc[d] += h1[(k + 1) * m + d];
            }
            right[k] = (max_of(&acc), 0, None);
        }

        let max_bins = self.n_bins.iter().copied().max().unwrap_or(1);
        let mut suffix = vec![0.0; max_bins * m];
        let mut prefix = vec![0.0; m];
        for (f2, &nb2) in self.n_bins.iter().enumerate() {
            if nb2 < 2 {
                continue;
            }
            let bins2 = &self.bins[f2];
            let stride = nb2 * m;
            let mut h2 = vec![0.0; nb1 * stride];
            for &i in rows {
                let off = bins1[i] as usize * stride + bins2[i] as usize * m;
                for d in 0..m {
                    h2[off + d] += self.scores[i * m + d];
                }
            }
            let mut child = vec![0.0; stride];
            for k in 0..n_split {
                for (c, v) in child.iter_mut().zip(&h2[k * stride..(k + 1) * stride]) {
                    *c += v;
                }
                let (v, k2) = self.sweep(&child, nb2, &mut suffix, &mut prefix);
                if let Some(k2) = k2 {
                    let inc = left[k];
                    if self.cmp.better(v, 1, inc.0, inc.1) {
                        left[k] = (v, 1, Some((f2, k2)));
                    }
                }
            }
            child.fill(0.0);
            for k in (0..n_split).rev() {
                let b = k + 1;
                for (c, v) in child.iter_mut().zip(&h2[b * stride..(b + 1) * stride]) {
                    *c += v;
                }
                let (v, k2) = self.sweep(&child, nb2, &mut suffix, &mut prefix);
                if let Some(k2) = k2 {
                    let inc = right[k];
                    if self.cmp.better(v, 1, inc.0, inc.1) {
                        right[k] = (v, 1, Some((f2, k2)));
                    }
                }
            }
        }

        let side = |c: Option<(usize, usize)>| match c {
            None => Box::new(Shape::Leaf),
            Some((f, k)) => Box::new(Shape::Split {
                feature: f,
                k,
                left: Box::new(Shape::Leaf),
                right: Box::new(Shape::Leaf),
            }),
        };
        let mut best: Option<Best> = None;
        for k in 0..n_split {
            let v = left[k].0 + right[k].0;
            let depth = 1 + left[k].1.max(right[k].1);
            if best.as_ref().is_none_or(|b| self.cmp.better(v, depth, b.value, b.depth)) {
                best = Some(Best {
                    value: v,
                    depth,
                    shape: Shape::Split { feature: f1, k, left: side(left[k].2), right: side(right[k].2) },
                });
            }
        }
        best
    }

    fn reduce(&self, mut best: Best, candidates: impl IntoIterator<Item = Option<Best>>) -> Best {
        for c in candidates.into_iter().flatten() {
            if self.cmp.better(c.value, c.depth, best.value, best.depth) {
                best = c;
            }
        }
        best
    }

    fn leaf(&self, rows: &[usize]) -> Best {
        Best { value: max_of(&self.sums(rows)), depth: 0, shape: Shape::Leaf }
    }

    fn solve2(&self, rows: &[usize], parallel: bool) -> Best {
        let f = self.n_bins.len();
        let per_root: Vec<Option<Best>> = if parallel {
            (0..f).into_par_iter().map(|f1| self.solve2_root(rows, f1)).collect()
        } else {
            (0..f).map(|f1| self.solve2_root(rows, f1)).collect()
        };
        self.reduce(self.leaf(rows), per_root)
    }

    fn solve3(&self, rows: &[usize]) -> Best {
        let roots: Vec<(usize, usize)> = self
            .n_bins
            .iter()
            .enumerate()
            .flat_map(|(f, &nb)| (0..nb.saturating_sub(1)).map(move |k| (f, k)))
            .collect();
        let per_root: Vec<Option<Best>> = roots
            .par_iter()
            .map(|&(f, k)| {
                let bins = &self.bins[f];
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| bins[i] as usize <= k);
                if l.is_empty() || r.is_empty() {
                    return None;
                }
                let bl = self.solve2(&l, false);
                let br = self.solve2(&r, false);
                Some(Best {
                    value: bl.value + br.value,
                    depth: 1 + bl.depth.max(br.depth),
                    shape: Shape::Split { feature: f, k, left: Box::new(bl.shape), right: Box::new(br.shape) },
                })
            })
            .collect();
        self.reduce(self.leaf(rows), per_root)
    }
}

/// Fits the policy tree of at most `depth` levels that maximizes the summed
/// score over the candidate thresholds. Empty branches inherit the parent's
/// best treatment.
pub fn fit_tree(
    features: &FeatureTable,
    scores: &ScoreMatrix,
    depth: usize,
    candidates: &SplitCandidates,
    scale: Scale,
) -> Result<PolicyTree> {
    if depth > MAX_DEPTH {
        return Err(Error::DepthTooLarge(depth));
    }
    let n = scores.n_rows();
    if n == 0 {
        return Err(Error::Shape("cannot fit a tree on zero rows".into()));
    }
    if features.n_rows() != n {
        return Err(Error::Shape(format!("features have {} rows, scores {n}", features.n_rows())));
    }
    if candidates.thresholds.len() != features.n_cols() {
        return Err(Error::Shape("candidate list does not match the feature table".into()));
    }
    for col in features.columns() {
        if let Some(row) = col.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { feature: col.name.clone(), row });
        }
    }
    let m = scores.n_treatments();
    let bins: Vec<Vec<u32>> = features
        .columns()
        .iter()
        .zip(&candidates.thresholds)
        .map(|(col, th)| col.values.iter().map(|&v| th.partition_point(|&t| t < v) as u32).collect())
        .collect();
    let n_bins = candidates.thresholds.iter().map(|t| t.len() + 1).collect();
    let scale_sum: f64 = (0..n).map(|i| max_of(&scores.row(i).iter().map(|v| v.abs()).collect::<Vec<_>>())).sum();
    let problem = Problem {
        bins,
        n_bins,
        scores: scores.values(),
        m,
        cmp: Cmp { eps: 1e-12 * scale_sum.max(f64::MIN_POSITIVE) },
    };
    let rows: Vec<usize> = (0..n).collect();
    let best = match depth {
        0 => problem.leaf(&rows),
        1 => problem.solve1(&rows),
        2 => problem.solve2(&rows, true),
        _ => problem.solve3(&rows),
    };
    let root = build(&best.shape, &rows, &problem, features, candidates, scale, None);
    let mut tree = PolicyTree {
        root,
        scale,
        treatment_names: scores.treatment_names().to_vec(),
        training_value: 0.0,
    };
    let assignment = predict_tree(&tree, features)?;
    tree.training_value = crate::scores::policy_value(&assignment, scores)?;
    Ok(tree)
}

fn build(
    shape: &Shape,
    rows: &[usize],
    p: &Problem<'_>,
    features: &FeatureTable,
    candidates: &SplitCandidates,
    scale: Scale,
    fallback: Option<usize>,
) -> Node {
    let own = if rows.is_empty() { fallback.unwrap_or(0) } else { argmax(&p.sums(rows)) };
    match shape {
        Shape::Leaf => Node::Leaf { treatment: own },
        Shape::Split { feature, k, left, right } => {
            let bins = &p.bins[*feature];
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| bins[i] as usize <= *k);
            Node::Split {
                feature: *feature,
                feature_name: features.column(*feature).name.clone(),
                threshold: candidates.thresholds[*feature][*k],
                scale,
                left: Box::new(build(left, &l, p, features, candidates, scale, Some(own))),
                right: Box::new(build(right, &r, p, features, candidates, scale, Some(own))),
            }
        }
    }
}

/// Routes every row: "value <= threshold" goes left.
pub fn predict_tree(tree: &PolicyTree, features: &FeatureTable) -> Result<Assignment> {
    for col in features.columns() {
        if let Some(row) = col.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { feature: col.name.clone(), row });
        }
    }
    Ok(Assignment((0..features.n_rows()).map(|i| tree.root.route(features, i)).collect()))
}
