//! Group-specific trees with probabilistic splits.
//!
//! A tree fitted on within-group cdf values is translated, group by group,
//! into thresholds on the original feature scale. Where several training
//! units of a group share the translated threshold value and the cdf-scale
//! tree separated them, the split becomes probabilistic: units strictly
//! below go left, units strictly above go right, and units exactly at the
//! threshold go left with probability `share`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adjust::{AdjustedFeatures, CdfModel};
use crate::data::{Assignment, FeatureKind, FeatureTable, SensitiveVector};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::tree::{Node, PolicyTree, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ProbNode {
    Leaf {
        treatment: usize,
    },
    Split {
        feature: usize,
        feature_name: String,
        /// Threshold of the originating cdf-scale node.
        cdf_threshold: f64,
        /// Threshold on the original scale.
        threshold: f64,
        /// Probability that a unit exactly at `threshold` goes left; 1 for a
        /// deterministic "<= threshold" split.
        share: f64,
        left: Box<ProbNode>,
        right: Box<ProbNode>,
    },
}

impl ProbNode {
    pub fn is_deterministic(&self) -> bool {
        match self {
            ProbNode::Leaf { .. } => true,
            ProbNode::Split { share, left, right, .. } => {
                *share == 1.0 && left.is_deterministic() && right.is_deterministic()
            }
        }
    }

    /// Every `(threshold, share)` pair in pre-order.
    pub fn splits(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.collect_splits(&mut out);
        out
    }

    fn collect_splits(&self, out: &mut Vec<(f64, f64)>) {
        if let ProbNode::Split { threshold, share, left, right, .. } = self {
            out.push((*threshold, *share));
            left.collect_splits(out);
            right.collect_splits(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbSplitPolicy {
    pub group_names: Vec<String>,
    /// One tree per sensitive group, indexed by label.
    pub groups: Vec<ProbNode>,
    pub cdf_tree: PolicyTree,
    pub treatment_names: Vec<String>,
}

/// Training rows routed by the cdf-scale tree.
fn cdf_route(node: &Node, p_values: &[Vec<f64>], rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    match node {
        Node::Split { feature, threshold, .. } => {
            rows.iter().partition(|&&i| p_values[*feature][i] <= *threshold)
        }
        Node::Leaf { .. } => (rows.to_vec(), Vec::new()),
    }
}

struct Ctx<'a> {
    model: &'a CdfModel,
    features: &'a FeatureTable,
    adjusted: &'a AdjustedFeatures,
    sensitive: &'a SensitiveVector,
}

impl Ctx<'_> {
    fn translate(&self, node: &Node, group: usize, rows: &[usize]) -> ProbNode {
        match node {
            Node::Leaf { treatment } => ProbNode::Leaf { treatment: *treatment },
            Node::Split { feature, feature_name, threshold, left, right, .. } => {
                let j = *feature;
                let p = *threshold;
                let g = self.model.lookup(j, group, p);
                let col = self.features.column(j);
                let at_g: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&i| self.sensitive.label(i) == group && col.values[i] == g)
                    .collect();
                let share = if at_g.is_empty() {
                    1.0
                } else {
                    let below = at_g.iter().filter(|&&i| self.adjusted.p_values[j][i] <= p).count();
                    below as f64 / at_g.len() as f64
                };
                let threshold = if share == 1.0 && col.kind.is_discrete() {
                    floor_to_support(g, &col.kind, &self.model.columns[j].marginal)
                } else {
                    g
                };
                let (l, r) = cdf_route(node, &self.adjusted.p_values, rows);
                ProbNode::Split {
                    feature: j,
                    feature_name: feature_name.clone(),
                    cdf_threshold: p,
                    threshold,
                    share,
                    left: Box::new(self.translate(left, group, &l)),
                    right: Box::new(self.translate(right, group, &r)),
                }
            }
        }
    }
}

/// Largest support value not above `g`; the smallest support value when
/// `g` lies below the support.
fn floor_to_support(g: f64, kind: &FeatureKind, observed_sorted: &[f64]) -> f64 {
    let support: &[f64] = match kind {
        FeatureKind::Discrete { support } if !support.is_empty() => support,
        _ => observed_sorted,
    };
    let idx = support.partition_point(|&v| v <= g);
    if idx == 0 {
        support[0]
    } else {
        support[idx - 1]
    }
}

/// Translates a cdf-scale tree into one original-scale tree per group.
///
/// `features` and `adjusted` are the training rows the cdf-scale tree was
/// fitted on; `adjusted.p_values` must be the cdf values used for fitting.
pub fn transform(
    tree_cdf: &PolicyTree,
    adjusted: &AdjustedFeatures,
    features: &FeatureTable,
    sensitive: &SensitiveVector,
) -> Result<ProbSplitPolicy> {
    if tree_cdf.scale != Scale::Cdf {
        return Err(Error::Invalid("transform expects a cdf-scale tree".into()));
    }
    let model = CdfModel::fit(features, sensitive, adjusted)?;
    let ctx = Ctx { model: &model, features, adjusted, sensitive };
    let rows: Vec<usize> = (0..features.n_rows()).collect();
    let groups = (0..sensitive.n_groups()).map(|s| ctx.translate(&tree_cdf.root, s, &rows)).collect();
    Ok(ProbSplitPolicy {
        group_names: sensitive.group_names().to_vec(),
        groups,
        cdf_tree: tree_cdf.clone(),
        treatment_names: tree_cdf.treatment_names.clone(),
    })
}

/// Routes each row through its group's tree. Row `i` draws from stream
/// `(seed, PREDICT_PROB, i)`, and only when it sits exactly at a
/// probabilistic threshold.
pub fn predict_prob(
    policy: &ProbSplitPolicy,
    features: &FeatureTable,
    sensitive: &SensitiveVector,
    seed: u64,
) -> Result<Assignment> {
    if sensitive.len() != features.n_rows() {
        return Err(Error::Shape("sensitive labels do not match the feature rows".into()));
    }
    if sensitive.n_groups() != policy.groups.len() {
        return Err(Error::Shape(format!(
            "policy has {} groups, data {}",
            policy.groups.len(),
            sensitive.n_groups()
        )));
    }
    let mut out = Vec::with_capacity(features.n_rows());
    for i in 0..features.n_rows() {
        let mut node = &policy.groups[sensitive.label(i)];
        let mut rng = None;
        let t = loop {
            match node {
                ProbNode::Leaf { treatment } => break *treatment,
                ProbNode::Split { feature, threshold, share, left, right, .. } => {
                    let v = features.value(i, *feature);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteFeature {
                            feature: features.column(*feature).name.clone(),
                            row: i,
                        });
                    }
                    let go_left = if v < *threshold {
                        true
                    } else if v > *threshold {
                        false
                    } else if *share >= 1.0 {
                        true
                    } else {
                        let r = rng.get_or_insert_with(|| rng::stream(seed, domain::PREDICT_PROB, i as u64));
                        r.random::<f64>() < *share
                    };
                    node = if go_left { left } else { right };
                }
            }
        };
        out.push(t);
    }
    Ok(Assignment(out))
}

/// One tree whose top level enumerates the sensitive groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensedTree {
    pub branches: Vec<(String, ProbNode)>,
    pub treatment_names: Vec<String>,
}

pub fn condense(policy: &ProbSplitPolicy) -> CondensedTree {
    CondensedTree {
        branches: policy.group_names.iter().cloned().zip(policy.groups.iter().cloned()).collect(),
        treatment_names: policy.treatment_names.clone(),
    }
}

impl CondensedTree {
    /// Text rendering: a header per group followed by the group's splits.
    /// Shares print as percentages with one decimal; a single group prints
    /// its tree without a header.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if self.branches.len() == 1 {
            render_prob(&self.branches[0].1, &self.treatment_names, 0, &mut out);
            return out;
        }
        for (name, node) in &self.branches {
            let _ = writeln!(out, "S = {name}:");
            render_prob(node, &self.treatment_names, 1, &mut out);
        }
        out
    }
}

fn render_prob(node: &ProbNode, names: &[String], indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    match node {
        ProbNode::Leaf { treatment } => {
            let name = names.get(*treatment).cloned().unwrap_or_else(|| treatment.to_string());
            let _ = writeln!(out, "{pad}-> {name}");
        }
        ProbNode::Split { feature_name, threshold, share, left, right, .. } => {
            if *share >= 1.0 {
                let _ = writeln!(out, "{pad}if {feature_name} <= {threshold}:");
            } else {
                let _ = writeln!(
                    out,
                    "{pad}if {feature_name} < {threshold} or ({feature_name} = {threshold} with probability {:.1}%):",
                    100.0 * share
                );
            }
            render_prob(left, names, indent + 1, out);
            let _ = writeln!(out, "{pad}else:");
            render_prob(right, names, indent + 1, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjust::mq_adjust_table;
    use crate::data::FeatureColumn;
    use crate::tree::predict_tree;

    fn cdf_split(threshold: f64) -> PolicyTree {
        PolicyTree {
            root: Node::Split {
                feature: 0,
                feature_name: "a".into(),
                threshold,
                scale: Scale::Cdf,
                left: Box::new(Node::Leaf { treatment: 0 }),
                right: Box::new(Node::Leaf { treatment: 1 }),
            },
            scale: Scale::Cdf,
            treatment_names: vec!["left".into(), "right".into()],
            training_value: 0.0,
        }
    }

    /// Group 1: a = 1 (4 rows), a = 2 (10 rows, eight with p < 0.33), a = 3 (4 rows).
    fn worked_example() -> (FeatureTable, SensitiveVector, AdjustedFeatures) {
        let mut a = vec![];
        let mut p = vec![];
        let mut s = vec![];
        for (v, q) in [(1.0, 0.0), (1.0, 0.05), (1.0, 0.1), (1.0, 0.15)] {
            a.push(v);
            p.push(q);
        }
        for k in 0..8 {
            a.push(2.0);
            p.push(0.2 + 0.015 * k as f64);
        }
        a.extend([2.0, 2.0]);
        p.extend([0.4, 0.5]);
        for (v, q) in [(3.0, 0.6), (3.0, 0.7), (3.0, 0.9), (3.0, 1.0)] {
            a.push(v);
            p.push(q);
        }
        s.extend(std::iter::repeat_n(1, a.len()));
        for (v, q) in [(0.0, 0.0), (5.0, 1.0)] {
            a.push(v);
            p.push(q);
            s.push(0);
        }
        let t = FeatureTable::new(vec![FeatureColumn::discrete("a", a)]).unwrap();
        let sv = SensitiveVector::from_labels(s, 2).unwrap();
        let adj = AdjustedFeatures { names: vec!["a".into()], adjusted: vec![p.clone()], p_values: vec![p], seed: 0 };
        (t, sv, adj)
    }

    #[test]
    fn worked_example_share() {
        let (t, s, adj) = worked_example();
        let policy = transform(&cdf_split(0.33), &adj, &t, &s).unwrap();
        match &policy.groups[1] {
            ProbNode::Split { threshold, share, .. } => {
                assert_eq!(*threshold, 2.0);
                assert!((share - 0.8).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let text = condense(&policy).render_text();
        assert!(text.contains("with probability 80.0%"), "{text}");
    }

    #[test]
    fn share_routing_matches_probability() {
        let n = 10_000;
        let policy = ProbSplitPolicy {
            group_names: vec!["g0".into()],
            groups: vec![ProbNode::Split {
                feature: 0,
                feature_name: "a".into(),
                cdf_threshold: 0.5,
                threshold: 2.0,
                share: 0.8,
                left: Box::new(ProbNode::Leaf { treatment: 0 }),
                right: Box::new(ProbNode::Leaf { treatment: 1 }),
            }],
            cdf_tree: cdf_split(0.5),
            treatment_names: vec!["l".into(), "r".into()],
        };
        let t = FeatureTable::new(vec![FeatureColumn::continuous("a", vec![2.0; n])]).unwrap();
        let s = SensitiveVector::from_labels(vec![0; n], 1).unwrap();
        let a = predict_prob(&policy, &t, &s, 3).unwrap();
        let left = a.0.iter().filter(|&&d| d == 0).count() as f64 / n as f64;
        assert!((left - 0.8).abs() <= 0.02, "{left}");
        assert_eq!(a, predict_prob(&policy, &t, &s, 3).unwrap());
        assert_ne!(a, predict_prob(&policy, &t, &s, 4).unwrap());
    }

    #[test]
    fn depth_zero_translates_to_identical_leaves() {
        let (t, s, adj) = worked_example();
        let leaf = PolicyTree::leaf(1, vec!["x".into(), "y".into()], Scale::Cdf);
        let policy = transform(&leaf, &adj, &t, &s).unwrap();
        assert_eq!(policy.groups, vec![ProbNode::Leaf { treatment: 1 }; 2]);
    }

    #[test]
    fn unique_continuous_values_reproduce_cdf_partition() {
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.7).sin() * 10.0 + labels[i] as f64 * 4.0).collect();
        let t = FeatureTable::new(vec![FeatureColumn::continuous("x", x)]).unwrap();
        let s = SensitiveVector::from_labels(labels, 3).unwrap();
        let adj = mq_adjust_table(&t, &s, 1).unwrap();
        for th in [0.1, 0.33, 0.5, 0.77] {
            let tree = cdf_split(th);
            let policy = transform(&tree, &adj, &t, &s).unwrap();
            assert!(policy.groups.iter().all(ProbNode::is_deterministic));
            let a = predict_prob(&policy, &t, &s, 0).unwrap();
            let b = predict_tree(&tree, &adj.cdf_table()).unwrap();
            assert_eq!(a, b, "threshold {th}");
        }
    }

    #[test]
    fn discrete_deterministic_split_floors_to_support() {
        assert_eq!(floor_to_support(1.4, &FeatureKind::Discrete { support: vec![0.0, 1.0, 2.0] }, &[]), 1.0);
        assert_eq!(floor_to_support(-3.0, &FeatureKind::Discrete { support: vec![0.0, 1.0] }, &[]), 0.0);
        assert_eq!(floor_to_support(2.5, &FeatureKind::Continuous, &[0.5, 2.5, 7.0]), 2.5);
    }

    #[test]
    fn condensed_rendering_keeps_every_split() {
        let (t, s, adj) = worked_example();
        let policy = transform(&cdf_split(0.33), &adj, &t, &s).unwrap();
        let c = condense(&policy);
        assert_eq!(c.branches.len(), 2);
        for (name, node) in &c.branches {
            let i = policy.group_names.iter().position(|g| g == name).unwrap();
            assert_eq!(node.splits(), policy.groups[i].splits());
        }
        let single = ProbSplitPolicy {
            group_names: vec!["only".into()],
            groups: vec![policy.groups[1].clone()],
            cdf_tree: policy.cdf_tree.clone(),
            treatment_names: policy.treatment_names.clone(),
        };
        assert!(!condense(&single).render_text().contains("S = "));
        let json = serde_json::to_string(&policy).unwrap();
        assert_eq!(serde_json::from_str::<ProbSplitPolicy>(&json).unwrap(), policy);
    }
}
