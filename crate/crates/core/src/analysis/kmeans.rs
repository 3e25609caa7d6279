//! One-dimensional k-means++ with silhouette-based choice of k.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

pub const RESTARTS: usize = 10;
pub const MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: String,
    pub size: usize,
    pub mean_delta: f64,
    /// Aligned with `ClusterSummary::covariate_names`.
    pub covariate_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    /// Sorted by mean delta, ascending.
    pub clusters: Vec<Cluster>,
    pub covariate_names: Vec<String>,
    pub silhouette: f64,
    pub inertia: f64,
    /// Cluster of every input row, indexing `clusters`.
    pub assignment: Vec<usize>,
    /// Set when no k met the minimum cluster size, or the input was constant.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Ascending.
    pub centers: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (c, &m) in centers.iter().enumerate() {
        let d = (x - m).abs();
        if d < dist {
            dist = d;
            best = c;
        }
    }
    best
}

fn plus_plus_init(x: &[f64], k: usize, rng: &mut StreamRng) -> Vec<f64> {
    let n = x.len();
    let mut centers = vec![x[rng.random_range(0..n)]];
    let mut d2: Vec<f64> = x.iter().map(|&v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            x[pick]
        } else {
            x[rng.random_range(0..n)]
        };
        centers.push(next);
        for (d, &v) in d2.iter_mut().zip(x) {
            *d = d.min((v - next).powi(2));
        }
    }
    centers
}

/// One k-means run from a k-means++ start; stops when labels stabilize.
pub fn kmeans_once(x: &[f64], k: usize, rng: &mut StreamRng) -> KMeansFit {
    let mut centers = plus_plus_init(x, k, rng);
    let mut labels: Vec<usize> = x.iter().map(|&v| nearest(&centers, v)).collect();
    for _ in 0..MAX_ITER {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (&v, &l) in x.iter().zip(&labels) {
            sum[l] += v;
            cnt[l] += 1;
        }
        for c in 0..k {
            if cnt[c] > 0 {
                centers[c] = sum[c] / cnt[c] as f64;
            }
        }
        let next: Vec<usize> = x.iter().map(|&v| nearest(&centers, v)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    // relabel so centers ascend
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let labels: Vec<usize> = labels.iter().map(|&l| rank[l]).collect();
    let centers: Vec<f64> = order.iter().map(|&c| centers[c]).collect();
    let inertia = x.iter().zip(&labels).map(|(&v, &l)| (v - centers[l]).powi(2)).sum();
    KMeansFit { centers, labels, inertia }
}

/// Best of `RESTARTS` runs by inertia; earlier runs win ties.
pub fn kmeans_best(x: &[f64], k: usize, seed: u64) -> KMeansFit {
    let mut rng = rng::stream(seed, domain::KMEANS, k as u64);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..RESTARTS {
        let fit = kmeans_once(x, k, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

/// Mean silhouette width on one dimension in `O(n log n)`.
///
/// Singleton clusters contribute 0; empty clusters are ignored.
pub fn silhouette_1d(x: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (&v, &l) in x.iter().zip(labels) {
        members[l].push(v);
    }
    let prefix: Vec<Vec<f64>> = members
        .iter_mut()
        .map(|m| {
            m.sort_by(f64::total_cmp);
            let mut p = Vec::with_capacity(m.len() + 1);
            p.push(0.0);
            for &v in m.iter() {
                p.push(p.last().unwrap() + v);
            }
            p
        })
        .collect();
    // sum of |v - y| over one sorted cluster
    let abs_sum = |c: usize, v: f64| -> f64 {
        let m = &members[c];
        let p = &prefix[c];
        let j = m.partition_point(|&y| y < v);
        let below = v * j as f64 - p[j];
        let above = (p[m.len()] - p[j]) - v * (m.len() - j) as f64;
        below + above
    };
    let mut total = 0.0;
    for (&v, &l) in x.iter().zip(labels) {
        let own = members[l].len();
        if own <= 1 {
            continue;
        }
        let a = abs_sum(l, v) / (own - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != l && !members[c].is_empty())
            .map(|c| abs_sum(c, v) / members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / x.len() as f64
}

/// Names mirroring a loss-to-gain layout.
pub fn cluster_labels(k: usize) -> Vec<String> {
    match k {
        1 => vec!["All".into()],
        2 => vec!["Loss".into(), "Gain".into()],
        3 => vec!["Loss".into(), "Neutral".into(), "Gain".into()],
        4 => vec!["Strong loss".into(), "Loss".into(), "Gain".into(), "Strong gain".into()],
        5 => vec![
            "Strong loss".into(),
            "Loss".into(),
            "Neutral".into(),
            "Gain".into(),
            "Strong gain".into(),
        ],
        _ => (1..=k).map(|c| format!("Cluster {c}")).collect(),
    }
}

/// Clusters the per-row delta and summarizes covariates per cluster.
///
/// k-means runs on the standardized delta. Among `k_min..=k_max`, the k with
/// the largest silhouette wins, restricted to solutions whose clusters all
/// hold at least `min_share * n` rows; without any such k the constraint is
/// dropped and the result flagged.
pub fn kmeans_cluster(
    delta: &[f64],
    covariates: &FeatureTable,
    k_min: usize,
    k_max: usize,
    min_share: f64,
    seed: u64,
) -> Result<ClusterSummary> {
    let n = delta.len();
    if n == 0 {
        return Err(Error::Invalid("cannot cluster zero rows".into()));
    }
    if covariates.n_cols() > 0 && covariates.n_rows() != n {
        return Err(Error::Shape("covariates do not match the delta length".into()));
    }
    if k_min < 2 || k_max < k_min || k_max > 10 {
        return Err(Error::Invalid(format!("k range {k_min}..={k_max} must lie within 2..=10")));
    }
    if !(min_share > 0.0 && min_share < 0.5) {
        return Err(Error::Invalid(format!("min_share must lie in (0, 0.5), got {min_share}")));
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("delta contains non-finite values".into()));
    }
    let mean = delta.iter().sum::<f64>() / n as f64;
    let sd = (delta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let mut distinct = delta.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if sd == 0.0 || distinct.len() < 2 {
        return Ok(summarize(delta, covariates, &vec![0; n], 1, 0.0, 0.0, true));
    }
    let z: Vec<f64> = delta.iter().map(|v| (v - mean) / sd).collect();
    let floor = (min_share * n as f64).ceil() as usize;

    let mut feasible: Option<(usize, f64, KMeansFit)> = None;
    let mut any: Option<(usize, f64, KMeansFit)> = None;
    for k in k_min..=k_max.min(distinct.len()) {
        let fit = kmeans_best(&z, k, seed);
        let s = silhouette_1d(&z, &fit.labels, k);
        let mut sizes = vec![0usize; k];
        for &l in &fit.labels {
            sizes[l] += 1;
        }
        let ok = sizes.iter().all(|&c| c >= floor);
        if ok && feasible.as_ref().is_none_or(|f| s > f.1) {
            feasible = Some((k, s, fit.clone()));
        }
        if any.as_ref().is_none_or(|f| s > f.1) {
            any = Some((k, s, fit));
        }
    }
    let (chosen, fallback) = match (feasible, any) {
        (Some(f), _) => (f, false),
        (None, Some(a)) => (a, true),
        (None, None) => {
            return Ok(summarize(delta, covariates, &vec![0; n], 1, 0.0, 0.0, true));
        }
    };
    let (k, s, fit) = chosen;
    let inertia = fit.inertia * sd * sd;
    Ok(summarize(delta, covariates, &fit.labels, k, s, inertia, fallback))
}

fn summarize(
    delta: &[f64],
    covariates: &FeatureTable,
    labels: &[usize],
    k: usize,
    silhouette: f64,
    inertia: f64,
    fallback: bool,
) -> ClusterSummary {
    let names = cluster_labels(k);
    let clusters: Vec<Cluster> = (0..k)
        .map(|c| {
            let rows: Vec<usize> = (0..delta.len()).filter(|&i| labels[i] == c).collect();
            let size = rows.len();
            let avg = |f: &dyn Fn(usize) -> f64| {
                if size == 0 {
                    f64::NAN
                } else {
                    rows.iter().map(|&i| f(i)).sum::<f64>() / size as f64
                }
            };
            Cluster {
                label: names[c].clone(),
                size,
                mean_delta: avg(&|i| delta[i]),
                covariate_means: (0..covariates.n_cols()).map(|j| avg(&|i| covariates.value(i, j))).collect(),
            }
        })
        .collect();
    ClusterSummary {
        k,
        clusters,
        covariate_names: covariates.columns().iter().map(|c| c.name.clone()).collect(),
        silhouette,
        inertia,
        assignment: labels.to_vec(),
        fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_silhouette(x: &[f64], labels: &[usize], k: usize) -> f64 {
        let n = x.len();
        let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        let mut total = 0.0;
        for i in 0..n {
            if sizes[labels[i]] <= 1 {
                continue;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                sums[labels[j]] += (x[i] - x[j]).abs();
            }
            let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != labels[i] && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if a.max(b) > 0.0 {
                total += (b - a) / a.max(b);
            }
        }
        total / n as f64
    }

    #[test]
    fn fast_silhouette_matches_brute_force() {
        let mut r = rng::stream(1, 0, 0);
        for k in 2..5 {
            let x: Vec<f64> = (0..200).map(|_| r.random::<f64>() * 10.0).collect();
            let fit = kmeans_best(&x, k, 3);
            let fast = silhouette_1d(&x, &fit.labels, k);
            let slow = brute_silhouette(&x, &fit.labels, k);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
            assert!((-1.0..=1.0).contains(&fast));
        }
    }

    #[test]
    fn two_point_masses() {
        let delta: Vec<f64> = (0..10_000).map(|i| if i < 5_000 { -1.0 } else { 1.0 }).collect();
        let s = kmeans_cluster(&delta, &FeatureTable::empty(10_000), 2, 6, 0.01, 0).unwrap();
        assert_eq!(s.k, 2);
        assert!(!s.fallback);
        assert_eq!(s.clusters[0].mean_delta, -1.0);
        assert_eq!(s.clusters[1].mean_delta, 1.0);
        assert_eq!(s.clusters.iter().map(|c| c.size).sum::<usize>(), 10_000);
    }

    #[test]
    fn constant_delta_falls_back() {
        let s = kmeans_cluster(&[0.0; 50], &FeatureTable::empty(50), 2, 5, 0.01, 0).unwrap();
        assert_eq!(s.k, 1);
        assert!(s.fallback);
        assert_eq!(s.silhouette, 0.0);
    }

    #[test]
    fn best_of_restarts_beats_every_single_restart() {
        let mut r = rng::stream(2, 0, 0);
        let x: Vec<f64> = (0..300).map(|i| (i % 4) as f64 * 3.0 + r.random::<f64>()).collect();
        let best = kmeans_best(&x, 4, 9);
        let mut rr = rng::stream(9, domain::KMEANS, 4);
        for _ in 0..RESTARTS {
            assert!(best.inertia <= kmeans_once(&x, 4, &mut rr).inertia);
        }
    }

    #[test]
    fn small_clusters_trigger_the_constraint() {
        // one outlier: k = 2 isolates it but violates a 5% floor
        let mut delta = vec![0.0; 99];
        delta.extend([0.1; 99]);
        delta.push(50.0);
        let s = kmeans_cluster(&delta, &FeatureTable::empty(delta.len()), 2, 3, 0.05, 0).unwrap();
        assert!(s.clusters.iter().all(|c| c.size >= 10) || s.fallback);
        assert!(kmeans_cluster(&delta, &FeatureTable::empty(delta.len()), 1, 3, 0.05, 0).is_err());
    }
}
