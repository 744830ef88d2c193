//! Picking which unlabeled documents go to the annotator next.
//!
//! Documents are ranked by their uncertainty score, the top (and optionally
//! bottom) of the ranking forms a pool, the pool is clustered with k-means
//! on the classifier embeddings, and the member nearest each centroid is
//! queued. When the queue runs dry mid-training, [`refill`] draws at random
//! from what is left of the pool.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::PredictionRecord;
use crate::embed::SparseVector;
use crate::error::{Error, Result};
use crate::seeding;

pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub k_top: usize,
    pub k_cluster: usize,
    /// Share of the pool taken from the most uncertain end of the ranking.
    pub high_fraction: f64,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k_top: 500,
            k_cluster: 6,
            high_fraction: 1.0,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_top == 0 || self.k_cluster == 0 {
            return Err(Error::Invalid("k_top and k_cluster must be positive".into()));
        }
        if self.k_cluster >= self.k_top {
            return Err(Error::Invalid("k_cluster must be smaller than k_top".into()));
        }
        if !(self.high_fraction > 0.0 && self.high_fraction <= 1.0) {
            return Err(Error::Invalid("high_fraction must lie in (0, 1]".into()));
        }
        if self.high_count(self.k_top) < self.k_cluster {
            return Err(Error::Invalid(
                "high_fraction * k_top must be at least k_cluster".into(),
            ));
        }
        Ok(())
    }

    fn high_count(&self, size: usize) -> usize {
        ((self.high_fraction * size as f64 - 1e-9).ceil().max(0.0) as usize).min(size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub doc_id: String,
    pub s_x: f64,
}

/// Most uncertain first; equal scores fall back to ascending doc id.
pub fn rank_unlabeled(records: &[PredictionRecord]) -> Vec<Ranked> {
    let mut out: Vec<Ranked> = records
        .iter()
        .map(|r| Ranked {
            doc_id: r.doc_id.clone(),
            s_x: r.s_x,
        })
        .collect();
    out.sort_by(|a, b| {
        b.s_x
            .total_cmp(&a.s_x)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    /// Highest scores first.
    pub high: Vec<Ranked>,
    /// Lowest scores first.
    pub low: Vec<Ranked>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.high.len() + self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.high.iter().chain(&self.low).map(|r| r.doc_id.as_str())
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.ids().any(|id| id == doc_id)
    }
}

pub fn build_pool(ordering: &[Ranked], cfg: &SelectionConfig) -> Pool {
    let size = cfg.k_top.min(ordering.len());
    let n_high = cfg.high_count(size);
    let n_low = size - n_high;
    let high = ordering[..n_high].to_vec();
    let low = ordering[ordering.len() - n_low..]
        .iter()
        .rev()
        .cloned()
        .collect();
    Pool { high, low }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia measured after each assignment step.
    pub inertia_history: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn nearest(point: &SparseVector, centroids: &[Vec<f64>], norms: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, (centroid, &norm)) in centroids.iter().zip(norms).enumerate() {
        let d = point.sq_dist_dense(centroid, norm);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(points: &[&SparseVector], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_dense()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| p.sq_dist_dense(&centroids[0], sq_norm(&centroids[0])))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` past the last partial sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        let c = points[next].to_dense();
        let norm = sq_norm(&c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.sq_dist_dense(&c, norm));
        }
        centroids.push(c);
    }
    centroids
}

fn means(points: &[&SparseVector], assignment: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (i, v) in p.iter() {
            sums[c][i] += v;
        }
    }
    for (sum, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            for v in sum.iter_mut() {
                *v /= n as f64;
            }
        }
    }
    sums
}

/// Moves, for each empty cluster, the point farthest from its centroid into it.
fn repair_empty(
    points: &[&SparseVector],
    assignment: &mut [usize],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assignment.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let norms: Vec<f64> = centroids.iter().map(|c| sq_norm(c)).collect();
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            if counts[c] < 2 {
                continue;
            }
            let d = p.sq_dist_dense(&centroids[c], norms[c]);
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("n >= k guarantees a donor cluster");
        assignment[i] = empty;
        centroids[empty] = points[i].to_dense();
    }
}

/// k-means++ seeding followed by Lloyd iterations on squared Euclidean distance.
pub fn kmeans(points: &[&SparseVector], k: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::TooFewPoints { points: n, k });
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            actual: p.dim(),
        });
    }
    let mut rng = seeding::rng(seed, &[seeding::stream::SELECT]);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let norms: Vec<f64> = centroids.iter().map(|c| sq_norm(c)).collect();
        let mut next = Vec::with_capacity(n);
        let mut inertia = 0.0;
        for p in points {
            let (c, d) = nearest(p, &centroids, &norms);
            next.push(c);
            inertia += d;
        }
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev + 1e-9 * (1.0 + prev), "inertia rose: {prev} -> {inertia}");
        }
        history.push(inertia);
        if next == assignment {
            break;
        }
        assignment = next;
        repair_empty(points, &mut assignment, &mut centroids);
        centroids = means(points, &assignment, k, dim);
    }

    let norms: Vec<f64> = centroids.iter().map(|c| sq_norm(c)).collect();
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| p.sq_dist_dense(&centroids[c], norms[c]))
        .sum();
    Ok(KMeans {
        assignment,
        centroids,
        inertia_history: history,
        inertia,
        iterations,
    })
}

/// Per cluster, in cluster order, the member closest to its centroid
/// (ties to the smaller doc id).
pub fn pick_representatives(
    ids: &[&str],
    points: &[&SparseVector],
    clusters: &KMeans,
) -> Vec<String> {
    let mut reps = Vec::with_capacity(clusters.k());
    for (c, centroid) in clusters.centroids.iter().enumerate() {
        let norm = sq_norm(centroid);
        let best = clusters
            .members(c)
            .map(|i| (points[i].sq_dist_dense(centroid, norm), ids[i]))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        if let Some((_, id)) = best {
            reps.push(id.to_string());
        }
    }
    reps
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refill {
    pub ids: Vec<String>,
    pub exhausted: bool,
}

/// Draws `n` ids without replacement from the pool minus `already_selected`,
/// the high-uncertainty part first.
pub fn refill(pool: &Pool, already_selected: &BTreeSet<String>, n: usize, seed: u64) -> Refill {
    let mut rng = seeding::rng(seed, &[seeding::stream::REFILL]);
    let mut ids = Vec::with_capacity(n);
    for part in [&pool.high, &pool.low] {
        if ids.len() == n {
            break;
        }
        let mut remaining: Vec<&str> = part
            .iter()
            .map(|r| r.doc_id.as_str())
            .filter(|id| !already_selected.contains(*id) && !ids.iter().any(|x: &String| x == id))
            .collect();
        remaining.shuffle(&mut rng);
        ids.extend(remaining.into_iter().take(n - ids.len()).map(str::to_string));
    }
    Refill {
        exhausted: ids.len() < n,
        ids,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub pool: Pool,
    pub queue: Vec<String>,
}

/// Rank, pool, cluster and pick: the whole per-cycle selection step.
pub fn select_batch<F>(
    records: &[PredictionRecord],
    embedding: F,
    cfg: &SelectionConfig,
) -> Result<Selection>
where
    F: Fn(&str) -> Option<SparseVector>,
{
    let ordering = rank_unlabeled(records);
    let pool = build_pool(&ordering, cfg);
    if pool.is_empty() {
        return Ok(Selection {
            pool,
            queue: Vec::new(),
        });
    }
    let ids: Vec<&str> = pool.ids().collect();
    let owned = ids
        .iter()
        .map(|id| embedding(id).ok_or_else(|| Error::not_found("embedding", *id)))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<&SparseVector> = owned.iter().collect();
    let k = cfg.k_cluster.min(points.len());
    let clusters = kmeans(&points, k, cfg.seed)?;
    let queue = pick_representatives(&ids, &points, &clusters);
    Ok(Selection { pool, queue })
}
