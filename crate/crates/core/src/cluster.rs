//! Spectral clustering of window embeddings.
//!
//! Embeddings are compared by cosine similarity mapped to `[0, 1]`, each row
//! of the affinity matrix is thresholded at a percentile, and the number of
//! speakers is read off the largest drop between consecutive eigenvalues.
//! Points are then grouped by k-means on the row-normalised leading
//! eigenvectors. Embeddings are unit-normalised on entry, so every result is
//! invariant to positive rescaling of any input vector.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest eigenvalue gap below which a single cluster is reported.
pub const DEGENERATE_GAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    values: Vec<f64>,
    /// Percentile used for refinement, if any.
    pub percentile: Option<f64>,
}

impl AffinityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("affinity", "matrix must be square"));
        }
        Ok(Self {
            n,
            values: rows.concat(),
            percentile: None,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// One row per line, space separated, for inspection.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

fn unit_rows(embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    embeddings
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::invalid(format!("embedding {i} has zero or non-finite norm")));
            }
            Ok(v.iter().map(|x| x / n).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1 + cos) / 2` between every pair; the diagonal is left at zero for the
/// refinement step to fill.
pub fn cosine_affinity(embeddings: &[Vec<f64>]) -> Result<AffinityMatrix> {
    let u = unit_rows(embeddings)?;
    let n = u.len();
    if let Some(d) = u.first().map(Vec::len) {
        if u.iter().any(|v| v.len() != d) {
            return Err(Error::shape("cosine_affinity", "embeddings differ in dimension"));
        }
    }
    let mut a = AffinityMatrix {
        n,
        values: vec![0.0; n * n],
        percentile: None,
    };
    for i in 0..n {
        for j in i + 1..n {
            let v = ((1.0 + dot(&u[i], &u[j])) / 2.0).clamp(0.0, 1.0);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    Ok(a)
}

/// Linear-interpolation percentile of an unsorted slice.
fn percentile_of(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Sets each diagonal entry to its row's largest off-diagonal value, zeroes
/// off-diagonal entries below the row's `p`-th percentile, and symmetrises by
/// elementwise maximum.
pub fn refine_affinity(a: &AffinityMatrix, p: f64) -> Result<AffinityMatrix> {
    if !(0.0..100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile must be in [0, 100), got {p}")));
    }
    let n = a.n;
    let mut r = a.clone();
    for i in 0..n {
        let max = (0..n).filter(|&j| j != i).map(|j| a.get(i, j)).fold(0.0, f64::max);
        r.set(i, i, max);
    }
    let mut t = r.clone();
    for i in 0..n {
        let thr = percentile_of(r.row(i), p);
        for j in 0..n {
            if j != i && r.get(i, j) < thr {
                t.set(i, j, 0.0);
            }
        }
    }
    let mut out = t.clone();
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, t.get(i, j).max(t.get(j, i)));
        }
    }
    out.percentile = Some(p);
    Ok(out)
}

/// Eigenvalues in descending order with matching eigenvector columns.
pub fn eigen_desc(a: &AffinityMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.n;
    let m = DMatrix::from_row_slice(n, n, &a.values);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Cluster count from sorted eigenvalues: the `i` in `1..=min(k_max, n-1)`
/// with the largest `λ_i − λ_{i+1}`, or 1 when that gap is degenerate.
pub fn count_from_eigenvalues(values: &[f64], k_max: usize) -> usize {
    let upper = k_max.min(values.len().saturating_sub(1));
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..=upper {
        let gap = values[i - 1] - values[i];
        if gap > best.1 {
            best = (i, gap);
        }
    }
    if best.1 < DEGENERATE_GAP {
        1
    } else {
        best.0
    }
}

pub fn eigengap_count(a: &AffinityMatrix, k_max: usize) -> Result<usize> {
    if a.n < 2 {
        return Err(Error::invalid(format!("eigengap needs at least 2 points, got {}", a.n)));
    }
    if k_max < 2 {
        return Err(Error::invalid(format!("k_max must be >= 2, got {k_max}")));
    }
    Ok(count_from_eigenvalues(&eigen_desc(a).0, k_max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Row-thresholding percentile in `[0, 100)`.
    pub percentile: f64,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            percentile: 90.0,
            k_max: 8,
            restarts: 10,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    /// Cluster id per embedding, numbered by first appearance.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Refined-affinity eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Means of the unit-normalised member embeddings.
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; returns labels and inertia.
fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, di) in d.iter().enumerate() {
                if target < *di {
                    pick = i;
                    break;
                }
                target -= di;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
    }
    let dim = points[0].len();
    let mut labels = vec![0usize; n];
    for it in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if labels[i] != best.0 {
                labels[i] = best.0;
                changed = true;
            }
        }
        if !changed && it > 0 {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                center[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

/// Renumbers labels by first appearance and drops empty ids.
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Seeded k-means that depends only on the multiset of points: points are
/// visited in lexicographic order and the generator is keyed by their bits.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, max_iter: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if k <= 1 || n <= 1 {
        return vec![0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in sorted.iter().flatten() {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (labels, inertia) = lloyd(&sorted, k.min(n), &mut rng, max_iter);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    let sorted_labels = best.map(|b| b.0).unwrap_or_default();
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = sorted_labels[pos];
    }
    labels
}

pub fn spectral_cluster(embeddings: &[Vec<f64>], cfg: &ClusterConfig, seed: u64) -> Result<ClusterResult> {
    if embeddings.len() < 2 {
        return Err(Error::invalid(format!(
            "spectral clustering needs at least 2 embeddings, got {}",
            embeddings.len()
        )));
    }
    let unit = unit_rows(embeddings)?;
    let a = refine_affinity(&cosine_affinity(&unit)?, cfg.percentile)?;
    let (values, vectors) = eigen_desc(&a);
    let k = count_from_eigenvalues(&values, cfg.k_max.max(2));
    let n = unit.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = (0..k).map(|c| vectors[(i, c)]).collect();
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.into_iter().map(|x| x / norm).collect()
            } else {
                r
            }
        })
        .collect();
    let (labels, k) = canonical(&kmeans(&rows, k, cfg.restarts, cfg.max_iterations, seed));
    let dim = unit[0].len();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &l) in unit.iter().zip(&labels) {
        counts[l] += 1;
        for d in 0..dim {
            centroids[l][d] += v[d];
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        for x in c.iter_mut() {
            *x /= *n as f64;
        }
    }
    Ok(ClusterResult {
        labels,
        k,
        eigenvalues: values,
        centroids,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Labels each segment with the centroid nearest (in cosine distance) to the
/// mean of its unit-normalised window embeddings; ties go to the lowest id.
/// `window_segment[i]` names the segment owning embedding `i`.
pub fn assign_segments(
    n_segments: usize,
    window_segment: &[usize],
    embeddings: &[Vec<f64>],
    result: &ClusterResult,
) -> Result<Vec<usize>> {
    if window_segment.len() != embeddings.len() {
        return Err(Error::shape(
            "assign_segments",
            format!("{} owners for {} embeddings", window_segment.len(), embeddings.len()),
        ));
    }
    let unit = unit_rows(embeddings)?;
    let dim = unit.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_segments];
    let mut counts = vec![0usize; n_segments];
    for (v, &s) in unit.iter().zip(window_segment) {
        if s >= n_segments {
            return Err(Error::invalid(format!("window owner {s} out of {n_segments} segments")));
        }
        counts[s] += 1;
        for d in 0..dim {
            sums[s][d] += v[d];
        }
    }
    (0..n_segments)
        .map(|s| {
            if counts[s] == 0 {
                return Err(Error::invalid(format!("segment {s} has no window embeddings")));
            }
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in result.centroids.iter().enumerate() {
                let d = 1.0 - cosine(&sums[s], centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            Ok(best.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity_examples() {
        let a = cosine_affinity(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(0, 2), 0.5);
        assert_eq!(a.get(0, 3), 0.0);
        assert!(cosine_affinity(&[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn refinement_examples() {
        let a = AffinityMatrix::from_rows(&[vec![0.0, 0.9], vec![0.9, 0.0]]).unwrap();
        for p in [0.0, 50.0, 99.0] {
            let r = refine_affinity(&a, p).unwrap();
            assert_eq!(r.get(0, 1), 0.9);
            assert_eq!(r.get(0, 0), 0.9);
        }

        let n = 6;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else if (i < 3) == (j < 3) { 0.95 } else { 0.1 }).collect())
            .collect();
        let a = AffinityMatrix::from_rows(&rows).unwrap();
        let r = refine_affinity(&a, 50.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                let same = (i < 3) == (j < 3);
                assert_eq!(r.get(i, j) == 0.0, !same, "({i},{j})");
            }
        }
        let r0 = refine_affinity(&a, 0.0).unwrap();
        assert_eq!(r0.get(0, 5), 0.1);
        assert_eq!(r0.get(0, 0), 0.95);
    }

    #[test]
    fn eigengap_on_block_ones() {
        let sizes = [3, 4];
        let n = 7;
        let block = |i: usize| if i < sizes[0] { 0 } else { 1 };
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (block(i) == block(j)) as u8 as f64).collect()).collect();
        let a = AffinityMatrix::from_rows(&rows).unwrap();
        let (vals, _) = eigen_desc(&a);
        assert!((vals[0] - 4.0).abs() < 1e-9 && (vals[1] - 3.0).abs() < 1e-9 && vals[2].abs() < 1e-9);
        assert_eq!(eigengap_count(&a, 4).unwrap(), 2);

        let ones = AffinityMatrix::from_rows(&vec![vec![1.0; 5]; 5]).unwrap();
        assert_eq!(eigengap_count(&ones, 4).unwrap(), 1);
        assert!(eigengap_count(&AffinityMatrix::from_rows(&[vec![1.0]]).unwrap(), 3).is_err());
    }

    #[test]
    fn duplicated_groups_are_recovered() {
        let dirs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let emb: Vec<Vec<f64>> = (0..60).map(|i| dirs[i % 3].clone()).collect();
        let r = spectral_cluster(&emb, &ClusterConfig::default(), 1).unwrap();
        assert_eq!(r.k, 3);
        for i in 0..60 {
            assert_eq!(r.labels[i], r.labels[i % 3]);
        }
        assert_eq!(r, spectral_cluster(&emb, &ClusterConfig::default(), 1).unwrap());
    }

    #[test]
    fn assignment_examples() {
        let result = ClusterResult {
            labels: vec![],
            k: 3,
            eigenvalues: vec![],
            centroids: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
        };
        // all windows equal to centroid 2
        let a = assign_segments(1, &[0, 0], &[vec![-2.0, 0.0], vec![-1.0, 0.0]], &result).unwrap();
        assert_eq!(a, vec![2]);
        // two windows split between clusters 0 and 1, mean leans toward 1
        let a = assign_segments(1, &[0, 0], &[vec![1.0, 0.2], vec![0.1, 1.0]], &result).unwrap();
        let mean = [0.5 * (1.0 / 1.04f64.sqrt() + 0.1 / 1.01f64.sqrt()), 0.5 * (0.2 / 1.04f64.sqrt() + 1.0 / 1.01f64.sqrt())];
        assert!(mean[1] > mean[0]);
        assert_eq!(a, vec![1]);
        assert!(assign_segments(2, &[0], &[vec![1.0, 0.0]], &result).is_err());
    }
}
