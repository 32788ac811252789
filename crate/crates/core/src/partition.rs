//! Saliency partitioning: 1-D k-means over saliency values and the
//! geometric seed-resolution schedule.
//!
//! Cluster `k` (ascending mean saliency, 1-based) gets seed resolution
//! `r_k = 10^(log10 R_max - (k - 1) d)` with
//! `d = (log10 R_max - log10 R_min) / (K - 1)`, so the least salient
//! cluster is seeded at `R_max` and the most salient one at `R_min`.

use crate::error::{Error, Result};
use crate::rgbd_io::{LabelMap2D, OrganizedCloud, UNLABELED};
use crate::saliency::SaliencyMap;

pub const DEFAULT_KMEANS_ITERS: usize = 100;
pub const DEFAULT_KMEANS_TOL: f64 = 1e-10;

/// Histogram resolution used by [`KMeansInit::Optimal`] once the input has
/// more distinct values than this.
const OPTIMAL_INIT_BINS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KMeansInit {
    /// Centroid `j` starts at the `(j + 0.5) / K` quantile.
    Quantile,
    /// Centroids start at the exact least-squares partition of the (binned)
    /// sorted values, found by dynamic programming over contiguous ranges.
    #[default]
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    /// Cluster index per input value.
    pub assignment: Vec<usize>,
    /// Cluster means; its length is the effective K after empty clusters
    /// are dropped.
    pub centroids: Vec<f64>,
    pub iterations: usize,
}

impl KMeans1d {
    pub fn effective_k(&self) -> usize {
        self.centroids.len()
    }

    pub fn within_cluster_ss(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.assignment)
            .map(|(v, &c)| (v - self.centroids[c]).powi(2))
            .sum()
    }
}

pub fn kmeans_1d(values: &[f64], k: usize, max_iters: usize, tol: f64) -> Result<KMeans1d> {
    kmeans_1d_with_init(values, k, max_iters, tol, KMeansInit::default())
}

/// Lloyd iterations over scalars. Ties go to the lower-index centroid and
/// clusters that become empty are dropped.
pub fn kmeans_1d_with_init(
    values: &[f64],
    k: usize,
    max_iters: usize,
    tol: f64,
    init: KMeansInit,
) -> Result<KMeans1d> {
    if k < 1 {
        return Err(Error::invalid("k-means needs K >= 1"));
    }
    if values.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite k-means input {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut centroids = match init {
        KMeansInit::Quantile => quantile_centroids(&sorted, k),
        KMeansInit::Optimal => optimal_centroids(&sorted, k),
    };
    let mut assignment = vec![0usize; values.len()];
    let mut iterations = 0;
    loop {
        assign_nearest(values, &centroids, &mut assignment);
        let (next, remap) = cluster_means(values, &assignment, centroids.len());
        for a in assignment.iter_mut() {
            *a = remap[*a].expect("assigned clusters are non-empty");
        }
        iterations += 1;
        let shift = if next.len() == centroids.len() {
            next.iter()
                .zip(&centroids)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        centroids = next;
        if shift < tol || iterations >= max_iters.max(1) {
            break;
        }
    }
    Ok(KMeans1d {
        assignment,
        centroids,
        iterations,
    })
}

fn quantile_centroids(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    (0..k)
        .map(|j| {
            let pos = ((j as f64 + 0.5) / k as f64 * n as f64).floor() as usize;
            sorted[pos.min(n - 1)]
        })
        .collect()
}

/// Weighted bin: count, sum and sum of squares of the values it holds.
#[derive(Debug, Clone, Copy, Default)]
struct Bin {
    count: f64,
    sum: f64,
    sum_sq: f64,
}

fn bins_for(sorted: &[f64]) -> Vec<Bin> {
    let mut unique = sorted.to_vec();
    unique.dedup();
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    let bin_of: Box<dyn Fn(f64) -> usize> = if unique.len() <= OPTIMAL_INIT_BINS {
        Box::new(move |v| unique.partition_point(|&u| u < v))
    } else {
        let width = (hi - lo) / OPTIMAL_INIT_BINS as f64;
        Box::new(move |v| (((v - lo) / width) as usize).min(OPTIMAL_INIT_BINS - 1))
    };
    let mut bins: Vec<Bin> = Vec::new();
    for &v in sorted {
        let b = bin_of(v);
        if b >= bins.len() {
            bins.resize(b + 1, Bin::default());
        }
        let bin = &mut bins[b];
        bin.count += 1.0;
        bin.sum += v;
        bin.sum_sq += v * v;
    }
    bins.retain(|b| b.count > 0.0);
    bins
}

fn optimal_centroids(sorted: &[f64], k: usize) -> Vec<f64> {
    let bins = bins_for(sorted);
    let m = bins.len();
    let k = k.min(m);
    let mut prefix = vec![Bin::default(); m + 1];
    for (i, b) in bins.iter().enumerate() {
        prefix[i + 1] = Bin {
            count: prefix[i].count + b.count,
            sum: prefix[i].sum + b.sum,
            sum_sq: prefix[i].sum_sq + b.sum_sq,
        };
    }
    // sum of squared deviations of bins [i, j)
    let cost = |i: usize, j: usize| {
        let n = prefix[j].count - prefix[i].count;
        let s = prefix[j].sum - prefix[i].sum;
        let s2 = prefix[j].sum_sq - prefix[i].sum_sq;
        (s2 - s * s / n).max(0.0)
    };

    // best[c][j]: optimal cost of the first j bins split into c + 1 ranges
    let mut best = vec![vec![f64::INFINITY; m + 1]; k];
    let mut split = vec![vec![0usize; m + 1]; k];
    for j in 1..=m {
        best[0][j] = cost(0, j);
    }
    for c in 1..k {
        for j in (c + 1)..=m {
            for i in c..j {
                let candidate = best[c - 1][i] + cost(i, j);
                if candidate < best[c][j] {
                    best[c][j] = candidate;
                    split[c][j] = i;
                }
            }
        }
    }
    let mut bounds = vec![m];
    let mut j = m;
    for c in (1..k).rev() {
        j = split[c][j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    bounds
        .windows(2)
        .map(|w| (prefix[w[1]].sum - prefix[w[0]].sum) / (prefix[w[1]].count - prefix[w[0]].count))
        .collect()
}

fn assign_nearest(values: &[f64], centroids: &[f64], assignment: &mut [usize]) {
    for (v, a) in values.iter().zip(assignment.iter_mut()) {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (j, c) in centroids.iter().enumerate() {
            let d = (v - c).abs();
            if d < best_dist {
                best_dist = d;
                best = j;
            }
        }
        *a = best;
    }
}

/// Means of the non-empty clusters plus the old-index -> new-index map.
fn cluster_means(values: &[f64], assignment: &[usize], k: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in values.iter().zip(assignment) {
        sums[a] += v;
        counts[a] += 1;
    }
    let mut remap = vec![None; k];
    let mut means = Vec::with_capacity(k);
    for j in 0..k {
        if counts[j] > 0 {
            remap[j] = Some(means.len());
            means.push(sums[j] / counts[j] as f64);
        }
    }
    (means, remap)
}

/// Geometric seed resolutions `[r_1, ..., r_K]`, from `r_max` down to `r_min`.
/// `K = 1` yields `[r_max]`.
pub fn seed_schedule(k: usize, r_min: f64, r_max: f64) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::invalid("schedule needs K >= 1"));
    }
    if !(r_min.is_finite() && r_min > 0.0 && r_max.is_finite() && r_max > 0.0) {
        return Err(Error::invalid(format!(
            "seed resolutions must be positive (R_min={r_min}, R_max={r_max})"
        )));
    }
    if r_min > r_max {
        return Err(Error::invalid(format!("R_min={r_min} exceeds R_max={r_max}")));
    }
    if k == 1 || r_min == r_max {
        return Ok(vec![r_max; k]);
    }
    let log_max = r_max.log10();
    let step = -(r_min.log10() - log_max) / (k - 1) as f64;
    let mut schedule: Vec<f64> = (0..k)
        .map(|i| 10f64.powf(log_max - i as f64 * step))
        .collect();
    schedule[0] = r_max;
    schedule[k - 1] = r_min;
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    width: usize,
    height: usize,
    /// Cluster per pixel; `None` at invalid-depth pixels.
    assignment: Vec<Option<usize>>,
    cluster_mean_saliency: Vec<f64>,
    seed_resolutions: Vec<f64>,
    requested_k: usize,
}

impl ClusterPartition {
    pub fn k(&self) -> usize {
        self.cluster_mean_saliency.len()
    }

    pub fn requested_k(&self) -> usize {
        self.requested_k
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn cluster_mean_saliency(&self) -> &[f64] {
        &self.cluster_mean_saliency
    }

    pub fn seed_resolutions(&self) -> &[f64] {
        &self.seed_resolutions
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for c in self.assignment.iter().flatten() {
            sizes[*c] += 1;
        }
        sizes
    }

    /// Cluster index per pixel, unlabeled where depth is missing.
    pub fn cluster_map(&self) -> LabelMap2D {
        let labels = self
            .assignment
            .iter()
            .map(|a| a.map_or(UNLABELED, |c| c as u32))
            .collect();
        LabelMap2D::new(self.width, self.height, labels).expect("assignment covers the lattice")
    }
}

/// Clusters saliency at valid pixels, sorts clusters by ascending mean
/// saliency and attaches the seed schedule for the effective K.
pub fn build_partition(
    saliency: &SaliencyMap,
    cloud: &OrganizedCloud,
    k: usize,
    r_min: f64,
    r_max: f64,
) -> Result<ClusterPartition> {
    if saliency.dims() != cloud.dims() {
        return Err(Error::DimensionMismatch {
            expected: cloud.dims(),
            actual: saliency.dims(),
        });
    }
    seed_schedule(k, r_min, r_max)?;
    let valid: Vec<usize> = cloud.valid_indices().collect();
    if valid.is_empty() {
        return Err(Error::Empty("cloud has no valid points"));
    }
    let values: Vec<f64> = valid.iter().map(|&i| saliency.values()[i]).collect();
    let km = kmeans_1d(&values, k, DEFAULT_KMEANS_ITERS, DEFAULT_KMEANS_TOL)?;

    let mut order: Vec<usize> = (0..km.effective_k()).collect();
    order.sort_by(|&a, &b| km.centroids[a].total_cmp(&km.centroids[b]).then(a.cmp(&b)));
    let mut rank = vec![0; order.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }

    let mut sums = vec![0.0; order.len()];
    let mut counts = vec![0usize; order.len()];
    let mut assignment = vec![None; cloud.len()];
    for ((&pixel, &c), v) in valid.iter().zip(&km.assignment).zip(&values) {
        let r = rank[c];
        assignment[pixel] = Some(r);
        sums[r] += v;
        counts[r] += 1;
    }
    let cluster_mean_saliency = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect();
    let effective_k = order.len();
    let (lo, hi) = if effective_k == 1 { (r_max, r_max) } else { (r_min, r_max) };
    Ok(ClusterPartition {
        width: cloud.width(),
        height: cloud.height(),
        assignment,
        cluster_mean_saliency,
        seed_resolutions: seed_schedule(effective_k, lo, hi)?,
        requested_k: k,
    })
}
