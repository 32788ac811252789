//! VCCS supervoxels and the saliency-guided (SSV) orchestrator.
//!
//! Clustering runs in the 39-D space `[x, y, z, L, a, b, FPFH_1..33]` with
//! the normalized distance
//!
//! ```text
//! D = sqrt(lambda * Dc^2 / m^2 + mu * Ds^2 / (3 * R_seed^2) + epsilon * Dhik^2)
//! ```
//!
//! Supervoxels grow from their seeds in synchronized breadth-first waves
//! over 26-adjacency, so every supervoxel stays connected.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;

use crate::color::lab_distance;
use crate::error::{Error, Result};
use crate::partition::{build_partition, ClusterPartition};
use crate::rgbd_io::{LabelMap2D, OrganizedCloud, UNLABELED};
use crate::saliency::SaliencyMap;
use crate::voxel::{distance, hik_distance, ColoredPoint, Fpfh, VoxelFeature, VoxelGrid, VoxelKey, FPFH_BINS};

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VccsParams {
    pub voxel_resolution: f64,
    pub seed_resolution: f64,
    /// Color weight.
    pub lambda: f64,
    /// Spatial weight.
    pub mu: f64,
    /// FPFH weight.
    pub epsilon: f64,
    /// Color normalization constant.
    pub color_norm: f64,
    pub max_iters: usize,
    /// Defaults to twice the voxel resolution.
    pub normal_radius: Option<f64>,
    /// Defaults to twice the voxel resolution.
    pub fpfh_radius: Option<f64>,
}

impl Default for VccsParams {
    fn default() -> Self {
        Self {
            voxel_resolution: 0.02,
            seed_resolution: 0.1,
            lambda: 0.7,
            mu: 0.15,
            epsilon: 0.15,
            color_norm: 100.0,
            max_iters: 5,
            normal_radius: None,
            fpfh_radius: None,
        }
    }
}

impl VccsParams {
    pub fn with_seed_resolution(self, seed_resolution: f64) -> Self {
        Self {
            seed_resolution,
            ..self
        }
    }

    pub fn normal_radius(&self) -> f64 {
        self.normal_radius.unwrap_or(2.0 * self.voxel_resolution)
    }

    pub fn fpfh_radius(&self) -> f64 {
        self.fpfh_radius.unwrap_or(2.0 * self.voxel_resolution)
    }

    /// Checks everything except the seed resolution ordering.
    pub fn validate_weights(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.voxel_resolution) {
            return Err(Error::invalid(format!(
                "voxel resolution must be positive, got {}",
                self.voxel_resolution
            )));
        }
        for (name, w) in [("lambda", self.lambda), ("mu", self.mu), ("epsilon", self.epsilon)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {w}")));
            }
        }
        let sum = self.lambda + self.mu + self.epsilon;
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "lambda + mu + epsilon must equal 1, got {sum}"
            )));
        }
        if !positive(self.color_norm) {
            return Err(Error::invalid(format!("m must be positive, got {}", self.color_norm)));
        }
        if !positive(self.normal_radius()) || !positive(self.fpfh_radius()) {
            return Err(Error::invalid("feature radii must be positive"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_weights()?;
        if !(self.seed_resolution.is_finite() && self.seed_resolution > self.voxel_resolution) {
            return Err(Error::invalid(format!(
                "seed resolution {} must exceed voxel resolution {}",
                self.seed_resolution, self.voxel_resolution
            )));
        }
        Ok(())
    }
}

/// A point in the 39-D clustering space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoint {
    pub position: [f64; 3],
    pub lab: [f64; 3],
    pub fpfh: Fpfh,
}

impl From<&VoxelFeature> for FeaturePoint {
    fn from(f: &VoxelFeature) -> Self {
        Self {
            position: f.centroid,
            lab: f.lab,
            fpfh: f.fpfh,
        }
    }
}

impl FeaturePoint {
    fn mean<'a>(members: impl Iterator<Item = &'a VoxelFeature>) -> Self {
        let mut acc = FeaturePoint {
            position: [0.0; 3],
            lab: [0.0; 3],
            fpfh: [0.0; FPFH_BINS],
        };
        let mut n = 0usize;
        for f in members {
            for a in 0..3 {
                acc.position[a] += f.centroid[a];
                acc.lab[a] += f.lab[a];
            }
            acc.fpfh.iter_mut().zip(&f.fpfh).for_each(|(s, v)| *s += v);
            n += 1;
        }
        let n = n.max(1) as f64;
        acc.position.iter_mut().chain(acc.lab.iter_mut()).chain(acc.fpfh.iter_mut()).for_each(|v| *v /= n);
        acc
    }
}

/// Weighted clustering distance from its three component distances.
pub fn normalized_distance(color: f64, spatial: f64, hik: f64, params: &VccsParams) -> f64 {
    let m = params.color_norm;
    let r = params.seed_resolution;
    (params.lambda * color * color / (m * m)
        + params.mu * spatial * spatial / (3.0 * r * r)
        + params.epsilon * hik * hik)
        .sqrt()
}

pub fn feature_distance(a: &FeaturePoint, b: &FeaturePoint, params: &VccsParams) -> f64 {
    let hik = hik_distance(&a.fpfh, &b.fpfh).expect("fixed-length histograms");
    normalized_distance(
        lab_distance(&a.lab, &b.lab),
        distance(&a.position, &b.position),
        hik,
        params,
    )
}

/// Seeds from a lattice of spacing `seed_resolution` anchored at the
/// minimum corner of the voxel centroids: each lattice point takes the
/// occupied voxel whose centroid is nearest and within half the spacing
/// (ties to the lower voxel index); lattice points with no voxel in range
/// are dropped. Returned in ascending voxel order.
pub fn place_seeds(grid: &VoxelGrid, seed_resolution: f64) -> Result<Vec<VoxelKey>> {
    Ok(seed_indices(grid, seed_resolution)?
        .into_iter()
        .map(|i| grid.keys()[i])
        .collect())
}

fn seed_indices(grid: &VoxelGrid, seed_resolution: f64) -> Result<Vec<usize>> {
    if !(seed_resolution.is_finite() && seed_resolution > 0.0) {
        return Err(Error::invalid(format!(
            "seed resolution must be positive, got {seed_resolution}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::Empty("voxel grid"));
    }
    let mut origin = [f64::INFINITY; 3];
    for f in grid.features() {
        for a in 0..3 {
            origin[a] = origin[a].min(f.centroid[a]);
        }
    }
    let half = seed_resolution / 2.0;
    // balls of radius R/2 around lattice points are disjoint, so the only
    // lattice point a voxel can serve is the one it rounds to
    let mut best: BTreeMap<[i64; 3], (f64, usize)> = BTreeMap::new();
    for (i, f) in grid.features().iter().enumerate() {
        let lattice = [0, 1, 2].map(|a| ((f.centroid[a] - origin[a]) / seed_resolution).round() as i64);
        let point = [0, 1, 2].map(|a| origin[a] + lattice[a] as f64 * seed_resolution);
        let d = distance(&f.centroid, &point);
        if d > half {
            continue;
        }
        best.entry(lattice)
            .and_modify(|e| {
                if d < e.0 {
                    *e = (d, i);
                }
            })
            .or_insert((d, i));
    }
    let mut seeds: Vec<usize> = best.into_values().map(|(_, i)| i).collect();
    seeds.sort_unstable();
    Ok(seeds)
}

/// Supervoxel labels over one voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSegmentation {
    /// Supervoxel id per voxel, in grid order.
    pub labels: Vec<u32>,
    /// Member mean per supervoxel id.
    pub centroids: Vec<FeaturePoint>,
    /// Seed voxel of each seeded supervoxel; ids at and beyond
    /// `seeds.len()` are unseeded connected components.
    pub seeds: Vec<usize>,
    pub iterations: usize,
}

impl VoxelSegmentation {
    pub fn num_supervoxels(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_supervoxels()];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Voxelizes points and computes normals and FPFH with the radii in `params`.
pub fn prepare_grid(points: &[ColoredPoint], params: &VccsParams) -> Result<VoxelGrid> {
    let mut grid = VoxelGrid::voxelize(points, params.voxel_resolution)?;
    grid.compute_features(params.normal_radius(), params.fpfh_radius());
    Ok(grid)
}

const NONE: u32 = u32::MAX;

/// Connectivity-constrained clustering of a featured grid.
pub fn vccs_segment(grid: &VoxelGrid, params: &VccsParams) -> Result<VoxelSegmentation> {
    params.validate()?;
    let seeds = seed_indices(grid, params.seed_resolution)?;
    if seeds.is_empty() {
        return Err(Error::Empty("no seeds could be placed"));
    }
    let adjacency: Vec<Vec<usize>> = (0..grid.len()).map(|v| grid.neighbor_indices(v)).collect();
    let features = grid.features();
    let mut centroids: Vec<FeaturePoint> =
        seeds.iter().map(|&s| FeaturePoint::from(&features[s])).collect();
    let mut labels = vec![NONE; grid.len()];
    let mut iterations = 0;

    for _ in 0..params.max_iters.max(1) {
        let next = grow_from_seeds(grid, &adjacency, &seeds, &centroids, params);
        iterations += 1;
        let stable = next == labels;
        labels = next;
        centroids = member_means(features, &labels);
        if stable {
            break;
        }
    }
    Ok(VoxelSegmentation {
        labels,
        centroids,
        seeds,
        iterations,
    })
}

/// One full expansion pass. Unreached voxels become extra supervoxels, one
/// per connected component.
fn grow_from_seeds(
    grid: &VoxelGrid,
    adjacency: &[Vec<usize>],
    seeds: &[usize],
    centroids: &[FeaturePoint],
    params: &VccsParams,
) -> Vec<u32> {
    let features = grid.features();
    let n = grid.len();
    let mut labels = vec![NONE; n];
    let mut frontiers: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![s]).collect();
    for (id, &s) in seeds.iter().enumerate() {
        labels[s] = id as u32;
    }
    let mut offer = vec![(f64::INFINITY, NONE); n];
    let mut touched: Vec<usize> = Vec::new();
    loop {
        for (id, frontier) in frontiers.iter().enumerate() {
            let centroid = &centroids[id];
            for &v in frontier {
                for &nb in &adjacency[v] {
                    if labels[nb] != NONE {
                        continue;
                    }
                    let d = feature_distance(&FeaturePoint::from(&features[nb]), centroid, params);
                    let current = &mut offer[nb];
                    if current.1 == NONE {
                        touched.push(nb);
                    }
                    if d < current.0 || (d == current.0 && (id as u32) < current.1) {
                        *current = (d, id as u32);
                    }
                }
            }
        }
        if touched.is_empty() {
            break;
        }
        frontiers.iter_mut().for_each(Vec::clear);
        touched.sort_unstable();
        for &v in &touched {
            let id = offer[v].1;
            labels[v] = id;
            frontiers[id as usize].push(v);
            offer[v] = (f64::INFINITY, NONE);
        }
        touched.clear();
    }

    let mut next_id = seeds.len() as u32;
    for start in 0..n {
        if labels[start] != NONE {
            continue;
        }
        labels[start] = next_id;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &nb in &adjacency[v] {
                if labels[nb] == NONE {
                    labels[nb] = next_id;
                    queue.push_back(nb);
                }
            }
        }
        next_id += 1;
    }
    labels
}

fn member_means(features: &[VoxelFeature], labels: &[u32]) -> Vec<FeaturePoint> {
    let count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (v, &l) in labels.iter().enumerate() {
        members[l as usize].push(v);
    }
    members
        .iter()
        .map(|m| FeaturePoint::mean(m.iter().map(|&v| &features[v])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervoxel {
    pub centroid: FeaturePoint,
    pub voxel_count: usize,
    pub point_count: usize,
    /// Saliency cluster the supervoxel was grown in (0 for plain VCCS).
    pub cluster: usize,
}

/// Result of running VCCS on one saliency cluster's points.
#[derive(Debug, Clone)]
pub struct ClusterSegment {
    pub cluster: usize,
    pub seed_resolution: f64,
    /// Lattice index of each point fed to the grid, in grid input order.
    pub pixels: Vec<usize>,
    pub grid: VoxelGrid,
    pub voxels: VoxelSegmentation,
    /// Added to local supervoxel ids to get global ids.
    pub label_offset: u32,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    point_labels: Vec<u32>,
    supervoxels: Vec<Supervoxel>,
    parts: Vec<ClusterSegment>,
    projected: LabelMap2D,
}

impl Segmentation {
    /// Supervoxel id per lattice pixel, [`UNLABELED`] at invalid pixels.
    pub fn point_labels(&self) -> &[u32] {
        &self.point_labels
    }

    pub fn supervoxels(&self) -> &[Supervoxel] {
        &self.supervoxels
    }

    pub fn num_supervoxels(&self) -> usize {
        self.supervoxels.len()
    }

    pub fn parts(&self) -> &[ClusterSegment] {
        &self.parts
    }

    /// 2-D label map with invalid pixels filled from the nearest label.
    pub fn projected(&self) -> &LabelMap2D {
        &self.projected
    }

    pub fn total_seeds(&self) -> usize {
        self.parts.iter().map(|p| p.voxels.seeds.len()).sum()
    }
}

fn cluster_points(cloud: &OrganizedCloud, pixels: &[usize]) -> Vec<ColoredPoint> {
    pixels
        .iter()
        .map(|&i| {
            let p = &cloud.points()[i];
            ColoredPoint {
                position: p.position,
                color: p.color,
            }
        })
        .collect()
}

fn segment_part(
    cloud: &OrganizedCloud,
    cluster: usize,
    pixels: Vec<usize>,
    params: &VccsParams,
) -> Result<ClusterSegment> {
    let grid = prepare_grid(&cluster_points(cloud, &pixels), params)?;
    let voxels = vccs_segment(&grid, params)?;
    Ok(ClusterSegment {
        cluster,
        seed_resolution: params.seed_resolution,
        pixels,
        grid,
        voxels,
        label_offset: 0,
    })
}

fn assemble(cloud: &OrganizedCloud, mut parts: Vec<ClusterSegment>) -> Result<Segmentation> {
    let mut point_labels = vec![UNLABELED; cloud.len()];
    let mut supervoxels = Vec::new();
    let mut offset = 0u32;
    for part in parts.iter_mut() {
        part.label_offset = offset;
        let mut point_counts = vec![0usize; part.voxels.num_supervoxels()];
        for (&pixel, &voxel) in part.pixels.iter().zip(part.grid.point_to_voxel()) {
            let local = part.voxels.labels[voxel];
            point_labels[pixel] = offset + local;
            point_counts[local as usize] += 1;
        }
        let sizes = part.voxels.sizes();
        for (local, centroid) in part.voxels.centroids.iter().enumerate() {
            supervoxels.push(Supervoxel {
                centroid: centroid.clone(),
                voxel_count: sizes[local],
                point_count: point_counts[local],
                cluster: part.cluster,
            });
        }
        offset += part.voxels.num_supervoxels() as u32;
    }
    let projected = project_labels(cloud, &point_labels)?;
    Ok(Segmentation {
        point_labels,
        supervoxels,
        parts,
        projected,
    })
}

/// Uniform VCCS over all valid points of a cloud.
pub fn vccs_segment_cloud(cloud: &OrganizedCloud, params: &VccsParams) -> Result<Segmentation> {
    params.validate()?;
    let pixels: Vec<usize> = cloud.valid_indices().collect();
    if pixels.is_empty() {
        return Err(Error::Empty("cloud has no valid points"));
    }
    let part = segment_part(cloud, 0, pixels, params)?;
    assemble(cloud, vec![part])
}

#[derive(Debug, Clone)]
pub struct SsvResult {
    pub segmentation: Segmentation,
    pub partition: ClusterPartition,
}

/// Saliency-guided supervoxels: partition by saliency, run VCCS per cluster
/// at that cluster's seed resolution, and merge in ascending cluster order.
/// `params.seed_resolution` is ignored.
pub fn ssv_segment(
    cloud: &OrganizedCloud,
    saliency: &SaliencyMap,
    k: usize,
    r_min: f64,
    r_max: f64,
    params: &VccsParams,
) -> Result<SsvResult> {
    params.validate_weights()?;
    let partition = build_partition(saliency, cloud, k, r_min, r_max)?;
    ssv_segment_with_partition(cloud, partition, params)
}

pub fn ssv_segment_with_partition(
    cloud: &OrganizedCloud,
    partition: ClusterPartition,
    params: &VccsParams,
) -> Result<SsvResult> {
    params.validate_weights()?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); partition.k()];
    for (pixel, cluster) in partition.assignment().iter().enumerate() {
        if let Some(c) = cluster {
            members[*c].push(pixel);
        }
    }
    let jobs: Vec<(usize, Vec<usize>, VccsParams)> = members
        .into_iter()
        .enumerate()
        .filter(|(_, pixels)| !pixels.is_empty())
        .map(|(c, pixels)| (c, pixels, params.with_seed_resolution(partition.seed_resolutions()[c])))
        .collect();
    for (_, _, p) in &jobs {
        p.validate()?;
    }
    let parts = jobs
        .into_par_iter()
        .map(|(c, pixels, p)| segment_part(cloud, c, pixels, &p))
        .collect::<Result<Vec<_>>>()?;
    Ok(SsvResult {
        segmentation: assemble(cloud, parts)?,
        partition,
    })
}

/// Copies point labels onto the pixel lattice; pixels without a label take
/// the label of the nearest labeled pixel (Euclidean, ties to the smaller
/// linear index).
pub fn project_labels(cloud: &OrganizedCloud, point_labels: &[u32]) -> Result<LabelMap2D> {
    let (w, h) = cloud.dims();
    if point_labels.len() != w * h {
        return Err(Error::invalid(format!(
            "{} labels for a {w}x{h} cloud",
            point_labels.len()
        )));
    }
    if point_labels.iter().all(|&l| l == UNLABELED) {
        return Err(Error::Empty("no labeled points to project"));
    }
    let mut out = point_labels.to_vec();
    for y in 0..h {
        for x in 0..w {
            if point_labels[y * w + x] == UNLABELED {
                out[y * w + x] = point_labels[nearest_labeled(point_labels, w, h, x, y)];
            }
        }
    }
    LabelMap2D::new(w, h, out)
}

/// Ring search; a ring at Chebyshev radius `r` only holds pixels at
/// Euclidean distance >= r, so the search stops once r^2 exceeds the best.
fn nearest_labeled(labels: &[u32], w: usize, h: usize, x: usize, y: usize) -> usize {
    let (x, y) = (x as i64, y as i64);
    let mut best: Option<(i64, usize)> = None;
    let max_r = w.max(h) as i64;
    for r in 1..=max_r {
        if let Some((d2, _)) = best {
            if r * r > d2 {
                break;
            }
        }
        let mut consider = |px: i64, py: i64| {
            if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                return;
            }
            let idx = (py * w as i64 + px) as usize;
            if labels[idx] == UNLABELED {
                return;
            }
            let d2 = (px - x).pow(2) + (py - y).pow(2);
            if best.is_none_or(|(bd, bi)| d2 < bd || (d2 == bd && idx < bi)) {
                best = Some((d2, idx));
            }
        };
        for px in x - r..=x + r {
            consider(px, y - r);
            consider(px, y + r);
        }
        for py in y - r + 1..y + r {
            consider(x - r, py);
            consider(x + r, py);
        }
    }
    best.expect("at least one labeled pixel").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rgbd_io::{CameraIntrinsics, CloudPoint};
    use crate::voxel::adjacency_offsets;
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    fn pt(x: f64, y: f64, z: f64, color: [u8; 3]) -> ColoredPoint {
        ColoredPoint {
            position: [x, y, z],
            color,
        }
    }

    fn plane_points(nx: usize, ny: usize, spacing: f64, origin: [f64; 2], color: [u8; 3]) -> Vec<ColoredPoint> {
        (0..nx)
            .flat_map(|i| {
                (0..ny).map(move |j| pt(origin[0] + (i as f64 + 0.5) * spacing, origin[1] + (j as f64 + 0.5) * spacing, 1.0, color))
            })
            .collect()
    }

    fn is_connected(grid: &VoxelGrid, members: &[usize]) -> bool {
        let set: HashSet<VoxelKey> = members.iter().map(|&v| grid.keys()[v]).collect();
        let mut seen = HashSet::from([grid.keys()[members[0]]]);
        let mut queue = vec![grid.keys()[members[0]]];
        while let Some(k) = queue.pop() {
            for d in adjacency_offsets() {
                let n = k.offset(d);
                if set.contains(&n) && seen.insert(n) {
                    queue.push(n);
                }
            }
        }
        seen.len() == set.len()
    }

    fn assert_valid_segmentation(grid: &VoxelGrid, seg: &VoxelSegmentation) {
        assert_eq!(seg.labels.len(), grid.len());
        assert_eq!(seg.sizes().iter().sum::<usize>(), grid.len());
        for id in 0..seg.num_supervoxels() as u32 {
            let members: Vec<usize> = (0..grid.len()).filter(|&v| seg.labels[v] == id).collect();
            assert!(!members.is_empty(), "supervoxel {id} is empty");
            assert!(is_connected(grid, &members), "supervoxel {id} is disconnected");
        }
    }

    #[test]
    fn worked_distance_example() {
        let params = VccsParams {
            seed_resolution: 0.1,
            ..VccsParams::default()
        };
        assert_abs_diff_eq!(normalized_distance(10.0, 0.1, 0.2, &params), 0.063f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(normalized_distance(10.0, 0.1, 0.2, &params), 0.25100, epsilon = 1e-5);
    }

    #[test]
    fn spatial_term_scales_inversely_with_seed_resolution() {
        let p = VccsParams::default();
        let a = normalized_distance(0.0, 0.3, 0.0, &p.with_seed_resolution(0.1));
        let b = normalized_distance(0.0, 0.3, 0.0, &p.with_seed_resolution(0.2));
        assert_abs_diff_eq!(a, 2.0 * b, epsilon = 1e-12);
    }

    #[test]
    fn feature_distance_basics() {
        let p = VccsParams::default();
        let mut a = FeaturePoint {
            position: [0.1, 0.2, 1.0],
            lab: [50.0, 10.0, -5.0],
            fpfh: [0.0; FPFH_BINS],
        };
        a.fpfh[3] = 1.0;
        let mut b = a.clone();
        b.position[0] += 0.05;
        b.lab[2] += 7.0;
        b.fpfh[3] = 0.5;
        b.fpfh[4] = 0.5;
        assert_eq!(feature_distance(&a, &a, &p), 0.0);
        let ab = feature_distance(&a, &b, &p);
        assert_eq!(ab, feature_distance(&b, &a, &p));
        assert_abs_diff_eq!(ab, normalized_distance(7.0, 0.05, 0.5, &p), epsilon = 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(VccsParams::default().validate().is_ok());
        let bad = VccsParams { lambda: 0.5, ..VccsParams::default() };
        assert!(bad.validate().is_err());
        let bad = VccsParams { seed_resolution: 0.02, ..VccsParams::default() };
        assert!(bad.validate().is_err());
        let bad = VccsParams { color_norm: 0.0, ..VccsParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_voxel_seeds_itself() {
        let points = [pt(0.3, 0.3, 1.01, [10, 10, 10])];
        let grid = prepare_grid(&points, &VccsParams::default()).unwrap();
        for r in [0.05, 0.1, 0.5] {
            assert_eq!(place_seeds(&grid, r).unwrap().len(), 1);
        }
        let seg = vccs_segment(&grid, &VccsParams::default()).unwrap();
        assert_eq!(seg.labels, vec![0]);
        assert_eq!(seg.num_supervoxels(), 1);
    }

    #[test]
    fn plane_seed_count() {
        let points = plane_points(100, 100, 0.01, [0.0, 0.0], [100, 100, 100]);
        let grid = prepare_grid(&points, &VccsParams::default()).unwrap();
        let seeds = place_seeds(&grid, 0.2).unwrap();
        assert!((25..=36).contains(&seeds.len()), "{} seeds", seeds.len());
        assert_eq!(seeds.iter().collect::<HashSet<_>>().len(), seeds.len());
    }

    #[test]
    fn lattice_points_far_from_voxels_get_no_seed() {
        // voxels at opposite corners of a 0.4 m box each serve a lattice point
        let points = [pt(0.001, 0.001, 1.001, [0; 3]), pt(0.399, 0.399, 1.399, [0; 3])];
        let grid = prepare_grid(&points, &VccsParams::default()).unwrap();
        assert_eq!(place_seeds(&grid, 0.1).unwrap().len(), 2);
        // second voxel is offset 0.05 m from the anchor on every axis, so
        // about 0.087 m from every lattice point
        let far = [pt(0.001, 0.001, 1.001, [0; 3]), pt(0.051, 0.051, 1.051, [0; 3])];
        let grid = prepare_grid(&far, &VccsParams::default()).unwrap();
        assert_eq!(place_seeds(&grid, 0.1).unwrap().len(), 1);
    }

    #[test]
    fn plane_seed_count_matches_lattice_enumeration() {
        // 1 m square plane sampled every 5 mm
        let points = plane_points(200, 200, 0.005, [0.0, 0.0], [90; 3]);
        let params = VccsParams::default();
        let grid = prepare_grid(&points, &params).unwrap();
        let seeds = place_seeds(&grid, 0.2).unwrap();
        // brute force: every lattice point against every voxel
        let c: Vec<[f64; 3]> = grid.features().iter().map(|f| f.centroid).collect();
        let origin = [0, 1, 2].map(|a| c.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min));
        let mut expected = HashSet::new();
        for i in 0..=6 {
            for j in 0..=6 {
                let lp = [origin[0] + 0.2 * i as f64, origin[1] + 0.2 * j as f64, origin[2]];
                let nearest = (0..c.len())
                    .map(|v| (distance(&c[v], &lp), v))
                    .filter(|&(d, _)| d <= 0.1)
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if let Some((_, v)) = nearest {
                    expected.insert(v);
                }
            }
        }
        let got: HashSet<usize> = seeds.iter().map(|k| grid.index_of(*k).unwrap()).collect();
        assert_eq!(got, expected);
        assert!((25..=36).contains(&seeds.len()), "{} seeds", seeds.len());
    }

    #[test]
    fn separated_blobs_become_one_supervoxel_each() {
        let mut points = plane_points(6, 6, 0.01, [0.0, 0.0], [255, 0, 0]);
        points.extend(plane_points(6, 6, 0.01, [1.0, 0.0], [0, 0, 255]));
        let params = VccsParams::default().with_seed_resolution(0.1);
        let grid = prepare_grid(&points, &params).unwrap();
        let seg = vccs_segment(&grid, &params).unwrap();
        assert_eq!(seg.num_supervoxels(), 2);
        let left: HashSet<u32> = (0..grid.len()).filter(|&v| grid.features()[v].centroid[0] < 0.5).map(|v| seg.labels[v]).collect();
        let right: HashSet<u32> = (0..grid.len()).filter(|&v| grid.features()[v].centroid[0] > 0.5).map(|v| seg.labels[v]).collect();
        assert_eq!(left.len(), 1);
        assert_eq!(right.len(), 1);
        assert!(left.is_disjoint(&right));
    }

    #[test]
    fn uniform_plane_partitions_into_connected_supervoxels() {
        let points = plane_points(40, 40, 0.005, [0.0, 0.0], [120, 120, 120]);
        let params = VccsParams::default().with_seed_resolution(0.1);
        let grid = prepare_grid(&points, &params).unwrap();
        let seg = vccs_segment(&grid, &params).unwrap();
        // lattice at 0, 0.1, 0.2 from the corner on both axes
        assert_eq!(seg.seeds.len(), 9);
        assert_eq!(seg.num_supervoxels(), 9);
        assert_valid_segmentation(&grid, &seg);
    }

    #[test]
    fn unreachable_voxels_form_their_own_supervoxels() {
        let mut points = plane_points(20, 20, 0.01, [0.0, 0.0], [50, 50, 50]);
        // lone voxel 0.3 m away seeds its own cell
        points.push(pt(0.5, 0.5, 1.3, [50, 50, 50]));
        let params = VccsParams::default().with_seed_resolution(0.1);
        let grid = prepare_grid(&points, &params).unwrap();
        let seg = vccs_segment(&grid, &params).unwrap();
        assert_valid_segmentation(&grid, &seg);
        let lone = grid.index_of(VoxelKey::of([0.5, 0.5, 1.3], 0.02)).unwrap();
        assert_eq!(seg.sizes()[seg.labels[lone] as usize], 1);

        // two voxels, not adjacent, the second too far from any lattice
        // point to seed: it is unreachable and gets an extra label
        let pair = [pt(0.001, 0.001, 1.001, [0; 3]), pt(0.061, 0.061, 1.061, [0; 3])];
        let grid = prepare_grid(&pair, &params).unwrap();
        let seg = vccs_segment(&grid, &params).unwrap();
        assert_eq!(seg.seeds.len(), 1);
        assert_eq!(seg.num_supervoxels(), 2);
        assert_valid_segmentation(&grid, &seg);
    }

    #[test]
    fn color_boundary_is_respected() {
        // edge on a voxel face between two lattice columns
        let mut points = plane_points(12, 40, 0.005, [0.0, 0.0], [220, 30, 30]);
        points.extend(plane_points(28, 40, 0.005, [0.06, 0.0], [30, 30, 220]));
        let params = VccsParams::default().with_seed_resolution(0.1);
        let grid = prepare_grid(&points, &params).unwrap();
        let seg = vccs_segment(&grid, &params).unwrap();
        assert_valid_segmentation(&grid, &seg);
        for (v, f) in grid.features().iter().enumerate() {
            let seed = &grid.features()[seg.seeds[seg.labels[v] as usize]];
            assert_eq!(f.lab[2] < 0.0, seed.lab[2] < 0.0, "voxel {v} crossed the color edge");
        }
    }

    #[test]
    fn segmentation_is_deterministic() {
        let mut points = plane_points(30, 30, 0.007, [0.0, 0.0], [90, 140, 60]);
        points.extend(plane_points(10, 10, 0.007, [0.05, 0.05], [240, 240, 20]).into_iter().map(|mut p| {
            p.position[2] = 0.98;
            p
        }));
        let params = VccsParams::default().with_seed_resolution(0.08);
        let grid = prepare_grid(&points, &params).unwrap();
        let a = vccs_segment(&grid, &params).unwrap();
        let b = vccs_segment(&grid, &params).unwrap();
        assert_eq!(a, b);
        assert_valid_segmentation(&grid, &a);
    }

    fn organized(w: usize, h: usize, labels: impl Fn(usize, usize) -> bool) -> OrganizedCloud {
        let points = (0..w * h)
            .map(|i| CloudPoint {
                position: [i as f64, 0.0, 1.0],
                color: [0; 3],
                valid: labels(i % w, i / w),
            })
            .collect();
        OrganizedCloud::from_points(w, h, points).unwrap()
    }

    #[test]
    fn projection_fills_invalid_pixels() {
        let cloud = organized(3, 3, |_, _| true);
        let labels: Vec<u32> = (0..9).collect();
        assert_eq!(project_labels(&cloud, &labels).unwrap().labels(), labels.as_slice());

        let cloud = organized(3, 3, |x, y| (x, y) != (1, 1));
        let mut labels = vec![7; 9];
        labels[4] = UNLABELED;
        assert!(project_labels(&cloud, &labels).unwrap().labels().iter().all(|&l| l == 7));
    }

    #[test]
    fn projection_matches_brute_force_nearest() {
        let (w, h) = (9, 5);
        let cloud = organized(w, h, |x, _| x >= 4);
        let labels: Vec<u32> = (0..w * h).map(|i| if i % w >= 4 { (i % w) as u32 * 10 + (i / w) as u32 } else { UNLABELED }).collect();
        let out = project_labels(&cloud, &labels).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut best = (usize::MAX, 0);
                for j in 0..w * h {
                    if labels[j] == UNLABELED {
                        continue;
                    }
                    let d = (j % w).abs_diff(x).pow(2) + (j / w).abs_diff(y).pow(2);
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                assert_eq!(out.get(x, y), labels[best.1]);
            }
        }
        // each invalid pixel takes its own row's nearest labeled pixel
        assert_eq!(out.get(0, 2), 42);
        assert!(project_labels(&cloud, &[UNLABELED; 45]).is_err());
    }

    fn scene_cloud(w: usize, h: usize) -> OrganizedCloud {
        let k = CameraIntrinsics::new(200.0, 200.0, w as f64 / 2.0, h as f64 / 2.0, 0.001).unwrap();
        let mut rgb = vec![0u8; 3 * w * h];
        let mut depth = vec![1500u16; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let object = (w / 2..w / 2 + w / 6).contains(&x) && (h / 3..h / 3 + h / 4).contains(&y);
                let c = if object { [230, 40, 40] } else { [120, 120, 110] };
                rgb[3 * i..3 * i + 3].copy_from_slice(&c);
                if object {
                    depth[i] = 1400;
                }
            }
        }
        OrganizedCloud::from_rgbd(w, h, &rgb, &depth, &k).unwrap()
    }

    #[test]
    fn ssv_with_one_cluster_reduces_to_vccs() {
        let cloud = scene_cloud(80, 60);
        let values: Vec<f64> = (0..80 * 60).map(|i| (i % 7) as f64 / 6.0).collect();
        let sal = SaliencyMap::new(80, 60, values).unwrap();
        let params = VccsParams::default().with_seed_resolution(0.1);
        let ssv = ssv_segment(&cloud, &sal, 1, 0.1, 0.1, &params).unwrap();
        let vccs = vccs_segment_cloud(&cloud, &params).unwrap();
        assert_eq!(ssv.segmentation.point_labels(), vccs.point_labels());
        assert_eq!(ssv.segmentation.projected(), vccs.projected());

        // constant saliency falls back to uniform seeding at R_max
        let flat = SaliencyMap::new(80, 60, vec![0.3; 80 * 60]).unwrap();
        let ssv = ssv_segment(&cloud, &flat, 6, 0.05, 0.1, &params).unwrap();
        assert_eq!(ssv.partition.k(), 1);
        assert_eq!(ssv.segmentation.point_labels(), vccs.point_labels());
    }

    #[test]
    fn salient_region_gets_smaller_supervoxels() {
        let (w, h) = (120, 90);
        let cloud = scene_cloud(w, h);
        let values: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let object = (w / 2..w / 2 + w / 6).contains(&x) && (h / 3..h / 3 + h / 4).contains(&y);
                if object { 1.0 } else { 0.0 }
            })
            .collect();
        let sal = SaliencyMap::new(w, h, values).unwrap();
        let params = VccsParams::default();
        let out = ssv_segment(&cloud, &sal, 2, 0.04, 0.3, &params).unwrap();
        let seg = &out.segmentation;
        let mean_size = |cluster: usize| {
            let sizes: Vec<usize> = seg.supervoxels().iter().filter(|s| s.cluster == cluster).map(|s| s.voxel_count).collect();
            sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
        };
        assert!(mean_size(1) < mean_size(0), "object {} vs background {}", mean_size(1), mean_size(0));

        // no supervoxel mixes saliency clusters
        for (pixel, &label) in seg.point_labels().iter().enumerate() {
            if label != UNLABELED {
                assert_eq!(seg.supervoxels()[label as usize].cluster, out.partition.assignment()[pixel].unwrap());
            }
        }
        for part in seg.parts() {
            assert_valid_segmentation(&part.grid, &part.voxels);
        }
    }
}
