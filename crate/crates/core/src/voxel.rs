//! Regular voxel grid with per-voxel features.
//!
//! Point `p` lands in voxel `floor(p / R_voxel)` on every axis, so grids
//! built from subsets of one cloud share cell boundaries. Each occupied
//! voxel carries its centroid, mean color in CIELab, a PCA normal and a
//! 33-bin FPFH computed over neighboring voxel centroids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::color::rgb_to_lab;
use crate::error::{Error, Result};

pub const FPFH_BINS: usize = 33;
const BINS_PER_FEATURE: usize = 11;
/// Minimum number of other voxels in range for a normal to be defined.
const MIN_NORMAL_NEIGHBORS: usize = 3;

pub type Fpfh = [f64; FPFH_BINS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey(pub [i32; 3]);

impl VoxelKey {
    pub fn of(position: [f64; 3], resolution: f64) -> Self {
        VoxelKey(position.map(|c| (c / resolution).floor() as i32))
    }

    pub fn offset(self, d: [i32; 3]) -> Self {
        let [x, y, z] = self.0;
        VoxelKey([x + d[0], y + d[1], z + d[2]])
    }
}

/// The 26 face, edge and corner offsets.
pub fn adjacency_offsets() -> impl Iterator<Item = [i32; 3]> {
    (-1..=1)
        .flat_map(|x| (-1..=1).flat_map(move |y| (-1..=1).map(move |z| [x, y, z])))
        .filter(|d| *d != [0, 0, 0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: [f64; 3],
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeature {
    pub centroid: [f64; 3],
    pub lab: [f64; 3],
    /// Unit normal facing the sensor, or zero when undefined.
    pub normal: [f64; 3],
    /// L1-normalized histogram, or all zeros when undefined.
    pub fpfh: Fpfh,
    pub count: usize,
}

impl VoxelFeature {
    pub fn has_normal(&self) -> bool {
        self.normal != [0.0; 3]
    }
}

pub fn hik_similarity(h1: &[f64], h2: &[f64]) -> Result<f64> {
    if h1.len() != h2.len() {
        return Err(Error::HistogramLength(h1.len(), h2.len()));
    }
    Ok(h1.iter().zip(h2).map(|(a, b)| a.min(*b)).sum())
}

/// `1 - sum(min(h1, h2))`; two all-zero histograms are at distance 0.
pub fn hik_distance(h1: &[f64], h2: &[f64]) -> Result<f64> {
    let sim = hik_similarity(h1, h2)?;
    if sim == 0.0 && h1.iter().all(|&v| v == 0.0) && h2.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    Ok(1.0 - sim)
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    resolution: f64,
    keys: Vec<VoxelKey>,
    features: Vec<VoxelFeature>,
    index: HashMap<VoxelKey, usize>,
    point_to_voxel: Vec<usize>,
}

impl VoxelGrid {
    /// Groups points by voxel key. Voxels are stored in ascending key order.
    pub fn voxelize(points: &[ColoredPoint], resolution: f64) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::invalid(format!(
                "voxel resolution must be positive, got {resolution}"
            )));
        }
        if points.is_empty() {
            return Err(Error::Empty("no points to voxelize"));
        }
        if points.iter().any(|p| !p.position.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("non-finite point coordinates"));
        }
        let point_keys: Vec<VoxelKey> = points
            .iter()
            .map(|p| VoxelKey::of(p.position, resolution))
            .collect();
        let mut keys = point_keys.clone();
        keys.sort_unstable();
        keys.dedup();
        let index: HashMap<VoxelKey, usize> =
            keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

        let mut pos_sum = vec![[0.0; 3]; keys.len()];
        let mut rgb_sum = vec![[0.0; 3]; keys.len()];
        let mut counts = vec![0usize; keys.len()];
        let point_to_voxel: Vec<usize> = point_keys.iter().map(|k| index[k]).collect();
        for (p, &v) in points.iter().zip(&point_to_voxel) {
            for a in 0..3 {
                pos_sum[v][a] += p.position[a];
                rgb_sum[v][a] += p.color[a] as f64;
            }
            counts[v] += 1;
        }
        let features = (0..keys.len())
            .map(|v| {
                let n = counts[v] as f64;
                VoxelFeature {
                    centroid: pos_sum[v].map(|s| s / n),
                    lab: rgb_to_lab(rgb_sum[v].map(|s| s / n)),
                    normal: [0.0; 3],
                    fpfh: [0.0; FPFH_BINS],
                    count: counts[v],
                }
            })
            .collect();
        Ok(Self {
            resolution,
            keys,
            features,
            index,
            point_to_voxel,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[VoxelKey] {
        &self.keys
    }

    pub fn features(&self) -> &[VoxelFeature] {
        &self.features
    }

    pub fn feature(&self, key: VoxelKey) -> Option<&VoxelFeature> {
        self.index.get(&key).map(|&i| &self.features[i])
    }

    pub fn index_of(&self, key: VoxelKey) -> Option<usize> {
        self.index.get(&key).copied()
    }

    /// Voxel index of each input point, in input order.
    pub fn point_to_voxel(&self) -> &[usize] {
        &self.point_to_voxel
    }

    /// Lower corner of the bounding box of occupied voxels, in meters.
    pub fn min_corner(&self) -> [f64; 3] {
        let mut lo = [i32::MAX; 3];
        for k in &self.keys {
            for a in 0..3 {
                lo[a] = lo[a].min(k.0[a]);
            }
        }
        lo.map(|c| c as f64 * self.resolution)
    }

    /// Occupied 26-neighbors of an occupied voxel.
    pub fn neighbors(&self, key: VoxelKey) -> Result<Vec<VoxelKey>> {
        let i = self.index_of(key).ok_or(Error::UnknownVoxel(key.0))?;
        Ok(self
            .neighbor_indices(i)
            .into_iter()
            .map(|j| self.keys[j])
            .collect())
    }

    pub fn neighbor_indices(&self, voxel: usize) -> Vec<usize> {
        let key = self.keys[voxel];
        adjacency_offsets()
            .filter_map(|d| self.index_of(key.offset(d)))
            .collect()
    }

    /// Other voxels whose centroid lies within `radius` of this voxel's
    /// centroid, with their distances, in ascending voxel order.
    pub fn within_radius(&self, voxel: usize, radius: f64) -> Vec<(usize, f64)> {
        let span = (radius / self.resolution).floor() as i32 + 1;
        let key = self.keys[voxel];
        let c = self.features[voxel].centroid;
        let mut out = Vec::new();
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -span..=span {
                    let Some(j) = self.index_of(key.offset([dx, dy, dz])) else {
                        continue;
                    };
                    if j == voxel {
                        continue;
                    }
                    let d = distance(&c, &self.features[j].centroid);
                    if d <= radius {
                        out.push((j, d));
                    }
                }
            }
        }
        out.sort_unstable_by_key(|&(j, _)| j);
        out
    }

    /// PCA normal per voxel from the centroids of the voxel and its
    /// neighbors within `radius`, flipped to face the sensor origin.
    pub fn compute_normals(&mut self, radius: f64) {
        let normals: Vec<[f64; 3]> = (0..self.len())
            .into_par_iter()
            .map(|v| {
                let neighbors = self.within_radius(v, radius);
                if neighbors.len() < MIN_NORMAL_NEIGHBORS {
                    return [0.0; 3];
                }
                let members: Vec<Vector3<f64>> = std::iter::once(v)
                    .chain(neighbors.iter().map(|&(j, _)| j))
                    .map(|j| Vector3::from(self.features[j].centroid))
                    .collect();
                estimate_normal(&members, &Vector3::from(self.features[v].centroid))
            })
            .collect();
        for (f, n) in self.features.iter_mut().zip(normals) {
            f.normal = n;
        }
    }

    /// FPFH over neighbors within `radius`; requires normals.
    pub fn compute_fpfh(&mut self, radius: f64) {
        let neighborhoods: Vec<Vec<(usize, f64)>> = (0..self.len())
            .into_par_iter()
            .map(|v| {
                self.within_radius(v, radius)
                    .into_iter()
                    .filter(|&(j, d)| self.features[j].has_normal() && d > 0.0)
                    .collect()
            })
            .collect();
        let spfh: Vec<Fpfh> = (0..self.len())
            .into_par_iter()
            .map(|v| self.spfh(v, &neighborhoods[v]))
            .collect();
        let fpfh: Vec<Fpfh> = (0..self.len())
            .into_par_iter()
            .map(|v| {
                if !self.features[v].has_normal() || neighborhoods[v].is_empty() {
                    return [0.0; FPFH_BINS];
                }
                let mut hist = spfh[v];
                let k = neighborhoods[v].len() as f64;
                for &(j, d) in &neighborhoods[v] {
                    let w = 1.0 / (d * k);
                    for (h, s) in hist.iter_mut().zip(&spfh[j]) {
                        *h += w * s;
                    }
                }
                let total: f64 = hist.iter().sum();
                if total > 0.0 {
                    hist.iter_mut().for_each(|h| *h /= total);
                }
                hist
            })
            .collect();
        for (f, h) in self.features.iter_mut().zip(fpfh) {
            f.fpfh = h;
        }
    }

    /// Normals then FPFH.
    pub fn compute_features(&mut self, normal_radius: f64, fpfh_radius: f64) {
        self.compute_normals(normal_radius);
        self.compute_fpfh(fpfh_radius);
    }

    fn spfh(&self, v: usize, neighbors: &[(usize, f64)]) -> Fpfh {
        let mut hist = [0.0; FPFH_BINS];
        let me = &self.features[v];
        if !me.has_normal() || neighbors.is_empty() {
            return hist;
        }
        let mut pairs = 0usize;
        for &(j, _) in neighbors {
            let other = &self.features[j];
            let Some(f) = pair_features(&me.centroid, &me.normal, &other.centroid, &other.normal)
            else {
                continue;
            };
            hist[angle_bin(f[0], -std::f64::consts::PI, std::f64::consts::PI)] += 1.0;
            hist[BINS_PER_FEATURE + angle_bin(f[1], -1.0, 1.0)] += 1.0;
            hist[2 * BINS_PER_FEATURE + angle_bin(f[2], -1.0, 1.0)] += 1.0;
            pairs += 1;
        }
        if pairs > 0 {
            hist.iter_mut().for_each(|h| *h /= pairs as f64);
        }
        hist
    }

    /// CSV dump: key, centroid, lab, normal, count and the 33 FPFH bins.
    pub fn write_features_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            write!(out, "kx,ky,kz,x,y,z,L,a,b,nx,ny,nz,count")?;
            for i in 0..FPFH_BINS {
                write!(out, ",fpfh{i}")?;
            }
            writeln!(out)?;
            for (k, f) in self.keys.iter().zip(&self.features) {
                let [kx, ky, kz] = k.0;
                write!(out, "{kx},{ky},{kz}")?;
                for v in f.centroid.iter().chain(&f.lab).chain(&f.normal) {
                    write!(out, ",{v}")?;
                }
                write!(out, ",{}", f.count)?;
                for v in &f.fpfh {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn estimate_normal(members: &[Vector3<f64>], origin_side: &Vector3<f64>) -> [f64; 3] {
    let n = members.len() as f64;
    let mean = members.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let cov = members.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let smallest = eig.eigenvalues.imin();
    let mut normal: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned();
    let norm = normal.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return [0.0; 3];
    }
    normal /= norm;
    // face the sensor at the origin
    if normal.dot(&(-origin_side)) < 0.0 {
        normal = -normal;
    }
    [normal.x, normal.y, normal.z]
}

/// Darboux-frame pair features `(theta, alpha, phi)` with the source point
/// chosen as the one whose normal makes the smaller angle with the line
/// joining the pair. `None` for coincident points or a degenerate frame.
fn pair_features(p1: &[f64; 3], n1: &[f64; 3], p2: &[f64; 3], n2: &[f64; 3]) -> Option<[f64; 3]> {
    let (p1, n1, p2, n2) = (
        Vector3::from(*p1),
        Vector3::from(*n1),
        Vector3::from(*p2),
        Vector3::from(*n2),
    );
    let mut dp = p2 - p1;
    let len = dp.norm();
    if len == 0.0 {
        return None;
    }
    let angle1 = n1.dot(&dp) / len;
    let angle2 = n2.dot(&dp) / len;
    let (source_n, target_n, phi) = if angle1.abs().acos() > angle2.abs().acos() {
        dp = -dp;
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let v = dp.cross(&source_n);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return None;
    }
    let v = v / v_norm;
    let w = source_n.cross(&v);
    let alpha = v.dot(&target_n);
    let theta = w.dot(&target_n).atan2(source_n.dot(&target_n));
    Some([theta, alpha, phi])
}

fn angle_bin(value: f64, lo: f64, hi: f64) -> usize {
    let t = (value - lo) / (hi - lo);
    ((t * BINS_PER_FEATURE as f64).floor() as isize).clamp(0, BINS_PER_FEATURE as isize - 1) as usize
}
