//! Synthetic RGB-D scenes with ground truth: a plain wall at fixed depth
//! with colored axis-aligned boxes and spheres resting against it,
//! ray-cast through a pinhole camera.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rgbd_io::{self, CameraIntrinsics, DepthImage, LabelMap2D, OrganizedCloud};

pub const COLOR_FILE: &str = "color.ppm";
pub const DEPTH_FILE: &str = "depth.pgm";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const GT_FILE: &str = "gt.pgm";
pub const DESCRIPTOR_FILE: &str = "scene.txt";

const PLACEMENT_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Box { half_extents: [f64; 3] },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub center: [f64; 3],
    pub color: [u8; 3],
}

impl SceneObject {
    /// Ray parameter of the first hit along `dir` from the camera origin.
    fn intersect(&self, dir: [f64; 3]) -> Option<f64> {
        let c = self.center;
        match self.shape {
            Shape::Box { half_extents } => {
                let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
                for a in 0..3 {
                    let (lo, hi) = (c[a] - half_extents[a], c[a] + half_extents[a]);
                    if dir[a] == 0.0 {
                        if !(lo..=hi).contains(&0.0) {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = (lo / dir[a], hi / dir[a]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Shape::Sphere { radius } => {
                let a: f64 = dir.iter().map(|d| d * d).sum();
                let b: f64 = -2.0 * (0..3).map(|i| dir[i] * c[i]).sum::<f64>();
                let cc: f64 = c.iter().map(|v| v * v).sum::<f64>() - radius * radius;
                let disc = b * b - 4.0 * a * cc;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                (t > 0.0).then_some(t)
            }
        }
    }

    fn bounding_corners(&self) -> Vec<[f64; 3]> {
        let h = match self.shape {
            Shape::Box { half_extents } => half_extents,
            Shape::Sphere { radius } => [radius; 3],
        };
        let mut corners = Vec::with_capacity(8);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    corners.push([
                        self.center[0] + sx * h[0],
                        self.center[1] + sy * h[1],
                        self.center[2] + sz * h[2],
                    ]);
                }
            }
        }
        corners
    }

    /// Pixel-space bounding rectangle `[u0, v0, u1, v1]`.
    fn image_bounds(&self, k: &CameraIntrinsics) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in self.bounding_corners() {
            let (u, v) = k.project(p);
            b = [b[0].min(u), b[1].min(v), b[2].max(u), b[3].max(v)];
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDescriptor {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub background_depth: f64,
    pub background_color: [u8; 3],
    pub objects: Vec<SceneObject>,
    /// Uniform per-channel color noise amplitude.
    pub color_noise: u8,
    /// Probability that a pixel loses its depth reading.
    pub depth_dropout: f64,
}

/// Parameters for random scene generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_objects: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    pub color_noise: u8,
    pub depth_dropout: f64,
    /// Minimum pixel gap between object footprints and the image border.
    pub margin: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            num_objects: 3,
            min_size: 0.12,
            max_size: 0.3,
            min_depth: 2.0,
            max_depth: 2.6,
            color_noise: 6,
            depth_dropout: 0.002,
            margin: 4.0,
        }
    }
}

/// Kinect-like field of view at the given resolution.
pub fn default_intrinsics(width: usize, height: usize) -> CameraIntrinsics {
    let f = 525.0 * width as f64 / 640.0;
    CameraIntrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, rgbd_io::DEFAULT_DEPTH_SCALE)
        .expect("positive focal length")
}

fn saturated_color(rng: &mut impl Rng) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [210, 40, 40],
        [40, 170, 60],
        [40, 70, 210],
        [230, 200, 30],
        [200, 60, 190],
        [30, 190, 200],
        [240, 130, 20],
        [120, 40, 160],
    ];
    let base = PALETTE[rng.random_range(0..PALETTE.len())];
    base.map(|c| (c as i32 + rng.random_range(-15..=15)).clamp(0, 255) as u8)
}

impl SceneDescriptor {
    /// Random wall-plus-objects scene, deterministic in `seed`.
    pub fn random(spec: &SceneSpec, seed: u64) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::invalid("scene needs a nonzero image size"));
        }
        if !(spec.min_size > 0.0 && spec.min_size <= spec.max_size) {
            return Err(Error::invalid("object sizes must satisfy 0 < min <= max"));
        }
        if !(spec.min_depth > 0.0 && spec.min_depth <= spec.max_depth) {
            return Err(Error::invalid("wall depths must satisfy 0 < min <= max"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intrinsics = default_intrinsics(spec.width, spec.height);
        let background_depth = rng.random_range(spec.min_depth..=spec.max_depth);
        let gray = rng.random_range(110..=170);
        let background_color = [gray + rng.random_range(0..=20), gray + rng.random_range(0..=15), gray];

        let half_w = spec.width as f64 / 2.0 * background_depth / intrinsics.fx;
        let half_h = spec.height as f64 / 2.0 * background_depth / intrinsics.fy;
        let mut objects: Vec<SceneObject> = Vec::new();
        let mut footprints: Vec<[f64; 4]> = Vec::new();
        let mut attempts = 0;
        while objects.len() < spec.num_objects {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS {
                return Err(Error::invalid(format!(
                    "could only place {} of {} objects without overlap",
                    objects.len(),
                    spec.num_objects
                )));
            }
            let size = rng.random_range(spec.min_size..=spec.max_size);
            let shape = if rng.random_bool(0.6) {
                let depth_half = rng.random_range(0.3..=0.5) * size;
                Shape::Box {
                    half_extents: [size / 2.0, rng.random_range(0.6..=1.0) * size / 2.0, depth_half],
                }
            } else {
                Shape::Sphere { radius: size / 2.0 }
            };
            let z = match shape {
                // back face flush with the wall
                Shape::Box { half_extents } => background_depth - half_extents[2],
                // partly sunk into the wall so it stays attached
                Shape::Sphere { radius } => background_depth - 0.6 * radius,
            };
            let x = rng.random_range(-half_w..=half_w);
            let y = rng.random_range(-half_h..=half_h);
            let object = SceneObject {
                shape,
                center: [x, y, z],
                color: saturated_color(&mut rng),
            };
            let fp = object.image_bounds(&intrinsics);
            let m = spec.margin;
            let inside = fp[0] >= m
                && fp[1] >= m
                && fp[2] <= spec.width as f64 - 1.0 - m
                && fp[3] <= spec.height as f64 - 1.0 - m;
            let clear = footprints.iter().all(|o| {
                fp[2] + m < o[0] || o[2] + m < fp[0] || fp[3] + m < o[1] || o[3] + m < fp[1]
            });
            if inside && clear {
                footprints.push(fp);
                objects.push(object);
            }
        }
        let scene = Self {
            width: spec.width,
            height: spec.height,
            intrinsics,
            background_depth,
            background_color,
            objects,
            color_noise: spec.color_noise,
            depth_dropout: spec.depth_dropout,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Every object must lie in front of the wall and inside the view.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.background_depth > 0.0) {
            return Err(Error::invalid("wall depth must be positive"));
        }
        if !(0.0..=1.0).contains(&self.depth_dropout) {
            return Err(Error::invalid("depth dropout must be a probability"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let b = o.image_bounds(&self.intrinsics);
            let in_front = o.bounding_corners().iter().all(|c| c[2] > 0.0)
                && o.bounding_corners().iter().any(|c| c[2] < self.background_depth);
            let in_view = b[0] >= 0.0
                && b[1] >= 0.0
                && b[2] <= self.width as f64 - 1.0
                && b[3] <= self.height as f64 - 1.0;
            if !(in_front && in_view) {
                return Err(Error::invalid(format!("object {i} cannot be placed in view")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "background_depth={}", self.background_depth);
        let [r, g, b] = self.background_color;
        let _ = writeln!(s, "background_color={r},{g},{b}");
        let _ = writeln!(s, "color_noise={}", self.color_noise);
        let _ = writeln!(s, "depth_dropout={}", self.depth_dropout);
        let _ = writeln!(s, "objects={}", self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            let [x, y, z] = o.center;
            let [r, g, b] = o.color;
            let shape = match o.shape {
                Shape::Box { half_extents: [hx, hy, hz] } => format!("box {hx},{hy},{hz}"),
                Shape::Sphere { radius } => format!("sphere {radius}"),
            };
            let _ = writeln!(s, "object{i}={shape} center={x},{y},{z} color={r},{g},{b}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub descriptor: SceneDescriptor,
    pub color: RgbImage,
    pub depth: DepthImage,
    /// Background is label 0, object `i` is label `i + 1`.
    pub ground_truth: LabelMap2D,
}

impl SyntheticScene {
    pub fn render(descriptor: &SceneDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let (w, h) = (descriptor.width, descriptor.height);
        let k = &descriptor.intrinsics;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ca1_ab1e);
        let mut color = RgbImage::new(w as u32, h as u32);
        let mut depth = DepthImage::new(w as u32, h as u32);
        let mut labels = vec![0u32; w * h];
        let noise = descriptor.color_noise as i32;
        for v in 0..h {
            for u in 0..w {
                let dir = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
                let mut best = (descriptor.background_depth, 0u32, descriptor.background_color);
                for (i, o) in descriptor.objects.iter().enumerate() {
                    if let Some(t) = o.intersect(dir) {
                        if t < best.0 {
                            best = (t, i as u32 + 1, o.color);
                        }
                    }
                }
                let (z, label, base) = best;
                let jitter = base.map(|c| {
                    let n = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
                    (c as i32 + n).clamp(0, 255) as u8
                });
                let dropped = descriptor.depth_dropout > 0.0 && rng.random_bool(descriptor.depth_dropout);
                let stored = if dropped {
                    0
                } else {
                    (z / k.depth_scale).round().clamp(1.0, u16::MAX as f64) as u16
                };
                color.put_pixel(u as u32, v as u32, Rgb(jitter));
                depth.put_pixel(u as u32, v as u32, image::Luma([stored]));
                labels[v * w + u] = label;
            }
        }
        let ground_truth = LabelMap2D::new(w, h, labels)?;
        for i in 0..descriptor.objects.len() {
            if !ground_truth.labels().contains(&(i as u32 + 1)) {
                return Err(Error::invalid(format!("object {i} is not visible")));
            }
        }
        Ok(Self {
            descriptor: descriptor.clone(),
            color,
            depth,
            ground_truth,
        })
    }

    pub fn generate(spec: &SceneSpec, seed: u64) -> Result<Self> {
        Self::render(&SceneDescriptor::random(spec, seed)?, seed)
    }

    pub fn cloud(&self) -> Result<OrganizedCloud> {
        OrganizedCloud::from_rgbd(
            self.descriptor.width,
            self.descriptor.height,
            self.color.as_raw(),
            self.depth.as_raw(),
            &self.descriptor.intrinsics,
        )
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        rgbd_io::write_rgb8(&dir.join(COLOR_FILE), &self.color)?;
        rgbd_io::write_gray16(&dir.join(DEPTH_FILE), self.descriptor.width, self.descriptor.height, self.depth.as_raw())?;
        self.descriptor.intrinsics.save(dir.join(INTRINSICS_FILE))?;
        rgbd_io::save_label_map(&self.ground_truth, dir.join(GT_FILE))?;
        let path = dir.join(DESCRIPTOR_FILE);
        std::fs::write(&path, self.descriptor.to_text()).map_err(|e| Error::io(&path, e))
    }
}

/// Scene specs for the bundled benchmark suite: small salient objects on a
/// large plain wall.
pub fn suite_spec(index: usize) -> SceneSpec {
    SceneSpec {
        num_objects: 2 + index % 3,
        ..SceneSpec::default()
    }
}

pub const SUITE_SIZE: usize = 20;

/// Writes `count` suite scenes as `scene_000`, `scene_001`, ... under `dir`,
/// scene `i` seeded with `seed + i`.
pub fn write_suite(dir: impl AsRef<Path>, count: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    (0..count)
        .map(|i| {
            let scene = SyntheticScene::generate(&suite_spec(i), seed + i as u64)?;
            let path = dir.join(format!("scene_{i:03}"));
            scene.write(&path)?;
            Ok(path)
        })
        .collect()
}

/// One dataset entry: color, depth, intrinsics and ground truth files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneFiles {
    pub id: String,
    pub color: PathBuf,
    pub depth: PathBuf,
    pub intrinsics: PathBuf,
    pub ground_truth: PathBuf,
}

impl SceneFiles {
    pub fn in_dir(dir: &Path) -> Option<Self> {
        let files = Self {
            id: dir.file_name()?.to_string_lossy().into_owned(),
            color: dir.join(COLOR_FILE),
            depth: dir.join(DEPTH_FILE),
            intrinsics: dir.join(INTRINSICS_FILE),
            ground_truth: dir.join(GT_FILE),
        };
        [&files.color, &files.depth, &files.intrinsics, &files.ground_truth]
            .iter()
            .all(|p| p.is_file())
            .then_some(files)
    }
}

/// Scene subdirectories of `dir` holding a complete file set, sorted by name.
pub fn discover_dataset(dir: impl AsRef<Path>) -> Result<Vec<SceneFiles>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let scenes: Vec<SceneFiles> = dirs.iter().filter_map(|d| SceneFiles::in_dir(d)).collect();
    if scenes.is_empty() {
        return Err(Error::Empty("dataset directory has no complete scenes"));
    }
    Ok(scenes)
}
