//! RGB-D ingestion and artifact I/O.
//!
//! Color images are 8-bit RGB, depth images and label maps are 16-bit
//! single-channel (binary PPM/PGM or PNG). Label maps store `label + 1`,
//! with 0 reserved for unlabeled pixels. Labeled clouds use a plain ASCII
//! format: a `ssv-cloud v1 <count>` header followed by one
//! `x y z r g b label` row per point.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

pub type DepthImage = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Sentinel for pixels without a label.
pub const UNLABELED: u32 = u32::MAX;

pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;

const CLOUD_MAGIC: &str = "ssv-cloud v1";

/// Pinhole camera model plus the metric scale of stored depth units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, depth_scale: f64) -> Result<Self> {
        let intrinsics = Self {
            fx,
            fy,
            cx,
            cy,
            depth_scale,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.fx) || !positive(self.fy) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !positive(self.depth_scale) {
            return Err(Error::invalid(format!(
                "depth_scale must be positive, got {}",
                self.depth_scale
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(())
    }

    /// Point on the ray through pixel `(u, v)` at depth `z`.
    pub fn back_project(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Pixel coordinates of a 3-D point in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }

    /// Parses `key=value` lines (`fx`, `fy`, `cx`, `cy`, optional
    /// `depth_scale`). Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
        let mut depth_scale = DEFAULT_DEPTH_SCALE;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| format!("line {}: bad number {:?}", lineno + 1, value.trim()))?;
            match key.trim() {
                "fx" => fx = Some(value),
                "fy" => fy = Some(value),
                "cx" => cx = Some(value),
                "cy" => cy = Some(value),
                "depth_scale" => depth_scale = value,
                other => return Err(format!("line {}: unknown key {other:?}", lineno + 1)),
            }
        }
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| format!("missing key {name}"));
        let intrinsics = Self {
            fx: need(fx, "fx")?,
            fy: need(fy, "fy")?,
            cx: need(cx, "cx")?,
            cy: need(cy, "cy")?,
            depth_scale,
        };
        intrinsics.validate().map_err(|e| e.to_string())?;
        Ok(intrinsics)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|msg| Error::format(path, msg))
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "fx={}\nfy={}\ncx={}\ncy={}\ndepth_scale={}\n",
            self.fx, self.fy, self.cx, self.cy, self.depth_scale
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub color: [u8; 3],
    pub valid: bool,
}

impl CloudPoint {
    const INVALID: CloudPoint = CloudPoint {
        position: [f64::NAN; 3],
        color: [0; 3],
        valid: false,
    };
}

/// Point cloud that keeps the sensor's pixel lattice: record `v * width + u`
/// belongs to pixel `(u, v)`.
#[derive(Debug, Clone)]
pub struct OrganizedCloud {
    width: usize,
    height: usize,
    points: Vec<CloudPoint>,
}

impl OrganizedCloud {
    /// Back-projects every pixel with positive depth; zero depth is invalid.
    pub fn from_rgbd(
        width: usize,
        height: usize,
        rgb: &[u8],
        depth: &[u16],
        intrinsics: &CameraIntrinsics,
    ) -> Result<Self> {
        intrinsics.validate()?;
        let n = width * height;
        if rgb.len() != 3 * n {
            return Err(Error::invalid(format!(
                "color buffer has {} bytes, expected {}",
                rgb.len(),
                3 * n
            )));
        }
        if depth.len() != n {
            return Err(Error::invalid(format!(
                "depth buffer has {} samples, expected {n}",
                depth.len()
            )));
        }
        let points = (0..n)
            .map(|i| {
                let color = [rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]];
                match depth[i] {
                    0 => CloudPoint { color, ..CloudPoint::INVALID },
                    d => {
                        let (u, v) = ((i % width) as f64, (i / width) as f64);
                        let z = d as f64 * intrinsics.depth_scale;
                        CloudPoint {
                            position: intrinsics.back_project(u, v, z),
                            color,
                            valid: true,
                        }
                    }
                }
            })
            .collect();
        Ok(Self {
            width,
            height,
            points,
        })
    }

    /// Builds a cloud from explicit records. Valid records must have finite
    /// coordinates with `z > 0`.
    pub fn from_points(width: usize, height: usize, points: Vec<CloudPoint>) -> Result<Self> {
        if points.len() != width * height {
            return Err(Error::invalid(format!(
                "{} points for a {width}x{height} lattice",
                points.len()
            )));
        }
        if let Some(i) = points
            .iter()
            .position(|p| p.valid && !(p.position.iter().all(|c| c.is_finite()) && p.position[2] > 0.0))
        {
            return Err(Error::invalid(format!("point {i} is marked valid but has no positive depth")));
        }
        Ok(Self {
            width,
            height,
            points,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[CloudPoint] {
        &self.points
    }

    pub fn point(&self, u: usize, v: usize) -> &CloudPoint {
        &self.points[v * self.width + u]
    }

    pub fn num_valid(&self) -> usize {
        self.points.iter().filter(|p| p.valid).count()
    }

    /// Indices of valid points in lattice order.
    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.valid)
            .map(|(i, _)| i)
    }

    pub fn color_image(&self) -> RgbImage {
        let raw = self.points.iter().flat_map(|p| p.color).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("color buffer matches lattice size")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap2D {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMap2D {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, u: usize, v: usize) -> u32 {
        self.labels[v * self.width + u]
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    /// Number of distinct labels, not counting [`UNLABELED`].
    pub fn num_labels(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != UNLABELED).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

fn decode_image(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_color_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    match decode_image(path)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        other => Err(Error::format(
            path,
            format!("expected 8-bit RGB image, found {:?}", other.color()),
        )),
    }
}

pub fn load_gray16(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    match decode_image(path)? {
        DynamicImage::ImageLuma16(img) => Ok(img),
        other => Err(Error::format(
            path,
            format!("expected 16-bit single-channel image, found {:?}", other.color()),
        )),
    }
}

pub fn load_rgbd(
    color_path: impl AsRef<Path>,
    depth_path: impl AsRef<Path>,
    intrinsics: &CameraIntrinsics,
) -> Result<OrganizedCloud> {
    intrinsics.validate()?;
    let color = load_color_image(color_path)?;
    let depth = load_gray16(depth_path)?;
    if color.dimensions() != depth.dimensions() {
        let (cw, ch) = color.dimensions();
        let (dw, dh) = depth.dimensions();
        return Err(Error::DimensionMismatch {
            expected: (cw as usize, ch as usize),
            actual: (dw as usize, dh as usize),
        });
    }
    let (w, h) = color.dimensions();
    OrganizedCloud::from_rgbd(w as usize, h as usize, color.as_raw(), depth.as_raw(), intrinsics)
}

/// Stored value 0 becomes [`UNLABELED`], value `v > 0` becomes label `v - 1`.
pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap2D> {
    let img = load_gray16(path)?;
    let (w, h) = img.dimensions();
    let labels = img
        .as_raw()
        .iter()
        .map(|&v| if v == 0 { UNLABELED } else { v as u32 - 1 })
        .collect();
    LabelMap2D::new(w as usize, h as usize, labels)
}

fn write_pnm(path: &Path, magic: &str, width: usize, height: usize, maxval: u32, body: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "{magic}\n{width} {height}\n{maxval}\n")
        .and_then(|_| out.write_all(body))
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Binary PGM with maxval 65535, samples big-endian.
pub fn write_gray16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<()> {
    if samples.len() != width * height {
        return Err(Error::invalid(format!(
            "{} samples for a {width}x{height} image",
            samples.len()
        )));
    }
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_be_bytes()).collect();
    write_pnm(path, "P5", width, height, u16::MAX as u32, &bytes)
}

/// Binary PPM with maxval 255.
pub fn write_rgb8(path: &Path, image: &RgbImage) -> Result<()> {
    write_pnm(path, "P6", image.width() as usize, image.height() as usize, 255, image.as_raw())
}

pub fn save_label_map(map: &LabelMap2D, path: impl AsRef<Path>) -> Result<()> {
    let samples = map
        .labels
        .iter()
        .map(|&l| match l {
            UNLABELED => Ok(0),
            l if l < u16::MAX as u32 => Ok(l as u16 + 1),
            l => Err(Error::LabelOverflow(l)),
        })
        .collect::<Result<Vec<u16>>>()?;
    write_gray16(path.as_ref(), map.width, map.height, &samples)
}

/// Linear 16-bit quantization: stored = floor(value * 65535).
pub fn quantize_unit(value: f64) -> u16 {
    (value * u16::MAX as f64).floor() as u16
}

pub fn save_scalar_map(
    width: usize,
    height: usize,
    values: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::invalid(format!(
            "{} values for a {width}x{height} map",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("scalar value {v} outside [0, 1]")));
    }
    let samples: Vec<u16> = values.iter().map(|&v| quantize_unit(v)).collect();
    write_gray16(path.as_ref(), width, height, &samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: [f64; 3],
    pub color: [u8; 3],
    pub label: u32,
}

/// Writes every valid point with its label. `labels` is indexed like the
/// cloud lattice and must label every valid point.
pub fn save_labeled_cloud(
    cloud: &OrganizedCloud,
    labels: &[u32],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if labels.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} labels for a cloud of {} points",
            labels.len(),
            cloud.len()
        )));
    }
    if let Some(i) = cloud.valid_indices().find(|&i| labels[i] == UNLABELED) {
        return Err(Error::invalid(format!("valid point {i} has no label")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{CLOUD_MAGIC} {}", cloud.num_valid())?;
        for i in cloud.valid_indices() {
            let p = &cloud.points[i];
            let [x, y, z] = p.position;
            let [r, g, b] = p.color;
            writeln!(out, "{x} {y} {z} {r} {g} {b} {}", labels[i])?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

pub fn load_labeled_cloud(path: impl AsRef<Path>) -> Result<Vec<LabeledPoint>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::format(path, "missing header"))?;
    let count: usize = header
        .strip_prefix(CLOUD_MAGIC)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad header {header:?}")))?;
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = || Error::format(path, format!("row {}: malformed {line:?}", i + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(bad());
        }
        let coord = |k: usize| fields[k].parse::<f64>().map_err(|_| bad());
        let channel = |k: usize| fields[k].parse::<u8>().map_err(|_| bad());
        points.push(LabeledPoint {
            position: [coord(0)?, coord(1)?, coord(2)?],
            color: [channel(3)?, channel(4)?, channel(5)?],
            label: fields[6].parse().map_err(|_| bad())?,
        });
    }
    if points.len() != count {
        return Err(Error::format(
            path,
            format!("header announces {count} rows, found {}", points.len()),
        ));
    }
    Ok(points)
}
