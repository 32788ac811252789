//! Bottom-up saliency from opponent-color center-surround contrast.
//!
//! The image is split into intensity, red-green and blue-yellow channels.
//! Each channel is filtered with a Difference-of-Gaussians at several
//! octaves (sigmas doubling per octave, computed at full resolution), and
//! the absolute contrast maps are averaged and min-max normalized.

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Gaussian kernels are truncated at this many sigmas.
const KERNEL_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaliencyParams {
    pub num_octaves: usize,
    /// Center Gaussian sigma at octave 0, in pixels.
    pub center_sigma: f64,
    /// Surround sigma as a multiple of the center sigma.
    pub surround_ratio: f64,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        Self {
            num_octaves: 4,
            center_sigma: 2.0,
            surround_ratio: 5.0,
        }
    }
}

impl SaliencyParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_octaves < 1 {
            return Err(Error::invalid("num_octaves must be at least 1"));
        }
        if !(self.center_sigma.is_finite() && self.center_sigma > 0.0) {
            return Err(Error::invalid(format!(
                "center_sigma must be positive, got {}",
                self.center_sigma
            )));
        }
        if !(self.surround_ratio.is_finite() && self.surround_ratio > 1.0) {
            return Err(Error::invalid(format!(
                "surround_ratio must exceed 1, got {}",
                self.surround_ratio
            )));
        }
        Ok(())
    }

    pub fn center_sigma_at(&self, octave: usize) -> f64 {
        self.center_sigma * (1u64 << octave) as f64
    }

    pub fn surround_sigma_at(&self, octave: usize) -> f64 {
        self.surround_ratio * self.center_sigma_at(octave)
    }
}

/// Row-major single-channel float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "buffer does not match dimensions");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "{} saliency values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Linear index of the first maximum.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::rgbd_io::save_scalar_map(self.width, self.height, &self.values, path)
    }
}

/// Intensity, red-green and blue-yellow channels, each mapped to `[0, 1]`.
pub fn to_opponent_channels(image: &RgbImage) -> [ScalarImage; 3] {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut channels = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for px in image.pixels() {
        let [r, g, b] = px.0.map(f64::from);
        channels[0].push((r + g + b) / 3.0 / 255.0);
        channels[1].push((r - g + 255.0) / 510.0);
        channels[2].push((b - (r + g) / 2.0 + 255.0) / 510.0);
    }
    channels.map(|data| ScalarImage::new(w, h, data))
}

pub(crate) fn kernel_radius(sigma: f64) -> usize {
    (KERNEL_SIGMAS * sigma).ceil() as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = kernel_radius(sigma) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    kernel
}

/// Mirror index without repeating the edge sample (`... c b | a b c ...`),
/// valid for offsets of any size.
pub(crate) fn reflect(index: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = index.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn convolve_rows(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let taps: Vec<Vec<usize>> = (0..width as isize)
        .map(|x| (-radius..=radius).map(|k| reflect(x + k, width)).collect())
        .collect();
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row_out)| {
        let row = &src[y * width..(y + 1) * width];
        for (x, dst) in row_out.iter_mut().enumerate() {
            *dst = taps[x].iter().zip(kernel).map(|(&i, &k)| row[i] * k).sum();
        }
    });
    out
}

fn transpose(src: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            out[x * height + y] = src[y * width + x];
        }
    }
    out
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(channel: &ScalarImage, sigma: f64) -> ScalarImage {
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (channel.width, channel.height);
    let rows = convolve_rows(&channel.data, w, h, &kernel);
    let cols = convolve_rows(&transpose(&rows, w, h), h, w, &kernel);
    ScalarImage::new(w, h, transpose(&cols, h, w))
}

/// `|G(sigma_c) * ch - G(sigma_s) * ch|` at the given octave.
pub fn center_surround_contrast(
    channel: &ScalarImage,
    octave: usize,
    params: &SaliencyParams,
) -> Result<ScalarImage> {
    params.validate()?;
    if octave >= 63 {
        return Err(Error::invalid(format!("octave {octave} out of range")));
    }
    let surround = params.surround_sigma_at(octave);
    let extent = channel.width.max(channel.height);
    if kernel_radius(surround) > extent {
        return Err(Error::invalid(format!(
            "octave {octave}: surround kernel radius {} exceeds image extent {extent}",
            kernel_radius(surround)
        )));
    }
    let center = gaussian_blur(channel, params.center_sigma_at(octave));
    let surround = gaussian_blur(channel, surround);
    let data = center
        .data
        .iter()
        .zip(&surround.data)
        .map(|(c, s)| (c - s).abs())
        .collect();
    Ok(ScalarImage::new(channel.width, channel.height, data))
}

/// Arithmetic mean of all channel/octave contrast maps, min-max normalized.
/// A constant fused map normalizes to all zeros.
pub fn compute_saliency(image: &RgbImage, params: &SaliencyParams) -> Result<SaliencyMap> {
    params.validate()?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Empty("image has no pixels"));
    }
    let channels = to_opponent_channels(image);
    let jobs: Vec<(usize, usize)> = (0..3)
        .flat_map(|c| (0..params.num_octaves).map(move |o| (c, o)))
        .collect();
    let maps = jobs
        .par_iter()
        .map(|&(c, o)| center_surround_contrast(&channels[c], o, params))
        .collect::<Result<Vec<_>>>()?;

    let mut fused = vec![0.0; w * h];
    for map in &maps {
        fused.iter_mut().zip(&map.data).for_each(|(f, v)| *f += v);
    }
    let count = maps.len() as f64;
    fused.iter_mut().for_each(|f| *f /= count);

    let (lo, hi) = fused
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span > 0.0 {
        fused.iter_mut().for_each(|f| *f = ((*f - lo) / span).clamp(0.0, 1.0));
    } else {
        fused.iter_mut().for_each(|f| *f = 0.0);
    }
    SaliencyMap::new(w, h, fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use image::Rgb;

    fn params_small() -> SaliencyParams {
        SaliencyParams {
            num_octaves: 2,
            center_sigma: 1.0,
            surround_ratio: 2.0,
        }
    }

    /// Direct 2-D convolution with the product kernel.
    fn brute_blur(ch: &ScalarImage, sigma: f64) -> ScalarImage {
        let r = kernel_radius(sigma) as isize;
        let weight = |i: isize| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp();
        let norm: f64 = (-r..=r).map(weight).sum();
        let mut out = ScalarImage::zeros(ch.width, ch.height);
        for y in 0..ch.height as isize {
            for x in 0..ch.width as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = reflect(x + dx, ch.width);
                        let sy = reflect(y + dy, ch.height);
                        acc += weight(dx) * weight(dy) * ch.get(sx, sy);
                    }
                }
                out.data[y as usize * ch.width + x as usize] = acc / (norm * norm);
            }
        }
        out
    }

    #[test]
    fn opponent_channel_values() {
        let img = RgbImage::from_fn(3, 1, |x, _| match x {
            0 => Rgb([128, 128, 128]),
            1 => Rgb([255, 0, 0]),
            _ => Rgb([0, 0, 0]),
        });
        let [i, rg, by] = to_opponent_channels(&img);
        assert_abs_diff_eq!(i.data[0], 128.0 / 255.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rg.data[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(by.data[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(i.data[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rg.data[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(by.data[1], 127.5 / 510.0, epsilon = 1e-12);
        assert_eq!((i.data[2], rg.data[2], by.data[2]), (0.0, 0.5, 0.5));
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-4..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn separable_blur_matches_direct_convolution() {
        let data = (0..9 * 7).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let ch = ScalarImage::new(9, 7, data);
        for sigma in [0.7, 1.5, 3.0] {
            let fast = gaussian_blur(&ch, sigma);
            let slow = brute_blur(&ch, sigma);
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_channel_has_zero_contrast() {
        let ch = ScalarImage::new(16, 16, vec![0.37; 256]);
        let c = center_surround_contrast(&ch, 1, &params_small()).unwrap();
        assert!(c.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_bright_pixel_peaks_at_the_pixel() {
        let mut data = vec![0.0; 81];
        data[4 * 9 + 4] = 1.0;
        let ch = ScalarImage::new(9, 9, data);
        let p = params_small();
        let c = center_surround_contrast(&ch, 0, &p).unwrap();
        let reference: Vec<f64> = brute_blur(&ch, 1.0)
            .data
            .iter()
            .zip(&brute_blur(&ch, 2.0).data)
            .map(|(a, b)| (a - b).abs())
            .collect();
        for (a, b) in c.data.iter().zip(&reference) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let argmax = (0..81).max_by(|&a, &b| c.data[a].total_cmp(&c.data[b])).unwrap();
        assert_eq!(argmax, 40);
    }

    #[test]
    fn step_edge_gives_ridge_along_edge() {
        let (w, h) = (40, 8);
        let data = (0..w * h).map(|i| if i % w < w / 2 { 0.0 } else { 1.0 }).collect();
        let ch = ScalarImage::new(w, h, data);
        let c = center_surround_contrast(&ch, 0, &params_small()).unwrap();
        for y in 0..h {
            let row: Vec<f64> = (0..w).map(|x| c.get(x, y)).collect();
            let peak = (0..w).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!((18..=21).contains(&peak), "ridge at {peak}");
            assert!(row[2] < 1e-9 && row[w - 3] < 1e-9);
        }
    }

    #[test]
    fn octave_too_large_is_rejected() {
        let ch = ScalarImage::zeros(8, 8);
        let err = center_surround_contrast(&ch, 3, &params_small()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn uniform_image_gives_zero_map() {
        let img = RgbImage::from_pixel(32, 24, Rgb([90, 120, 200]));
        let s = compute_saliency(&img, &params_small()).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    fn disc_image(size: u32, cx: i32, cy: i32, radius: i32) -> RgbImage {
        RgbImage::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as i32 - cx, y as i32 - cy);
            if dx * dx + dy * dy <= radius * radius {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        })
    }

    #[test]
    fn white_disc_is_salient() {
        let img = disc_image(32, 15, 17, 4);
        let p = SaliencyParams {
            num_octaves: 2,
            center_sigma: 1.0,
            surround_ratio: 3.0,
        };
        let s = compute_saliency(&img, &p).unwrap();
        let i = s.argmax();
        let (x, y) = ((i % 32) as i32, (i / 32) as i32);
        assert!((x - 15).pow(2) + (y - 17).pow(2) <= 25, "argmax at ({x}, {y})");
        assert!(s.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s.values().iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn rotation_by_180_degrees_commutes() {
        let img = RgbImage::from_fn(21, 13, |x, y| {
            Rgb([(x * 11 % 256) as u8, (y * 19 % 256) as u8, ((x * y) % 256) as u8])
        });
        let rotated = image::imageops::rotate180(&img);
        let p = params_small();
        let a = compute_saliency(&img, &p).unwrap();
        let b = compute_saliency(&rotated, &p).unwrap();
        let n = a.values().len();
        for i in 0..n {
            assert_abs_diff_eq!(a.values()[i], b.values()[n - 1 - i], epsilon = 1e-9);
        }
    }

    #[test]
    fn translation_equivariance_in_interior() {
        let p = SaliencyParams {
            num_octaves: 1,
            center_sigma: 1.0,
            surround_ratio: 2.0,
        };
        let margin = (4.0 * p.surround_ratio * p.center_sigma) as i32;
        let a = compute_saliency(&disc_image(48, 20, 22, 3), &p).unwrap();
        let b = compute_saliency(&disc_image(48, 23, 22, 3), &p).unwrap();
        for y in margin..48 - margin {
            for x in margin..48 - margin - 3 {
                assert_abs_diff_eq!(
                    a.get(x as usize, y as usize),
                    b.get(x as usize + 3, y as usize),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        let img = RgbImage::new(4, 4);
        let bad = SaliencyParams {
            surround_ratio: 1.0,
            ..SaliencyParams::default()
        };
        assert!(compute_saliency(&img, &bad).is_err());
        let bad = SaliencyParams {
            num_octaves: 0,
            ..SaliencyParams::default()
        };
        assert!(compute_saliency(&img, &bad).is_err());
    }
}
