//! Superpixel benchmark metrics on 2-D label maps: boundary recall (REC),
//! undersegmentation error (UE) and explained variation (EV).
//!
//! Boundary pixels are pixels with a 4-neighbor of a different label.
//! Unlabeled ground-truth pixels take no part in REC or UE.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::rgbd_io::{LabelMap2D, UNLABELED};

const Z_95: f64 = 1.96;

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// Boundary-match window radius: `round(0.0025 * diagonal)`, at least 1.
pub fn boundary_tolerance(width: usize, height: usize) -> usize {
    let diagonal = ((width * width + height * height) as f64).sqrt();
    ((0.0025 * diagonal).round() as usize).max(1)
}

/// Boundary mask; with `skip_unlabeled`, unlabeled pixels are never
/// boundaries and never count as a differing neighbor.
pub fn boundary_mask(map: &LabelMap2D, skip_unlabeled: bool) -> Vec<bool> {
    let (w, h) = map.dims();
    let labels = map.labels();
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if skip_unlabeled && l == UNLABELED {
                continue;
            }
            let differs = |nx: usize, ny: usize| {
                let n = labels[ny * w + nx];
                n != l && !(skip_unlabeled && n == UNLABELED)
            };
            mask[y * w + x] = (x > 0 && differs(x - 1, y))
                || (x + 1 < w && differs(x + 1, y))
                || (y > 0 && differs(x, y - 1))
                || (y + 1 < h && differs(x, y + 1));
        }
    }
    mask
}

/// Fraction of ground-truth boundary pixels with a segmentation boundary
/// pixel inside the `(2r + 1)^2` window around them. 1 when the ground
/// truth has no boundary.
pub fn boundary_recall(seg: &LabelMap2D, gt: &LabelMap2D) -> Result<f64> {
    check_dims(gt.dims(), seg.dims())?;
    let (w, h) = gt.dims();
    let r = boundary_tolerance(w, h);
    let gt_boundary = boundary_mask(gt, true);
    let seg_boundary = boundary_mask(seg, false);

    // summed-area table of seg boundaries for O(1) window queries
    let mut table = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += seg_boundary[y * w + x] as u32;
            table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
        }
    }
    let window_sum = |x: usize, y: usize| {
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
        table[y1 * (w + 1) + x1] + table[y0 * (w + 1) + x0]
            - table[y0 * (w + 1) + x1]
            - table[y1 * (w + 1) + x0]
    };

    let mut total = 0usize;
    let mut hits = 0usize;
    for y in 0..h {
        for x in 0..w {
            if gt_boundary[y * w + x] {
                total += 1;
                if window_sum(x, y) > 0 {
                    hits += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

/// Mean over ground-truth segments of the normalized leakage of the
/// superpixels overlapping them. Superpixel sizes count only pixels with a
/// ground-truth label.
pub fn undersegmentation_error(seg: &LabelMap2D, gt: &LabelMap2D) -> Result<f64> {
    check_dims(gt.dims(), seg.dims())?;
    let mut gt_sizes: HashMap<u32, usize> = HashMap::new();
    let mut sp_sizes: HashMap<u32, usize> = HashMap::new();
    let mut overlaps: HashMap<(u32, u32), usize> = HashMap::new();
    for (&g, &s) in gt.labels().iter().zip(seg.labels()) {
        if g == UNLABELED {
            continue;
        }
        *gt_sizes.entry(g).or_default() += 1;
        *sp_sizes.entry(s).or_default() += 1;
        *overlaps.entry((g, s)).or_default() += 1;
    }
    if gt_sizes.is_empty() {
        return Err(Error::Empty("ground truth has no labeled pixels"));
    }
    let mut covered: HashMap<u32, usize> = HashMap::new();
    for &(g, s) in overlaps.keys() {
        *covered.entry(g).or_default() += sp_sizes[&s];
    }
    let mut gt_labels: Vec<u32> = gt_sizes.keys().copied().collect();
    gt_labels.sort_unstable();
    let sum: f64 = gt_labels
        .iter()
        .map(|g| {
            let size = gt_sizes[g] as f64;
            (covered[g] as f64 - size) / size
        })
        .sum();
    Ok(sum / gt_labels.len() as f64)
}

pub fn intensity(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| p.0.iter().map(|&c| c as f64).sum::<f64>() / 3.0)
        .collect()
}

/// Share of intensity variance explained by superpixel means; 1 for a
/// constant image.
pub fn explained_variation(seg: &LabelMap2D, image: &RgbImage) -> Result<f64> {
    check_dims(seg.dims(), (image.width() as usize, image.height() as usize))?;
    explained_variation_of(seg, &intensity(image))
}

pub fn explained_variation_of(seg: &LabelMap2D, values: &[f64]) -> Result<f64> {
    if values.len() != seg.labels().len() {
        return Err(Error::invalid(format!(
            "{} values for {} labels",
            values.len(),
            seg.labels().len()
        )));
    }
    if values.is_empty() {
        return Err(Error::Empty("image has no pixels"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut stats: HashMap<u32, (f64, usize)> = HashMap::new();
    for (&l, &v) in seg.labels().iter().zip(values) {
        let e = stats.entry(l).or_default();
        e.0 += v;
        e.1 += 1;
    }
    let total: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    let mut labels: Vec<u32> = stats.keys().copied().collect();
    labels.sort_unstable();
    let explained: f64 = labels
        .iter()
        .map(|l| {
            let (sum, n) = stats[l];
            n as f64 * (sum / n as f64 - mean).powi(2)
        })
        .sum();
    Ok((explained / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    /// Distinct labels in the projected segmentation.
    pub num_superpixels: usize,
    pub rec: f64,
    pub ue: f64,
    pub ev: f64,
}

pub fn evaluate_image(
    image_id: impl Into<String>,
    seg: &LabelMap2D,
    gt: &LabelMap2D,
    image: &RgbImage,
) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        image_id: image_id.into(),
        num_superpixels: seg.num_labels(),
        rec: boundary_recall(seg, gt)?,
        ue: undersegmentation_error(seg, gt)?,
        ev: explained_variation(seg, image)?,
    })
}

/// Mean with a 95% confidence half-width of `1.96 * sigma / sqrt(n)`,
/// where `sigma` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
}

impl MeanCi {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            half_width: Z_95 * var.sqrt() / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageMetrics>,
    pub num_superpixels: MeanCi,
    pub rec: MeanCi,
    pub ue: MeanCi,
    pub ev: MeanCi,
}

impl EvalReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Empty("no images to evaluate"));
        }
        let column = |f: fn(&ImageMetrics) -> f64| {
            MeanCi::of(&per_image.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Self {
            num_superpixels: column(|m| m.num_superpixels as f64),
            rec: column(|m| m.rec),
            ue: column(|m| m.ue),
            ev: column(|m| m.ev),
            per_image,
        })
    }

    /// `image_id,N,REC,UE,EV` rows followed by `mean` and `ci95` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,N,REC,UE,EV\n");
        for m in &self.per_image {
            let _ = writeln!(out, "{},{},{},{},{}", m.image_id, m.num_superpixels, m.rec, m.ue, m.ev);
        }
        let _ = writeln!(
            out,
            "mean,{},{},{},{}",
            self.num_superpixels.mean, self.rec.mean, self.ue.mean, self.ev.mean
        );
        let _ = writeln!(
            out,
            "ci95,{},{},{},{}",
            self.num_superpixels.half_width, self.rec.half_width, self.ue.half_width, self.ev.half_width
        );
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate_run(
    segs: &[LabelMap2D],
    gts: &[LabelMap2D],
    images: &[RgbImage],
) -> Result<EvalReport> {
    if segs.len() != gts.len() || segs.len() != images.len() {
        return Err(Error::invalid(format!(
            "{} segmentations, {} ground truths, {} images",
            segs.len(),
            gts.len(),
            images.len()
        )));
    }
    let per_image = segs
        .iter()
        .zip(gts)
        .zip(images)
        .enumerate()
        .map(|(i, ((s, g), img))| evaluate_image(i.to_string(), s, g, img))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_images(per_image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use image::Rgb;
    use proptest::prelude::*;

    fn map(w: usize, h: usize, labels: &[u32]) -> LabelMap2D {
        LabelMap2D::new(w, h, labels.to_vec()).unwrap()
    }

    #[test]
    fn tolerance_from_diagonal() {
        assert_eq!(boundary_tolerance(640, 480), 2);
        assert_eq!(boundary_tolerance(4, 4), 1);
        assert_eq!(boundary_tolerance(320, 240), 1);
    }

    #[test]
    fn recall_cases() {
        let gt = map(4, 2, &[0, 0, 1, 1, 0, 0, 1, 1]);
        assert_eq!(boundary_recall(&gt, &gt).unwrap(), 1.0);
        assert_eq!(boundary_recall(&map(4, 2, &[5; 8]), &gt).unwrap(), 0.0);
        assert_eq!(boundary_recall(&gt, &map(4, 2, &[3; 8])).unwrap(), 1.0);
        assert!(boundary_recall(&gt, &map(2, 4, &[0; 8])).is_err());
    }

    #[test]
    fn recall_window_reaches_r_pixels() {
        // gt edge between columns 0|1 of a wide image; seg edge two
        // columns further right is outside r = 1
        let w = 10;
        let gt: Vec<u32> = (0..w).map(|x| u32::from(x >= 1)).collect();
        let near: Vec<u32> = (0..w).map(|x| u32::from(x >= 2)).collect();
        let far: Vec<u32> = (0..w).map(|x| u32::from(x >= 4)).collect();
        let gt = map(w, 1, &gt);
        assert_eq!(boundary_recall(&map(w, 1, &near), &gt).unwrap(), 1.0);
        assert_eq!(boundary_recall(&map(w, 1, &far), &gt).unwrap(), 0.0);
    }

    #[test]
    fn undersegmentation_worked_example() {
        let gt: Vec<u32> = (0..16).map(|i| u32::from(i % 4 >= 2)).collect();
        let seg: Vec<u32> = (0..16).map(|i| u32::from(i % 4 == 3)).collect();
        assert_abs_diff_eq!(undersegmentation_error(&map(4, 4, &seg), &map(4, 4, &gt)).unwrap(), 0.75, epsilon = 1e-15);
        assert_eq!(undersegmentation_error(&map(4, 4, &gt), &map(4, 4, &gt)).unwrap(), 0.0);
        assert_eq!(undersegmentation_error(&map(4, 4, &[0; 16]), &map(4, 4, &[2; 16])).unwrap(), 0.0);
        assert!(undersegmentation_error(&map(2, 1, &[0, 0]), &map(2, 1, &[UNLABELED; 2])).is_err());
    }

    #[test]
    fn unlabeled_ground_truth_is_ignored() {
        let gt = map(4, 1, &[0, 0, UNLABELED, UNLABELED]);
        let seg = map(4, 1, &[0, 0, 0, 0]);
        assert_eq!(undersegmentation_error(&seg, &gt).unwrap(), 0.0);
        assert_eq!(boundary_recall(&seg, &gt).unwrap(), 1.0);
    }

    #[test]
    fn explained_variation_cases() {
        let values = [0.0, 0.0, 10.0, 10.0];
        assert_eq!(explained_variation_of(&map(4, 1, &[1, 1, 2, 2]), &values).unwrap(), 1.0);
        assert_eq!(explained_variation_of(&map(4, 1, &[0, 0, 0, 0]), &values).unwrap(), 0.0);
        assert_eq!(explained_variation_of(&map(4, 1, &[0, 1, 2, 3]), &values).unwrap(), 1.0);
        assert_eq!(explained_variation_of(&map(2, 1, &[0, 1]), &[4.0, 4.0]).unwrap(), 1.0);

        let img = RgbImage::from_fn(2, 1, |x, _| if x == 0 { Rgb([0, 0, 0]) } else { Rgb([30, 60, 90]) });
        assert_eq!(explained_variation(&map(2, 1, &[0, 1]), &img).unwrap(), 1.0);
        assert_eq!(explained_variation(&map(2, 1, &[0, 0]), &img).unwrap(), 0.0);
    }

    #[test]
    fn confidence_intervals() {
        let m = MeanCi::of(&[0.8, 0.9]);
        assert_abs_diff_eq!(m.mean, 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(m.half_width, 1.96 * 0.05 / 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(MeanCi::of(&[0.7]).half_width, 0.0);
        let same = MeanCi::of(&[0.3, 0.3]);
        assert_eq!((same.mean, same.half_width), (0.3, 0.0));
    }

    #[test]
    fn run_report_and_csv() {
        let gt = map(4, 1, &[0, 0, 1, 1]);
        let img = RgbImage::from_fn(4, 1, |x, _| Rgb([(x * 60) as u8; 3]));
        let report = evaluate_run(&[gt.clone(), gt.clone()], &[gt.clone(), gt.clone()], &[img.clone(), img.clone()]).unwrap();
        assert_eq!(report.rec.mean, 1.0);
        assert_eq!(report.ue.half_width, 0.0);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "image_id,N,REC,UE,EV");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("mean,2,1,0,"));
        assert!(evaluate_run(&[], &[], &[]).is_err());
        assert!(evaluate_run(std::slice::from_ref(&gt), &[], &[img]).is_err());
    }

    fn label_strategy() -> impl Strategy<Value = (usize, usize, Vec<u32>, Vec<u32>, Vec<f64>)> {
        (2usize..7, 2usize..7).prop_flat_map(|(w, h)| {
            let n = w * h;
            (
                Just(w),
                Just(h),
                proptest::collection::vec(0u32..4, n),
                proptest::collection::vec(0u32..4, n),
                proptest::collection::vec(0.0f64..255.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn metric_ranges((w, h, seg, gt, values) in label_strategy()) {
            let (seg, gt) = (map(w, h, &seg), map(w, h, &gt));
            let rec = boundary_recall(&seg, &gt).unwrap();
            let ue = undersegmentation_error(&seg, &gt).unwrap();
            let ev = explained_variation_of(&seg, &values).unwrap();
            prop_assert!((0.0..=1.0).contains(&rec));
            prop_assert!(ue >= 0.0);
            prop_assert!((0.0..=1.0).contains(&ev));
        }

        #[test]
        fn splitting_a_superpixel_is_a_refinement(
            (w, h, seg, gt, values) in label_strategy(),
            pick in 0u32..4,
            coin in proptest::collection::vec(any::<bool>(), 36),
        ) {
            let split: Vec<u32> = seg
                .iter()
                .enumerate()
                .map(|(i, &l)| if l == pick && coin[i] { 100 } else { l })
                .collect();
            let (seg, split, gt) = (map(w, h, &seg), map(w, h, &split), map(w, h, &gt));
            prop_assert!(undersegmentation_error(&split, &gt).unwrap() <= undersegmentation_error(&seg, &gt).unwrap() + 1e-12);
            prop_assert!(explained_variation_of(&split, &values).unwrap() >= explained_variation_of(&seg, &values).unwrap() - 1e-9);
        }

        #[test]
        fn relabeling_changes_nothing((w, h, seg, gt, values) in label_strategy(), shift in 1u32..50) {
            let renamed: Vec<u32> = seg.iter().map(|&l| (3 - l) * 7 + shift).collect();
            let (seg, renamed, gt) = (map(w, h, &seg), map(w, h, &renamed), map(w, h, &gt));
            prop_assert_eq!(boundary_recall(&seg, &gt).unwrap(), boundary_recall(&renamed, &gt).unwrap());
            prop_assert_eq!(undersegmentation_error(&seg, &gt).unwrap(), undersegmentation_error(&renamed, &gt).unwrap());
            prop_assert!((explained_variation_of(&seg, &values).unwrap() - explained_variation_of(&renamed, &values).unwrap()).abs() < 1e-12);
        }
    }
}
