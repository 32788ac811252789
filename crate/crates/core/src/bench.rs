//! Pipeline runner, dataset evaluation and parameter sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;

use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_image, EvalReport, ImageMetrics};
use crate::partition::ClusterPartition;
use crate::rgbd_io::{self, CameraIntrinsics, LabelMap2D, OrganizedCloud};
use crate::saliency::{compute_saliency, SaliencyMap, SaliencyParams};
use crate::segmentation::{ssv_segment, vccs_segment_cloud, Segmentation};
use crate::synth::SceneFiles;

pub const SALIENCY_FILE: &str = "saliency.pgm";
pub const CLUSTERS_FILE: &str = "clusters.pgm";
pub const LABELS_FILE: &str = "labels.pgm";
pub const CLOUD_FILE: &str = "cloud.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// A loaded RGB-D frame with optional ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub cloud: OrganizedCloud,
    pub color: RgbImage,
    pub ground_truth: Option<LabelMap2D>,
}

impl Scene {
    pub fn load(files: &SceneFiles) -> Result<Self> {
        let wrap = |e| Error::Scene {
            scene: files.id.clone(),
            source: Box::new(e),
        };
        let k = CameraIntrinsics::load(&files.intrinsics).map_err(wrap)?;
        let cloud = rgbd_io::load_rgbd(&files.color, &files.depth, &k).map_err(wrap)?;
        let gt = rgbd_io::load_label_map(&files.ground_truth).map_err(wrap)?;
        if gt.dims() != cloud.dims() {
            return Err(wrap(Error::DimensionMismatch {
                expected: cloud.dims(),
                actual: gt.dims(),
            }));
        }
        Ok(Self {
            id: files.id.clone(),
            color: cloud.color_image(),
            cloud,
            ground_truth: Some(gt),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub segmentation: Segmentation,
    pub saliency: Option<SaliencyMap>,
    pub partition: Option<ClusterPartition>,
}

/// Runs one configuration on a cloud. In ssv mode `saliency` is reused when
/// given and computed from the cloud colors otherwise.
pub fn run_pipeline(
    cfg: &RunConfig,
    cloud: &OrganizedCloud,
    saliency: Option<&SaliencyMap>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let params = cfg.vccs_params();
    match cfg.mode {
        Mode::Vccs => Ok(RunOutput {
            segmentation: vccs_segment_cloud(cloud, &params)?,
            saliency: None,
            partition: None,
        }),
        Mode::Ssv => {
            let sal = match saliency {
                Some(s) => s.clone(),
                None => compute_saliency(&cloud.color_image(), &cfg.saliency)?,
            };
            let result = ssv_segment(cloud, &sal, cfg.k, cfg.r_min, cfg.r_max, &params)?;
            Ok(RunOutput {
                segmentation: result.segmentation,
                saliency: Some(sal),
                partition: Some(result.partition),
            })
        }
    }
}

/// Loads the configured inputs, runs the pipeline and writes all artifacts
/// to `cfg.out_dir`. Returns the supervoxel count.
pub fn segment_to_dir(cfg: &RunConfig) -> Result<usize> {
    cfg.validate()?;
    let (color, depth, intrinsics) = cfg.require_inputs()?;
    let out = cfg
        .out_dir
        .as_deref()
        .ok_or_else(|| Error::invalid("no output directory given"))?;
    let k = CameraIntrinsics::load(intrinsics)?;
    let cloud = rgbd_io::load_rgbd(color, depth, &k)?;
    let run = run_pipeline(cfg, &cloud, None)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seg = &run.segmentation;
    if let Some(sal) = &run.saliency {
        sal.save(out.join(SALIENCY_FILE))?;
    }
    if let Some(part) = &run.partition {
        rgbd_io::save_label_map(&part.cluster_map(), out.join(CLUSTERS_FILE))?;
    }
    rgbd_io::save_label_map(seg.projected(), out.join(LABELS_FILE))?;
    rgbd_io::save_labeled_cloud(&cloud, seg.point_labels(), out.join(CLOUD_FILE))?;

    let mut manifest = cfg.to_text();
    let _ = writeln!(manifest, "width={}", cloud.width());
    let _ = writeln!(manifest, "height={}", cloud.height());
    let _ = writeln!(manifest, "valid_points={}", cloud.num_valid());
    let _ = writeln!(manifest, "num_supervoxels={}", seg.num_supervoxels());
    if let Some(part) = &run.partition {
        let radii: Vec<String> = part.seed_resolutions().iter().map(|r| r.to_string()).collect();
        let sizes: Vec<String> = part.cluster_sizes().iter().map(|s| s.to_string()).collect();
        let _ = writeln!(manifest, "effective_k={}", part.k());
        let _ = writeln!(manifest, "seed_resolutions={}", radii.join(","));
        let _ = writeln!(manifest, "cluster_sizes={}", sizes.join(","));
    }
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(seg.num_supervoxels())
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

pub fn load_dataset(files: &[SceneFiles], workers: Option<usize>) -> Result<Vec<Scene>> {
    if files.is_empty() {
        return Err(Error::Empty("dataset has no scenes"));
    }
    thread_pool(workers)?.install(|| files.par_iter().map(Scene::load).collect())
}

fn gt_of(scene: &Scene) -> Result<&LabelMap2D> {
    scene.ground_truth.as_ref().ok_or_else(|| Error::Scene {
        scene: scene.id.clone(),
        source: Box::new(Error::Empty("scene has no ground truth")),
    })
}

/// Scores stored segmentations against a dataset. The segmentation of
/// scene `id` is read from `seg_dir/id/labels.pgm` or `seg_dir/id.pgm`.
pub fn evaluate_segmentations(scenes: &[Scene], seg_dir: &Path) -> Result<EvalReport> {
    let per_image = scenes
        .iter()
        .map(|scene| {
            let nested = seg_dir.join(&scene.id).join(LABELS_FILE);
            let flat = seg_dir.join(format!("{}.pgm", scene.id));
            let path = if nested.is_file() { nested } else { flat };
            let wrap = |e| Error::Scene {
                scene: scene.id.clone(),
                source: Box::new(e),
            };
            if !path.is_file() {
                return Err(wrap(Error::MissingInput(path)));
            }
            let seg = rgbd_io::load_label_map(&path).map_err(wrap)?;
            evaluate_image(&scene.id, &seg, gt_of(scene)?, &scene.color).map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_images(per_image)
}

/// A list of configurations run over every scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub configs: Vec<RunConfig>,
}

impl SweepGrid {
    /// VCCS at each seed resolution followed by SSV at each
    /// `(K, R_min, R_max)` combination, all inheriting the other fields
    /// of `base`.
    pub fn build(
        base: &RunConfig,
        vccs_seeds: &[f64],
        ssv_k: &[usize],
        ssv_r_min: &[f64],
        ssv_r_max: &[f64],
    ) -> Self {
        let mut configs = Vec::new();
        for &r in vccs_seeds {
            configs.push(RunConfig {
                mode: Mode::Vccs,
                seed_resolution: Some(r),
                ..base.clone()
            });
        }
        for &k in ssv_k {
            for &r_max in ssv_r_max {
                for &r_min in ssv_r_min {
                    configs.push(RunConfig {
                        mode: Mode::Ssv,
                        seed_resolution: None,
                        k,
                        r_min,
                        r_max,
                        ..base.clone()
                    });
                }
            }
        }
        Self { configs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        for c in &self.configs {
            c.validate()
                .map_err(|e| Error::invalid(format!("config {}: {e}", c.label())))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigResult {
    pub config: RunConfig,
    pub report: EvalReport,
}

/// Pair of configs of different modes with similar mean supervoxel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub vccs: usize,
    pub ssv: usize,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub results: Vec<ConfigResult>,
}

/// Relative gap below which two configs count as matched.
pub const MATCH_TOLERANCE: f64 = 0.1;

impl SweepResult {
    /// Every (VCCS, SSV) pair whose mean counts differ by at most
    /// `MATCH_TOLERANCE` of the smaller one.
    pub fn matched_pairs(&self) -> Vec<MatchedPair> {
        let mut pairs = Vec::new();
        for (i, a) in self.results.iter().enumerate() {
            if a.config.mode != Mode::Vccs {
                continue;
            }
            for (j, b) in self.results.iter().enumerate() {
                if b.config.mode != Mode::Ssv {
                    continue;
                }
                let (na, nb) = (a.report.num_superpixels.mean, b.report.num_superpixels.mean);
                let gap = (na - nb).abs() / na.min(nb);
                if gap <= MATCH_TOLERANCE {
                    pairs.push(MatchedPair {
                        vccs: i,
                        ssv: j,
                        relative_gap: gap,
                    });
                }
            }
        }
        pairs
    }

    pub fn per_scene_csv(&self) -> String {
        let mut out = String::from("config,mode,image_id,N,REC,UE,EV\n");
        for r in &self.results {
            for m in &r.report.per_image {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.config.label(),
                    r.config.mode,
                    m.image_id,
                    m.num_superpixels,
                    m.rec,
                    m.ue,
                    m.ev
                );
            }
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "config,mode,rseed,k,rmin,rmax,N_mean,N_ci95,REC_mean,REC_ci95,UE_mean,UE_ci95,EV_mean,EV_ci95\n",
        );
        for r in &self.results {
            let c = &r.config;
            let (rseed, k, rmin, rmax) = match c.mode {
                Mode::Vccs => (c.seed_resolution.map(|v| v.to_string()).unwrap_or_default(), String::new(), String::new(), String::new()),
                Mode::Ssv => (String::new(), c.k.to_string(), c.r_min.to_string(), c.r_max.to_string()),
            };
            let _ = write!(out, "{},{},{rseed},{k},{rmin},{rmax}", c.label(), c.mode);
            let rep = &r.report;
            for ci in [rep.num_superpixels, rep.rec, rep.ue, rep.ev] {
                let _ = write!(out, ",{},{}", ci.mean, ci.half_width);
            }
            out.push('\n');
        }
        out
    }

    /// Whitespace-separated columns for one mode, sorted by mean count.
    pub fn gnuplot_data(&self, mode: Mode) -> String {
        let mut rows: Vec<&ConfigResult> = self.results.iter().filter(|r| r.config.mode == mode).collect();
        rows.sort_by(|a, b| {
            a.report
                .num_superpixels
                .mean
                .total_cmp(&b.report.num_superpixels.mean)
        });
        let mut out = String::from("# N N_ci95 REC REC_ci95 UE UE_ci95 EV EV_ci95 config\n");
        for r in rows {
            let rep = &r.report;
            for ci in [rep.num_superpixels, rep.rec, rep.ue, rep.ev] {
                let _ = write!(out, "{} {} ", ci.mean, ci.half_width);
            }
            let _ = writeln!(out, "{}", r.config.label());
        }
        out
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from(
            "vccs_config,ssv_config,N_vccs,N_ssv,relative_gap,REC_vccs,REC_ssv,UE_vccs,UE_ssv,EV_vccs,EV_ssv\n",
        );
        for p in self.matched_pairs() {
            let (a, b) = (&self.results[p.vccs], &self.results[p.ssv]);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                a.config.label(),
                b.config.label(),
                a.report.num_superpixels.mean,
                b.report.num_superpixels.mean,
                p.relative_gap,
                a.report.rec.mean,
                b.report.rec.mean,
                a.report.ue.mean,
                b.report.ue.mean,
                a.report.ev.mean,
                b.report.ev.mean
            );
        }
        out
    }

    /// Writes `per_scene.csv`, `summary.csv`, `pairs.csv`, `vccs.dat` and
    /// `ssv.dat` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("per_scene.csv", self.per_scene_csv()),
            ("summary.csv", self.summary_csv()),
            ("pairs.csv", self.pairs_csv()),
            ("vccs.dat", self.gnuplot_data(Mode::Vccs)),
            ("ssv.dat", self.gnuplot_data(Mode::Ssv)),
        ];
        files
            .into_iter()
            .map(|(name, text)| {
                let path = dir.join(name);
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                Ok(path)
            })
            .collect()
    }
}

/// Saliency maps for each scene under `params`, in scene order.
pub fn scene_saliency(scenes: &[Scene], params: &SaliencyParams) -> Result<Vec<SaliencyMap>> {
    scenes
        .par_iter()
        .map(|s| {
            compute_saliency(&s.color, params).map_err(|e| Error::Scene {
                scene: s.id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Segments one scene with one config and scores it.
pub fn evaluate_scene(cfg: &RunConfig, scene: &Scene, saliency: Option<&SaliencyMap>) -> Result<ImageMetrics> {
    let wrap = |e| Error::Scene {
        scene: scene.id.clone(),
        source: Box::new(e),
    };
    let run = run_pipeline(cfg, &scene.cloud, saliency).map_err(wrap)?;
    evaluate_image(&scene.id, run.segmentation.projected(), gt_of(scene)?, &scene.color).map_err(wrap)
}

/// Runs every config on every scene. Work is spread over `workers` threads;
/// results keep grid and scene order.
pub fn run_sweep(grid: &SweepGrid, scenes: &[Scene], workers: Option<usize>) -> Result<SweepResult> {
    grid.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("dataset has no scenes"));
    }
    thread_pool(workers)?.install(|| {
        let mut saliency_cache: Vec<(SaliencyParams, Vec<SaliencyMap>)> = Vec::new();
        for c in grid.configs.iter().filter(|c| c.mode == Mode::Ssv) {
            if !saliency_cache.iter().any(|(p, _)| *p == c.saliency) {
                saliency_cache.push((c.saliency, scene_saliency(scenes, &c.saliency)?));
            }
        }
        let jobs: Vec<(usize, usize)> = (0..grid.configs.len())
            .flat_map(|c| (0..scenes.len()).map(move |s| (c, s)))
            .collect();
        let metrics = jobs
            .par_iter()
            .map(|&(c, s)| {
                let cfg = &grid.configs[c];
                let sal = match cfg.mode {
                    Mode::Ssv => saliency_cache
                        .iter()
                        .find(|(p, _)| *p == cfg.saliency)
                        .map(|(_, maps)| &maps[s]),
                    Mode::Vccs => None,
                };
                evaluate_scene(cfg, &scenes[s], sal)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut metrics = metrics.into_iter();
        let results = grid
            .configs
            .iter()
            .map(|cfg| {
                let per_image: Vec<ImageMetrics> = metrics.by_ref().take(scenes.len()).collect();
                Ok(ConfigResult {
                    config: cfg.clone(),
                    report: EvalReport::from_images(per_image)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepResult { results })
    })
}
