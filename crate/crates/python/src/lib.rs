//! Python bindings: `import pyssv`.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ssv_core::config::RunConfig;
use ssv_core::metrics;
use ssv_core::rgbd_io::{self, CameraIntrinsics, LabelMap2D, OrganizedCloud};
use ssv_core::saliency::{self, SaliencyParams};
use ssv_core::segmentation::{self, VccsParams};
use ssv_core::synth::{self, SceneSpec, SyntheticScene};
use ssv_core::{partition, Error, UNLABELED};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingInput(_) => PyOSError::new_err(e.to_string()),
        e if e.is_usage() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Maps UNLABELED to -1.
fn labels_out(labels: &[u32]) -> Vec<i64> {
    labels
        .iter()
        .map(|&l| if l == UNLABELED { -1 } else { l as i64 })
        .collect()
}

fn labels_in(width: usize, height: usize, labels: Vec<i64>) -> PyResult<LabelMap2D> {
    let labels = labels
        .into_iter()
        .map(|l| match l {
            -1 => Ok(UNLABELED),
            l if (0..UNLABELED as i64).contains(&l) => Ok(l as u32),
            l => Err(PyValueError::new_err(format!("label {l} out of range"))),
        })
        .collect::<PyResult<Vec<u32>>>()?;
    LabelMap2D::new(width, height, labels).map_err(to_py)
}

#[pyclass(name = "Intrinsics", module = "pyssv", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyIntrinsics {
    inner: CameraIntrinsics,
}

#[pymethods]
impl PyIntrinsics {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, depth_scale = rgbd_io::DEFAULT_DEPTH_SCALE))]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, depth_scale: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CameraIntrinsics::new(fx, fy, cx, cy, depth_scale).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CameraIntrinsics::load(path).map_err(to_py)?,
        })
    }

    fn back_project(&self, u: f64, v: f64, z: f64) -> (f64, f64, f64) {
        let [x, y, z] = self.inner.back_project(u, v, z);
        (x, y, z)
    }

    fn project(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        self.inner.project([x, y, z])
    }

    fn __repr__(&self) -> String {
        let k = &self.inner;
        format!(
            "Intrinsics(fx={}, fy={}, cx={}, cy={}, depth_scale={})",
            k.fx, k.fy, k.cx, k.cy, k.depth_scale
        )
    }
}

/// Organized RGB-D point cloud.
#[pyclass(name = "Cloud", module = "pyssv", frozen)]
struct PyCloud {
    inner: OrganizedCloud,
}

#[pymethods]
impl PyCloud {
    /// `rgb` holds `3 * width * height` bytes, `depth` one raw sample per pixel.
    #[staticmethod]
    fn from_arrays(width: usize, height: usize, rgb: Vec<u8>, depth: Vec<u16>, intrinsics: &PyIntrinsics) -> PyResult<Self> {
        Ok(Self {
            inner: OrganizedCloud::from_rgbd(width, height, &rgb, &depth, &intrinsics.inner).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(color: &str, depth: &str, intrinsics: &PyIntrinsics) -> PyResult<Self> {
        Ok(Self {
            inner: rgbd_io::load_rgbd(color, depth, &intrinsics.inner).map_err(to_py)?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn num_valid(&self) -> usize {
        self.inner.num_valid()
    }

    /// `(x, y, z, valid)` for pixel `(u, v)`.
    fn point(&self, u: usize, v: usize) -> PyResult<(f64, f64, f64, bool)> {
        if u >= self.inner.width() || v >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({u}, {v}) outside the cloud")));
        }
        let p = self.inner.point(u, v);
        Ok((p.position[0], p.position[1], p.position[2], p.valid))
    }

    /// Interleaved RGB bytes.
    fn colors(&self) -> Vec<u8> {
        self.inner.color_image().into_raw()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Cloud({}x{}, {} valid)",
            self.inner.width(),
            self.inner.height(),
            self.inner.num_valid()
        )
    }
}

/// Result of `vccs` or `ssv`.
#[pyclass(name = "Segmentation", module = "pyssv", frozen)]
struct PySegmentation {
    width: usize,
    height: usize,
    labels: Vec<i64>,
    point_labels: Vec<i64>,
    num_supervoxels: usize,
    clusters: Option<Vec<i64>>,
    seed_resolutions: Option<Vec<f64>>,
    saliency: Option<Vec<f64>>,
}

impl PySegmentation {
    fn from_run(run: ssv_core::bench::RunOutput, width: usize, height: usize) -> Self {
        let seg = &run.segmentation;
        Self {
            width,
            height,
            labels: labels_out(seg.projected().labels()),
            point_labels: labels_out(seg.point_labels()),
            num_supervoxels: seg.num_supervoxels(),
            clusters: run.partition.as_ref().map(|p| labels_out(p.cluster_map().labels())),
            seed_resolutions: run.partition.as_ref().map(|p| p.seed_resolutions().to_vec()),
            saliency: run.saliency.map(|s| s.values().to_vec()),
        }
    }
}

#[pymethods]
impl PySegmentation {
    #[getter]
    fn width(&self) -> usize {
        self.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.height
    }

    /// Projected 2-D labels in row-major order; every pixel is labeled.
    #[getter]
    fn labels(&self) -> Vec<i64> {
        self.labels.clone()
    }

    /// Per-pixel supervoxel labels, -1 where the point is invalid.
    #[getter]
    fn point_labels(&self) -> Vec<i64> {
        self.point_labels.clone()
    }

    #[getter]
    fn num_supervoxels(&self) -> usize {
        self.num_supervoxels
    }

    /// Saliency cluster per pixel (ssv only).
    #[getter]
    fn clusters(&self) -> Option<Vec<i64>> {
        self.clusters.clone()
    }

    #[getter]
    fn seed_resolutions(&self) -> Option<Vec<f64>> {
        self.seed_resolutions.clone()
    }

    #[getter]
    fn saliency(&self) -> Option<Vec<f64>> {
        self.saliency.clone()
    }

    fn save_labels(&self, path: &str) -> PyResult<()> {
        let map = labels_in(self.width, self.height, self.labels.clone())?;
        rgbd_io::save_label_map(&map, path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Segmentation({} supervoxels)", self.num_supervoxels)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_config(
    mode: &str,
    voxel_resolution: f64,
    seed_resolution: Option<f64>,
    k: usize,
    r_min: f64,
    r_max: f64,
    lambda: f64,
    mu: f64,
    epsilon: f64,
    m: f64,
    max_iters: usize,
) -> PyResult<RunConfig> {
    let cfg = RunConfig {
        mode: mode.parse().map_err(to_py)?,
        voxel_resolution,
        seed_resolution,
        k,
        r_min,
        r_max,
        lambda,
        mu,
        epsilon,
        m,
        max_iters,
        ..RunConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Uniform VCCS supervoxels.
#[pyfunction]
#[pyo3(signature = (cloud, seed_resolution, voxel_resolution = 0.02, lambda_ = 0.7, mu = 0.15, epsilon = 0.15, m = 100.0, max_iters = 5))]
#[allow(clippy::too_many_arguments)]
fn vccs(
    py: Python<'_>,
    cloud: &PyCloud,
    seed_resolution: f64,
    voxel_resolution: f64,
    lambda_: f64,
    mu: f64,
    epsilon: f64,
    m: f64,
    max_iters: usize,
) -> PyResult<PySegmentation> {
    let cfg = run_config(
        "vccs", voxel_resolution, Some(seed_resolution), 1, seed_resolution, seed_resolution, lambda_, mu, epsilon, m, max_iters,
    )?;
    let run = py
        .detach(|| ssv_core::bench::run_pipeline(&cfg, &cloud.inner, None))
        .map_err(to_py)?;
    Ok(PySegmentation::from_run(run, cloud.inner.width(), cloud.inner.height()))
}

/// Saliency-guided supervoxels.
#[pyfunction]
#[pyo3(signature = (cloud, k = 6, r_min = 0.1, r_max = 0.3, voxel_resolution = 0.02, lambda_ = 0.7, mu = 0.15, epsilon = 0.15, m = 100.0, max_iters = 5))]
#[allow(clippy::too_many_arguments)]
fn ssv(
    py: Python<'_>,
    cloud: &PyCloud,
    k: usize,
    r_min: f64,
    r_max: f64,
    voxel_resolution: f64,
    lambda_: f64,
    mu: f64,
    epsilon: f64,
    m: f64,
    max_iters: usize,
) -> PyResult<PySegmentation> {
    let cfg = run_config("ssv", voxel_resolution, None, k, r_min, r_max, lambda_, mu, epsilon, m, max_iters)?;
    let run = py
        .detach(|| ssv_core::bench::run_pipeline(&cfg, &cloud.inner, None))
        .map_err(to_py)?;
    Ok(PySegmentation::from_run(run, cloud.inner.width(), cloud.inner.height()))
}

/// Saliency of an interleaved RGB image, row-major values in [0, 1].
#[pyfunction]
#[pyo3(signature = (width, height, rgb, octaves = 4, center_sigma = 2.0, surround_ratio = 5.0))]
fn compute_saliency(
    width: u32,
    height: u32,
    rgb: Vec<u8>,
    octaves: usize,
    center_sigma: f64,
    surround_ratio: f64,
) -> PyResult<Vec<f64>> {
    let image = image::RgbImage::from_raw(width, height, rgb)
        .ok_or_else(|| PyValueError::new_err("rgb buffer does not match width * height * 3"))?;
    let params = SaliencyParams {
        num_octaves: octaves,
        center_sigma,
        surround_ratio,
    };
    Ok(saliency::compute_saliency(&image, &params)
        .map_err(to_py)?
        .values()
        .to_vec())
}

#[pyfunction]
fn seed_schedule(k: usize, r_min: f64, r_max: f64) -> PyResult<Vec<f64>> {
    partition::seed_schedule(k, r_min, r_max).map_err(to_py)
}

/// Returns `(assignment, centroids)`.
#[pyfunction]
#[pyo3(signature = (values, k, max_iters = partition::DEFAULT_KMEANS_ITERS))]
fn kmeans_1d(values: Vec<f64>, k: usize, max_iters: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let km = partition::kmeans_1d(&values, k, max_iters, partition::DEFAULT_KMEANS_TOL).map_err(to_py)?;
    Ok((km.assignment, km.centroids))
}

#[pyfunction]
#[pyo3(signature = (color, spatial, hik, seed_resolution, lambda_ = 0.7, mu = 0.15, epsilon = 0.15, m = 100.0))]
#[allow(clippy::too_many_arguments)]
fn normalized_distance(
    color: f64,
    spatial: f64,
    hik: f64,
    seed_resolution: f64,
    lambda_: f64,
    mu: f64,
    epsilon: f64,
    m: f64,
) -> f64 {
    let params = VccsParams {
        seed_resolution,
        lambda: lambda_,
        mu,
        epsilon,
        color_norm: m,
        ..VccsParams::default()
    };
    segmentation::normalized_distance(color, spatial, hik, &params)
}

/// Label lists are row-major; -1 marks unlabeled ground truth.
#[pyfunction]
fn boundary_recall(width: usize, height: usize, seg: Vec<i64>, gt: Vec<i64>) -> PyResult<f64> {
    metrics::boundary_recall(&labels_in(width, height, seg)?, &labels_in(width, height, gt)?).map_err(to_py)
}

#[pyfunction]
fn undersegmentation_error(width: usize, height: usize, seg: Vec<i64>, gt: Vec<i64>) -> PyResult<f64> {
    metrics::undersegmentation_error(&labels_in(width, height, seg)?, &labels_in(width, height, gt)?).map_err(to_py)
}

#[pyfunction]
fn explained_variation(width: usize, height: usize, seg: Vec<i64>, values: Vec<f64>) -> PyResult<f64> {
    metrics::explained_variation_of(&labels_in(width, height, seg)?, &values).map_err(to_py)
}

/// Renders a random scene; returns `(cloud, ground_truth_labels)`.
#[pyfunction]
#[pyo3(signature = (seed, objects = 3, width = 320, height = 240))]
fn synth_scene(seed: u64, objects: usize, width: usize, height: usize) -> PyResult<(PyCloud, Vec<i64>)> {
    let spec = SceneSpec {
        width,
        height,
        num_objects: objects,
        ..SceneSpec::default()
    };
    let scene = SyntheticScene::generate(&spec, seed).map_err(to_py)?;
    let cloud = scene.cloud().map_err(to_py)?;
    Ok((PyCloud { inner: cloud }, labels_out(scene.ground_truth.labels())))
}

/// Writes the benchmark suite and returns the scene directories.
#[pyfunction]
#[pyo3(signature = (directory, count = synth::SUITE_SIZE, seed = 0))]
fn write_suite(directory: &str, count: usize, seed: u64) -> PyResult<Vec<String>> {
    Ok(synth::write_suite(directory, count, seed)
        .map_err(to_py)?
        .into_iter()
        .map(|p| p.display().to_string())
        .collect())
}

#[pymodule]
fn pyssv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyCloud>()?;
    m.add_class::<PySegmentation>()?;
    m.add_function(wrap_pyfunction!(vccs, m)?)?;
    m.add_function(wrap_pyfunction!(ssv, m)?)?;
    m.add_function(wrap_pyfunction!(compute_saliency, m)?)?;
    m.add_function(wrap_pyfunction!(seed_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_1d, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_distance, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_recall, m)?)?;
    m.add_function(wrap_pyfunction!(undersegmentation_error, m)?)?;
    m.add_function(wrap_pyfunction!(explained_variation, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(write_suite, m)?)?;
    m.add("UNLABELED", -1)?;
    Ok(())
}
