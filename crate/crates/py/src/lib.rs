//! Python bindings: rotations, spherical distributions, grid fits, the synthetic
//! dataset and the two-stage pipeline.

use std::path::PathBuf;

use nalgebra::Matrix3;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dirpose::epipolar_eval::{
    angular_errors, essential_from_pose, rank_methods as rank_methods_impl, run_two_stage, GridFitPredictor,
    OraclePredictor, PipelineConfig, PipelineReport,
};
use dirpose::grid_fit::{self, FitConfig, RotationVariant};
use dirpose::io::{load_pair, read_manifest, save_pair, write_manifest};
use dirpose::losses;
use dirpose::pano::{generate_dataset, pair_rng, DatasetConfig};
use dirpose::so3::{self, Rotation3};
use dirpose::sphere_grid::{self, Activation, GridSpec, RawGrid, SphericalDistribution, UnitVec3};
use dirpose::{ImageBuffer, Intrinsics, PosePair, RelativePose};

trait OrPyErr<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPyErr<T> for dirpose::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(|e| match &e {
            dirpose::Error::Usage(_) => PyValueError::new_err(e.to_string()),
            dirpose::Error::Io(_) => PyOSError::new_err(e.to_string()),
            _ if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
            _ => PyRuntimeError::new_err(e.to_string()),
        })
    }
}

fn unit(v: [f64; 3]) -> PyResult<UnitVec3> {
    UnitVec3::try_from(v).py()
}

fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn from_rows(m: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| m[i][j])
}

fn grid(height: usize, width: usize) -> PyResult<GridSpec> {
    GridSpec::new(height, width).py()
}

/// A 3D rotation.
#[pyclass(name = "Rotation", module = "dirpose_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
pub struct PyRotation(Rotation3);

#[pymethods]
impl PyRotation {
    /// From a 3x3 nested list; fails unless the matrix is a rotation.
    #[new]
    fn new(m: [[f64; 3]; 3]) -> PyResult<Self> {
        Ok(PyRotation(Rotation3::from_matrix(from_rows(m)).py()?))
    }

    #[staticmethod]
    fn identity() -> Self {
        PyRotation(Rotation3::identity())
    }

    /// Rotation by `angle` radians about `axis`.
    #[staticmethod]
    fn from_axis_angle(axis: [f64; 3], angle: f64) -> PyResult<Self> {
        Ok(PyRotation(Rotation3::from_axis_angle(&unit(axis)?, angle)))
    }

    /// From a quaternion `[w, x, y, z]`.
    #[staticmethod]
    fn from_quaternion(q: [f64; 4]) -> PyResult<Self> {
        Ok(PyRotation(Rotation3::from_quaternion(q).py()?))
    }

    /// Uniformly random rotation drawn from `seed`.
    #[staticmethod]
    fn random(seed: u64) -> Self {
        PyRotation(so3::random_rotation(&mut pair_rng(seed, 0)))
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        to_rows(self.0.matrix())
    }

    fn quaternion(&self) -> [f64; 4] {
        self.0.to_quaternion()
    }

    /// `(axis, angle)` with the angle in radians.
    fn axis_angle(&self) -> ([f64; 3], f64) {
        let (axis, angle) = self.0.to_axis_angle();
        (axis.into(), angle)
    }

    fn angle(&self) -> f64 {
        self.0.angle()
    }

    fn transpose(&self) -> Self {
        PyRotation(self.0.transpose())
    }

    /// Same axis, half the angle.
    fn half(&self) -> PyResult<Self> {
        Ok(PyRotation(so3::half_rotation(&self.0).py()?))
    }

    fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        self.0.apply(&v.into()).into()
    }

    fn __mul__(&self, other: &PyRotation) -> Self {
        PyRotation(self.0 * other.0)
    }

    fn __repr__(&self) -> String {
        let (axis, angle) = self.0.to_axis_angle();
        let a: [f64; 3] = axis.into();
        format!("Rotation(axis=[{:.4}, {:.4}, {:.4}], angle_deg={:.4})", a[0], a[1], a[2], angle.to_degrees())
    }
}

/// Geodesic distance in radians.
#[pyfunction]
fn geodesic_distance(a: &PyRotation, b: &PyRotation) -> f64 {
    so3::geodesic_distance(&a.0, &b.0)
}

/// Nearest rotation in Frobenius norm.
#[pyfunction]
fn procrustes_project(m: [[f64; 3]; 3]) -> PyResult<PyRotation> {
    Ok(PyRotation(so3::procrustes_project(&from_rows(m)).py()?))
}

/// Rotation from two vectors by Gram-Schmidt: columns `a`, `b'`, `a x b'`.
#[pyfunction]
fn gram_schmidt_project(a: [f64; 3], b: [f64; 3]) -> PyResult<PyRotation> {
    Ok(PyRotation(so3::gram_schmidt_project(&a.into(), &b.into()).py()?))
}

/// A probability distribution over an equirectangular grid, rows from +Z to -Z.
#[pyclass(name = "SphericalDistribution", module = "dirpose_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDistribution(SphericalDistribution);

#[pymethods]
impl PyDistribution {
    /// Von Mises-Fisher distribution about `mean` with concentration `kappa`.
    #[staticmethod]
    fn vmf(height: usize, width: usize, mean: [f64; 3], kappa: f64) -> PyResult<Self> {
        Ok(PyDistribution(sphere_grid::vmf_target(grid(height, width)?, &unit(mean)?, kappa).py()?))
    }

    /// Normalizes raw row-major grid values with `"softplus"` or `"exp"`.
    #[staticmethod]
    #[pyo3(signature = (height, width, values, activation = "softplus"))]
    fn from_raw(height: usize, width: usize, values: Vec<f64>, activation: &str) -> PyResult<Self> {
        let act = match activation {
            "softplus" => Activation::Softplus,
            "exp" => Activation::Exp,
            other => return Err(PyValueError::new_err(format!("unknown activation {other:?}"))),
        };
        let raw = RawGrid::new(grid(height, width)?, values).py()?;
        Ok(PyDistribution(sphere_grid::normalize(&raw, act)))
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.spec().height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.spec().width()
    }

    /// Row-major cell probabilities.
    fn probs(&self) -> Vec<f64> {
        self.0.probs().to_vec()
    }

    fn total_mass(&self) -> f64 {
        self.0.total_mass()
    }

    /// Probability-weighted mean direction; its norm measures concentration.
    fn expectation(&self) -> [f64; 3] {
        sphere_grid::expectation(&self.0).into()
    }

    fn argmax(&self) -> (usize, usize) {
        self.0.argmax()
    }
}

/// Pads row-major grid values with azimuth wrap and pole crossing.
#[pyfunction]
fn spherical_pad(height: usize, width: usize, values: Vec<f64>, pad: usize) -> PyResult<Vec<f64>> {
    sphere_grid::spherical_pad(grid(height, width)?, &values, pad).py()
}

/// Negative cosine between two directions.
#[pyfunction]
fn direction_loss(a: [f64; 3], b: [f64; 3]) -> PyResult<f64> {
    losses::direction_loss(&a.into(), &b.into()).py()
}

/// Measure-weighted squared difference of two distributions on the same grid.
#[pyfunction]
fn distribution_loss(p: &PyDistribution, q: &PyDistribution) -> PyResult<f64> {
    losses::distribution_loss(&p.0, &q.0).py()
}

/// Outcome of fitting one grid to a direction.
#[pyclass(name = "FitResult", module = "dirpose_py", frozen, skip_from_py_object, get_all)]
#[derive(Clone)]
pub struct PyFitResult {
    direction: [f64; 3],
    angular_error_deg: f64,
    final_loss: f64,
    loss_trace: Vec<f64>,
}

fn fit_config(steps: usize, lr: f64, seed: u64) -> PyResult<FitConfig> {
    let cfg = FitConfig {
        steps,
        learning_rate: lr,
        seed,
        ..FitConfig::default()
    };
    cfg.validate().py()?;
    Ok(cfg)
}

/// Fits a free `grid x grid` raw grid to `vmf(target, kappa)`.
#[pyfunction]
#[pyo3(signature = (target, kappa = 10.0, grid = 64, steps = 2000, lr = 0.05, seed = 0))]
fn fit_direction(
    py: Python<'_>,
    target: [f64; 3],
    kappa: f64,
    grid: usize,
    steps: usize,
    lr: f64,
    seed: u64,
) -> PyResult<PyFitResult> {
    let target = unit(target)?;
    let spec = GridSpec::square(grid).py()?;
    let cfg = fit_config(steps, lr, seed)?;
    let r = py.detach(|| grid_fit::fit_direction(&target, kappa, spec, &cfg)).py()?;
    Ok(PyFitResult {
        direction: r.final_direction.into(),
        angular_error_deg: r.angular_error_deg,
        final_loss: r.final_loss.total,
        loss_trace: r.loss_trace,
    })
}

/// Fits one grid per column of `target` and projects onto SO(3) with `"svd9d"` or
/// `"gs6d"`. Returns the rotation and its geodesic error in degrees.
#[pyfunction]
#[pyo3(signature = (target, kappa = 10.0, grid = 64, steps = 2000, variant = "svd9d", lr = 0.05, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_rotation(
    py: Python<'_>,
    target: &PyRotation,
    kappa: f64,
    grid: usize,
    steps: usize,
    variant: &str,
    lr: f64,
    seed: u64,
) -> PyResult<(PyRotation, f64)> {
    let variant: RotationVariant = variant.parse().py()?;
    let spec = GridSpec::square(grid).py()?;
    let cfg = fit_config(steps, lr, seed)?;
    let target = target.0;
    let (r, rep) = py.detach(|| grid_fit::fit_rotation(&target, kappa, spec, &cfg, variant)).py()?;
    Ok((PyRotation(r), rep.geodesic_error_deg))
}

/// Pinhole intrinsics in pixels.
#[pyclass(name = "Intrinsics", module = "dirpose_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
pub struct PyIntrinsics(Intrinsics);

#[pymethods]
impl PyIntrinsics {
    /// Square pixels, principal point at the image center.
    #[staticmethod]
    fn from_fov(fov_deg: f64, width: usize, height: usize) -> PyResult<Self> {
        Ok(PyIntrinsics(Intrinsics::from_fov(fov_deg, width, height).py()?))
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }

    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        to_rows(&self.0.matrix())
    }

    /// Camera-frame ray through pixel `(u, v)`, with z = -1.
    fn pixel_ray(&self, u: f64, v: f64) -> [f64; 3] {
        self.0.pixel_ray(u, v).into()
    }

    /// Pixel of a camera-frame point, or None behind the camera.
    fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        self.0.project(&p.into())
    }
}

/// Rotation and unit translation direction, `X1 = R X0 + s t`.
#[pyclass(name = "RelativePose", module = "dirpose_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
pub struct PyPose(RelativePose);

#[pymethods]
impl PyPose {
    #[new]
    fn new(rotation: &PyRotation, translation: [f64; 3]) -> PyResult<Self> {
        Ok(PyPose(RelativePose::new(rotation.0, unit(translation)?)))
    }

    #[getter]
    fn rotation(&self) -> PyRotation {
        PyRotation(self.0.rotation)
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    /// Essential matrix `[t]x R`.
    fn essential(&self) -> [[f64; 3]; 3] {
        to_rows(essential_from_pose(&self.0).matrix())
    }

    /// `(rotation_error_deg, translation_error_deg)` of this estimate against `truth`.
    fn errors_to(&self, truth: &PyPose) -> (f64, f64) {
        angular_errors(&self.0, &truth.0)
    }
}

fn image_rows(img: &ImageBuffer) -> ((usize, usize, usize), Vec<f32>) {
    ((img.height(), img.width(), img.channels()), img.data().to_vec())
}

/// One synthetic perspective pair with depth and ground-truth pose.
#[pyclass(name = "PosePair", module = "dirpose_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPair(PosePair);

#[pymethods]
impl PyPair {
    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn pose(&self) -> PyPose {
        PyPose(self.0.pose)
    }

    #[getter]
    fn overlap(&self) -> f64 {
        self.0.overlap
    }

    #[getter]
    fn fov_deg(&self) -> f64 {
        self.0.fov_deg
    }

    fn intrinsics(&self) -> PyResult<PyIntrinsics> {
        Ok(PyIntrinsics(self.0.intrinsics().py()?))
    }

    /// `((height, width, channels), values)` of image `which` (0 or 1), row-major RGB in [0, 1].
    fn image(&self, which: usize) -> PyResult<((usize, usize, usize), Vec<f32>)> {
        match which {
            0 => Ok(image_rows(&self.0.img0)),
            1 => Ok(image_rows(&self.0.img1)),
            _ => Err(PyValueError::new_err("image index must be 0 or 1")),
        }
    }

    /// `((height, width, 1), values)` of the z-depth map of view `which`, in meters.
    fn depth(&self, which: usize) -> PyResult<((usize, usize, usize), Vec<f32>)> {
        match which {
            0 => Ok(image_rows(&self.0.depth0)),
            1 => Ok(image_rows(&self.0.depth1)),
            _ => Err(PyValueError::new_err("depth index must be 0 or 1")),
        }
    }
}

/// Renders `n_pairs` pairs of the box-room dataset.
#[pyfunction]
#[pyo3(signature = (
    n_pairs, resolution = 64, pano_width = 256, fov_deg = 90.0, cone_deg = 45.0,
    baseline_m = 2.25, max_rotation_deg = None, min_overlap = 0.1, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn generate_pairs(
    py: Python<'_>,
    n_pairs: usize,
    resolution: usize,
    pano_width: usize,
    fov_deg: f64,
    cone_deg: f64,
    baseline_m: f64,
    max_rotation_deg: Option<f64>,
    min_overlap: f64,
    seed: u64,
) -> PyResult<Vec<PyPair>> {
    let cfg = DatasetConfig {
        n_pairs,
        resolution,
        pano_width,
        fov_deg,
        cone_aperture_deg: cone_deg,
        baseline_m,
        max_rotation_deg,
        min_overlap,
        seed,
        ..DatasetConfig::default()
    };
    let pairs = py.detach(|| generate_dataset(&cfg)).py()?;
    Ok(pairs.into_iter().map(PyPair).collect())
}

/// Writes images, depths and `manifest.jsonl` into `directory`.
#[pyfunction]
fn save_pairs(pairs: Vec<PyRef<'_, PyPair>>, directory: PathBuf) -> PyResult<PathBuf> {
    std::fs::create_dir_all(&directory)?;
    let records = pairs.iter().map(|p| save_pair(&directory, &p.0)).collect::<dirpose::Result<Vec<_>>>().py()?;
    let manifest = directory.join("manifest.jsonl");
    write_manifest(&manifest, &records).py()?;
    Ok(manifest)
}

/// Reads every pair listed in a manifest written by `save_pairs` or `dirpose gen`.
#[pyfunction]
fn load_pairs(manifest: PathBuf) -> PyResult<Vec<PyPair>> {
    let dir = manifest.parent().map(PathBuf::from).unwrap_or_default();
    let records = read_manifest(&manifest).py()?;
    records.iter().map(|r| Ok(PyPair(load_pair(&dir, r).py()?))).collect()
}

/// Summary of a pipeline run.
#[pyclass(name = "PipelineResult", module = "dirpose_py", frozen, skip_from_py_object, get_all)]
#[derive(Clone)]
pub struct PyPipelineResult {
    method: String,
    ids: Vec<String>,
    rotation_errors_deg: Vec<f64>,
    translation_errors_deg: Vec<f64>,
    skipped: Vec<String>,
    mean_rotation_deg: f64,
    median_rotation_deg: f64,
    mean_translation_deg: f64,
    median_translation_deg: f64,
}

impl PyPipelineResult {
    fn from_report(r: PipelineReport) -> PyResult<Self> {
        let (rs, ts) = (r.rotation_stats().py()?, r.translation_stats().py()?);
        Ok(PyPipelineResult {
            ids: r.results.iter().map(|p| p.id.clone()).collect(),
            rotation_errors_deg: r.results.iter().map(|p| p.rot_err_deg).collect(),
            translation_errors_deg: r.results.iter().map(|p| p.trans_err_deg).collect(),
            skipped: r.skipped.iter().map(|s| s.id.clone()).collect(),
            mean_rotation_deg: rs.mean_deg,
            median_rotation_deg: rs.median_deg,
            mean_translation_deg: ts.mean_deg,
            median_translation_deg: ts.median_deg,
            method: r.method,
        })
    }
}

/// Two-stage evaluation with `"oracle"` or `"gridfit"` predictors. `perturb_deg`
/// perturbs the rotation estimate before derotation.
#[pyfunction]
#[pyo3(signature = (pairs, predictor = "oracle", perturb_deg = 0.0, seed = 0))]
fn run_pipeline(
    py: Python<'_>,
    pairs: Vec<PyRef<'_, PyPair>>,
    predictor: &str,
    perturb_deg: f64,
    seed: u64,
) -> PyResult<PyPipelineResult> {
    let pairs: Vec<PosePair> = pairs.iter().map(|p| p.0.clone()).collect();
    let Some(first) = pairs.first() else {
        return Err(PyValueError::new_err("no pairs given"));
    };
    let k = first.intrinsics().py()?;
    let cfg = PipelineConfig { perturb_deg, seed };
    let report = match predictor {
        "oracle" => py.detach(|| run_two_stage("oracle", &pairs, &OraclePredictor, &OraclePredictor, &cfg, &k)),
        "gridfit" => {
            let p = GridFitPredictor::default();
            py.detach(|| run_two_stage("gridfit", &pairs, &p, &p, &cfg, &k))
        }
        other => return Err(PyValueError::new_err(format!("unknown predictor {other:?}"))),
    }
    .py()?;
    PyPipelineResult::from_report(report)
}

/// Mean per-pair rank of each method (1 is best, ties share the average rank).
#[pyfunction]
fn rank_methods(errors: Vec<(String, Vec<f64>)>) -> PyResult<Vec<(String, f64)>> {
    rank_methods_impl(&errors).py()
}

#[pymodule]
pub fn dirpose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRotation>()?;
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyPair>()?;
    m.add_class::<PyPipelineResult>()?;
    m.add_function(wrap_pyfunction!(geodesic_distance, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes_project, m)?)?;
    m.add_function(wrap_pyfunction!(gram_schmidt_project, m)?)?;
    m.add_function(wrap_pyfunction!(spherical_pad, m)?)?;
    m.add_function(wrap_pyfunction!(direction_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distribution_loss, m)?)?;
    m.add_function(wrap_pyfunction!(fit_direction, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rotation, m)?)?;
    m.add_function(wrap_pyfunction!(generate_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(save_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(load_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(rank_methods, m)?)?;
    Ok(())
}
