//! Python bindings: lane geometry, lane IoU, suppression, assignment, metrics
//! and the synthetic scene generator. Matrices cross the boundary as nested
//! lists of floats.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use polar_kit::assignment::{hungarian_assign, simota_assign, CostConfig};
use polar_kit::config::RunConfig;
use polar_kit::eval::{f1_suite, mf1_thresholds};
use polar_kit::geometry::{self, Point, Pole};
use polar_kit::harness::{gen_scene as core_gen_scene, SceneKind};
use polar_kit::laneiou;
use polar_kit::suppression::{self, IouDistance};
use polar_kit::{Candidate as CoreCandidate, CandidateSet, Error, GIoUParams, SuppressionThresholds};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix rows must all have the same length"));
    }
    let n = rows.len();
    Ok(Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).expect("rectangular"))
}

fn to_lists(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Image size and the number of evenly spaced sampling rows (row 0 at the top).
#[pyclass(name = "ImageFrame", module = "polarkit", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyImageFrame(geometry::ImageFrame);

#[pymethods]
impl PyImageFrame {
    #[new]
    #[pyo3(signature = (width=800.0, height=320.0, n_rows=36))]
    fn new(width: f64, height: f64, n_rows: usize) -> PyResult<Self> {
        geometry::ImageFrame::new(width, height, n_rows).map(Self).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> f64 {
        self.0.width
    }

    #[getter]
    fn height(&self) -> f64 {
        self.0.height
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows
    }

    /// Image-space y of every sampling row, top first.
    fn row_ys(&self) -> Vec<f64> {
        self.0.row_ys()
    }

    fn __repr__(&self) -> String {
        format!("ImageFrame(width={}, height={}, n_rows={})", self.0.width, self.0.height, self.0.n_rows)
    }
}

/// A lane sampled on a contiguous run of frame rows.
#[pyclass(name = "LaneGrid", module = "polarkit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLaneGrid(geometry::LaneGrid);

#[pymethods]
impl PyLaneGrid {
    #[new]
    fn new(frame: PyRef<'_, PyImageFrame>, start: usize, xs: Vec<f64>) -> PyResult<Self> {
        geometry::LaneGrid::new(frame.0, start, xs).map(Self).map_err(py_err)
    }

    #[getter]
    fn start(&self) -> usize {
        self.0.start()
    }

    #[getter]
    fn end(&self) -> usize {
        self.0.end()
    }

    #[getter]
    fn xs(&self) -> Vec<f64> {
        self.0.xs().to_vec()
    }

    #[getter]
    fn frame(&self) -> PyImageFrame {
        PyImageFrame(*self.0.frame())
    }

    /// `(x, y)` image-space points, top first.
    fn points(&self) -> Vec<(f64, f64)> {
        self.0.points().into_iter().map(|p| (p.x, p.y)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("LaneGrid(start={}, end={})", self.0.start(), self.0.end())
    }
}

/// Straight line `cos θ (x − c_x) + sin θ (y − c_y) = r` in Cartesian
/// coordinates (y up) about a pole `c`.
#[pyclass(name = "PolarAnchor", module = "polarkit", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyPolarAnchor(geometry::PolarAnchor);

#[pymethods]
impl PyPolarAnchor {
    #[new]
    #[pyo3(signature = (theta, radius, pole, local=false))]
    fn new(theta: f64, radius: f64, pole: (f64, f64), local: bool) -> Self {
        let p = Point::new(pole.0, pole.1);
        let pole = if local { Pole::local(p) } else { Pole::global(p) };
        Self(geometry::PolarAnchor::new(theta, radius, pole))
    }

    /// The anchor through two Cartesian points, expressed about a global pole.
    #[staticmethod]
    fn through_points(a: (f64, f64), b: (f64, f64), pole: (f64, f64)) -> PyResult<Self> {
        let pole = Pole::global(Point::new(pole.0, pole.1));
        geometry::PolarAnchor::through_points(Point::new(a.0, a.1), Point::new(b.0, b.1), pole)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius
    }

    #[getter]
    fn pole(&self) -> (f64, f64) {
        (self.0.pole.position.x, self.0.pole.position.y)
    }

    /// The same line re-expressed about a global pole.
    fn with_global_pole(&self, pole: (f64, f64)) -> Self {
        Self(geometry::local_to_global_radius(&self.0, &Pole::global(Point::new(pole.0, pole.1))))
    }

    /// x on the line at Cartesian height `y`.
    fn x_at(&self, y: f64) -> PyResult<f64> {
        self.0.x_at(y).map_err(py_err)
    }

    /// x at every row of `frame`, top first.
    fn sample(&self, frame: PyRef<'_, PyImageFrame>) -> PyResult<Vec<f64>> {
        geometry::sample_anchor_xs(&self.0, &frame.0).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("PolarAnchor(theta={}, radius={})", self.0.theta, self.0.radius)
    }
}

/// A scored lane proposal.
#[pyclass(name = "Candidate", module = "polarkit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCandidate(CoreCandidate);

#[pymethods]
impl PyCandidate {
    #[new]
    #[pyo3(signature = (anchor, lane, score_o2m, score_o2o=None))]
    fn new(
        anchor: PyRef<'_, PyPolarAnchor>,
        lane: PyRef<'_, PyLaneGrid>,
        score_o2m: f64,
        score_o2o: Option<f64>,
    ) -> Self {
        Self(CoreCandidate { anchor: anchor.0, lane: lane.0.clone(), score_o2m, score_o2o })
    }

    #[getter]
    fn score_o2m(&self) -> f64 {
        self.0.score_o2m
    }

    #[getter]
    fn score_o2o(&self) -> Option<f64> {
        self.0.score_o2o
    }
}

fn lanes(v: &[PyRef<'_, PyLaneGrid>]) -> Vec<geometry::LaneGrid> {
    v.iter().map(|l| l.0.clone()).collect()
}

fn candidate_set(v: &[PyRef<'_, PyCandidate>]) -> PyResult<CandidateSet> {
    CandidateSet::new(v.iter().map(|c| c.0.clone()).collect()).map_err(py_err)
}

/// Resample an image-space polyline onto the frame rows.
#[pyfunction]
fn polyline_to_grid(points: Vec<(f64, f64)>, frame: PyRef<'_, PyImageFrame>) -> PyResult<PyLaneGrid> {
    let pts: Vec<Point> = points.into_iter().map(|(x, y)| Point::new(x, y)).collect();
    geometry::polyline_to_grid(&pts, &frame.0).map(PyLaneGrid).map_err(py_err)
}

/// Lane IoU; `g = 1` adds the gap penalty.
#[pyfunction]
#[pyo3(signature = (p, q, w_base=15.0, g=0.0))]
fn glane_iou(p: PyRef<'_, PyLaneGrid>, q: PyRef<'_, PyLaneGrid>, w_base: f64, g: f64) -> PyResult<f64> {
    laneiou::glane_iou(&p.0, &q.0, &GIoUParams { g, w_base }).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, w_base=15.0, g=0.0))]
fn iou_matrix(
    a: Vec<PyRef<'_, PyLaneGrid>>,
    b: Vec<PyRef<'_, PyLaneGrid>>,
    w_base: f64,
    g: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let m = laneiou::iou_matrix(&lanes(&a), &lanes(&b), &GIoUParams { g, w_base }).map_err(py_err)?;
    Ok(to_lists(&m))
}

/// Fast NMS restricted to geometrically close anchors. Returns ascending indices.
#[pyfunction]
#[pyo3(signature = (candidates, w_base=15.0, tau_theta=0.15, lambda_g=40.0, tau_d=0.5, tau_o2m=0.48))]
fn fast_nms_geometric(
    candidates: Vec<PyRef<'_, PyCandidate>>,
    w_base: f64,
    tau_theta: f64,
    lambda_g: f64,
    tau_d: f64,
    tau_o2m: f64,
) -> PyResult<Vec<usize>> {
    let th = SuppressionThresholds { tau_theta, lambda_g, tau_d, tau_o2m, ..Default::default() };
    th.validate().map_err(py_err)?;
    suppression::fast_nms_geometric(&candidate_set(&candidates)?, &th, &IouDistance { w_base }).map_err(py_err)
}

/// Greedy NMS with distance `1 − IoU`. Returns ascending indices.
#[pyfunction]
#[pyo3(signature = (candidates, w_base=15.0, tau_d=0.5, tau_o2m=0.48))]
fn sequential_nms(
    candidates: Vec<PyRef<'_, PyCandidate>>,
    w_base: f64,
    tau_d: f64,
    tau_o2m: f64,
) -> PyResult<Vec<usize>> {
    suppression::sequential_nms(&candidate_set(&candidates)?, &IouDistance { w_base }, tau_d, tau_o2m).map_err(py_err)
}

/// Candidates whose one-to-one and one-to-many scores both pass.
#[pyfunction]
#[pyo3(signature = (candidates, tau_o2o=0.46, tau_o2m=0.48))]
fn dual_confidence_select(candidates: Vec<PyRef<'_, PyCandidate>>, tau_o2o: f64, tau_o2m: f64) -> PyResult<Vec<usize>> {
    suppression::dual_confidence_select(&candidate_set(&candidates)?, tau_o2o, tau_o2m).map_err(py_err)
}

/// Maximum-affinity one-to-one map; returns the column chosen for each row.
#[pyfunction]
fn hungarian(affinity: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    hungarian_assign(&to_array(affinity)?).map_err(py_err)
}

/// Dynamic-k positives as `(prediction, ground truth)` pairs.
#[pyfunction]
#[pyo3(signature = (affinity, ious, k_dynamic=4, topk_for_dynamic=10))]
fn simota(
    affinity: Vec<Vec<f64>>,
    ious: Vec<Vec<f64>>,
    k_dynamic: usize,
    topk_for_dynamic: usize,
) -> PyResult<Vec<(usize, usize)>> {
    let cfg = CostConfig { k_dynamic, topk_for_dynamic, ..Default::default() };
    simota_assign(&to_array(affinity)?, &to_array(ious)?, &cfg).map_err(py_err)
}

/// Pooled per-threshold counts and F1 over scenes, plus mF1.
#[pyfunction]
#[pyo3(signature = (preds, gts, thresholds=None, w_base=15.0))]
fn f1_metrics<'py>(
    py: Python<'py>,
    preds: Vec<Vec<PyRef<'_, PyLaneGrid>>>,
    gts: Vec<Vec<PyRef<'_, PyLaneGrid>>>,
    thresholds: Option<Vec<f64>>,
    w_base: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p: Vec<_> = preds.iter().map(|s| lanes(s)).collect();
    let g: Vec<_> = gts.iter().map(|s| lanes(s)).collect();
    let ts = thresholds.unwrap_or_else(mf1_thresholds);
    let report = f1_suite(&p, &g, &ts, w_base).map_err(py_err)?;
    let out = PyDict::new(py);
    let per = PyDict::new(py);
    for m in &report.per_threshold {
        let d = PyDict::new(py);
        d.set_item("tp", m.tp)?;
        d.set_item("fp", m.fp)?;
        d.set_item("fn", m.fn_)?;
        d.set_item("precision", m.precision)?;
        d.set_item("recall", m.recall)?;
        d.set_item("f1", m.f1)?;
        per.set_item(m.threshold, d)?;
    }
    out.set_item("per_threshold", per)?;
    out.set_item("mf1", report.mf1)?;
    Ok(out)
}

/// Ground-truth lanes of one synthetic scene of the given preset.
#[pyfunction]
#[pyo3(signature = (kind="dense", seed=0))]
fn gen_scene(kind: &str, seed: u64) -> PyResult<Vec<PyLaneGrid>> {
    let kind = match kind {
        "sparse" => SceneKind::Sparse,
        "dense" => SceneKind::Dense,
        other => return Err(PyValueError::new_err(format!("unknown scene kind {other:?}"))),
    };
    let mut spec = RunConfig::preset(kind).scene;
    spec.seed = seed;
    Ok(core_gen_scene(&spec).map_err(py_err)?.into_iter().map(PyLaneGrid).collect())
}

#[pymodule]
pub fn polarkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImageFrame>()?;
    m.add_class::<PyLaneGrid>()?;
    m.add_class::<PyPolarAnchor>()?;
    m.add_class::<PyCandidate>()?;
    m.add_function(wrap_pyfunction!(polyline_to_grid, m)?)?;
    m.add_function(wrap_pyfunction!(glane_iou, m)?)?;
    m.add_function(wrap_pyfunction!(iou_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(fast_nms_geometric, m)?)?;
    m.add_function(wrap_pyfunction!(sequential_nms, m)?)?;
    m.add_function(wrap_pyfunction!(dual_confidence_select, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(simota, m)?)?;
    m.add_function(wrap_pyfunction!(f1_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gen_scene, m)?)?;
    Ok(())
}
