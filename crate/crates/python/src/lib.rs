//! Python bindings for `posedpp`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use posedpp::augment::{self, Normalization};
use posedpp::dpp;
use posedpp::harness::{self, Predictions};
use posedpp::kernel::{self, DEFAULT_RANK_TOL};
use posedpp::memory::{self, SamplerStrategy, StrategyKind, DEFAULT_GAMMA};
use posedpp::{BBox, Error, FeatureMatrix, KernelKind, KernelMatrix, Keypoint};

create_exception!(posedpp, PosedppError, PyException);
create_exception!(posedpp, RankError, PosedppError);
create_exception!(posedpp, IntegrityError, PosedppError);

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::Rank { .. } => RankError::new_err(msg),
        Error::Integrity(_) => IntegrityError::new_err(msg),
        Error::Shape(_)
        | Error::Empty(_)
        | Error::Parameter(_)
        | Error::Parse(_)
        | Error::Schema(_)
        | Error::Config(_) => PyValueError::new_err(msg),
        _ => PosedppError::new_err(msg),
    }
}

fn kernel_kind(kind: &str, gamma: f64) -> PyResult<KernelKind> {
    match kind {
        "linear" => Ok(KernelKind::Linear),
        "rbf" => Ok(KernelKind::Rbf { gamma }),
        other => Err(PyValueError::new_err(format!(
            "unknown kernel {other:?}; use 'linear' or 'rbf'"
        ))),
    }
}

fn kernel_from_rows(rows: Vec<Vec<f64>>) -> PyResult<KernelMatrix> {
    KernelMatrix::from_rows(&rows).map_err(to_py)
}

fn kernel_to_rows(k: &KernelMatrix) -> Vec<Vec<f64>> {
    (0..k.n())
        .map(|i| (0..k.n()).map(|j| k.get(i, j)).collect())
        .collect()
}

/// One annotated animal instance.
#[pyclass(name = "PoseInstance", module = "posedpp", from_py_object)]
#[derive(Clone)]
struct PyPoseInstance {
    inner: posedpp::PoseInstance,
}

#[pymethods]
impl PyPoseInstance {
    /// `keypoints` is a list of `(x, y, v)`; `bbox` is `(x, y, width, height)`.
    #[new]
    #[pyo3(signature = (id, class_label, keypoints, bbox, image_ref = String::new()))]
    fn new(
        id: String,
        class_label: String,
        keypoints: Vec<(f64, f64, u8)>,
        bbox: (f64, f64, f64, f64),
        image_ref: String,
    ) -> Self {
        let kps = keypoints
            .into_iter()
            .map(|(x, y, v)| Keypoint::new(x, y, u8::from(v > 0)))
            .collect();
        let inner = posedpp::PoseInstance::new(
            id,
            class_label,
            kps,
            BBox::new(bbox.0, bbox.1, bbox.2, bbox.3),
        )
        .with_image_ref(image_ref);
        PyPoseInstance { inner }
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn class_label(&self) -> String {
        self.inner.class_label.clone()
    }

    #[getter]
    fn image_ref(&self) -> String {
        self.inner.image_ref.clone()
    }

    #[getter]
    fn keypoints(&self) -> Vec<(f64, f64, u8)> {
        self.inner
            .keypoints
            .iter()
            .map(|k| (k.x, k.y, k.v))
            .collect()
    }

    #[getter]
    fn bbox(&self) -> (f64, f64, f64, f64) {
        let b = self.inner.bbox;
        (b.x, b.y, b.width, b.height)
    }

    fn __repr__(&self) -> String {
        format!(
            "PoseInstance(id={:?}, class_label={:?}, joints={})",
            self.inner.id,
            self.inner.class_label,
            self.inner.num_joints()
        )
    }
}

/// Thin-plate spline mapping `src` control points onto `dst`.
#[pyclass(name = "ThinPlateSpline", module = "posedpp")]
struct PyThinPlateSpline {
    inner: augment::ThinPlateTransform,
}

#[pymethods]
impl PyThinPlateSpline {
    #[new]
    #[pyo3(signature = (src, dst, regularization = 0.0))]
    fn new(src: Vec<(f64, f64)>, dst: Vec<(f64, f64)>, regularization: f64) -> PyResult<Self> {
        let s: Vec<augment::Point> = src.into_iter().map(|(x, y)| [x, y]).collect();
        let d: Vec<augment::Point> = dst.into_iter().map(|(x, y)| [x, y]).collect();
        let inner = augment::tps_fit(&s, &d, regularization).map_err(to_py)?;
        Ok(PyThinPlateSpline { inner })
    }

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [u, v] = self.inner.apply([x, y]);
        (u, v)
    }

    /// Rows `[a0, ax, ay]` for the x and y outputs.
    #[getter]
    fn affine(&self) -> Vec<Vec<f64>> {
        self.inner.affine.iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn bending_weights(&self) -> Vec<(f64, f64)> {
        self.inner
            .bending_weights
            .iter()
            .map(|w| (w[0], w[1]))
            .collect()
    }

    fn max_bending_weight(&self) -> f64 {
        self.inner.max_bending_weight()
    }
}

/// Kernel matrix over feature rows: `kind` is `"linear"` or `"rbf"`.
#[pyfunction]
#[pyo3(signature = (features, kind = "rbf", gamma = DEFAULT_GAMMA))]
fn build_kernel(features: Vec<Vec<f64>>, kind: &str, gamma: f64) -> PyResult<Vec<Vec<f64>>> {
    let f = FeatureMatrix::from_rows(&features).map_err(to_py)?;
    let k = kernel::build_kernel(&f, kernel_kind(kind, gamma)?).map_err(to_py)?;
    Ok(kernel_to_rows(&k))
}

/// Flattened `(N, 3J)` feature rows of `instances`.
#[pyfunction]
#[pyo3(signature = (instances, bbox_normalized = true))]
fn flatten_poses(instances: Vec<PyPoseInstance>, bbox_normalized: bool) -> PyResult<Vec<Vec<f64>>> {
    let poses: Vec<_> = instances.into_iter().map(|p| p.inner).collect();
    let scaling = if bbox_normalized {
        kernel::Scaling::BboxNormalized
    } else {
        kernel::Scaling::Pixel
    };
    let f = kernel::flatten_poses(&poses, scaling).map_err(to_py)?;
    Ok((0..f.nrows()).map(|i| f.row(i)).collect())
}

#[pyfunction]
#[pyo3(signature = (kernel, tol = DEFAULT_RANK_TOL))]
fn numerical_rank(kernel: Vec<Vec<f64>>, tol: f64) -> PyResult<usize> {
    kernel::numerical_rank(&kernel_from_rows(kernel)?, tol).map_err(to_py)
}

/// Greedy MAP k-DPP selection: `(indices in selection order, log_det)`.
#[pyfunction]
fn greedy_map_kdpp(kernel: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<usize>, f64)> {
    let s = dpp::greedy_map_kdpp(&kernel_from_rows(kernel)?, k).map_err(to_py)?;
    Ok((s.indices, s.log_det))
}

/// Exhaustive MAP selection: `(sorted indices, log_det)`.
#[pyfunction]
fn brute_force_map(kernel: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<usize>, f64)> {
    let s = dpp::brute_force_map(&kernel_from_rows(kernel)?, k).map_err(to_py)?;
    Ok((s.indices, s.log_det))
}

#[pyfunction]
fn elementary_symmetric(eigvals: Vec<f64>, k: usize) -> f64 {
    dpp::elementary_symmetric(&eigvals, k)
}

/// `log P(S)` under the k-DPP with `k = len(subset)`.
#[pyfunction]
fn kdpp_log_prob(kernel: Vec<Vec<f64>>, subset: Vec<usize>) -> PyResult<f64> {
    Ok(dpp::kdpp_log_prob(&kernel_from_rows(kernel)?, &subset)
        .map_err(to_py)?
        .value)
}

#[pyfunction]
fn per_class_quota(budget: usize, classes_seen: usize) -> PyResult<usize> {
    memory::per_class_quota(budget, classes_seen).map_err(to_py)
}

/// Exemplar ids chosen from one class.
#[pyfunction]
#[pyo3(signature = (instances, n, strategy = "rbf-kdpp", gamma = None, seed = 0))]
fn select_exemplars(
    instances: Vec<PyPoseInstance>,
    n: usize,
    strategy: &str,
    gamma: Option<f64>,
    seed: u64,
) -> PyResult<Vec<String>> {
    let poses: Vec<_> = instances.into_iter().map(|p| p.inner).collect();
    let kind = StrategyKind::parse(strategy, gamma).map_err(to_py)?;
    let sel =
        memory::select_exemplars(&poses, n, &SamplerStrategy::new(kind, seed)).map_err(to_py)?;
    Ok(sel.ids)
}

/// Heatmap rows (`height` lists of `width` values) for one keypoint.
#[pyfunction]
#[pyo3(signature = (x, y, width, height, sigma = augment::DEFAULT_SIGMA, normalization = "density"))]
fn gaussian_heatmap(
    x: f64,
    y: f64,
    width: usize,
    height: usize,
    sigma: f64,
    normalization: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let norm = match normalization {
        "density" => Normalization::Density,
        "unit-peak" => Normalization::UnitPeak,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown normalization {other:?}"
            )))
        }
    };
    let h = augment::gaussian_heatmap((x, y), (width, height), sigma, norm).map_err(to_py)?;
    Ok(h.values.chunks(width.max(1)).map(|r| r.to_vec()).collect())
}

#[pyfunction]
fn load_annotations(path: PathBuf) -> PyResult<Vec<PyPoseInstance>> {
    let ds = harness::load_annotations(&path).map_err(to_py)?;
    Ok(ds
        .instances
        .into_iter()
        .map(|inner| PyPoseInstance { inner })
        .collect())
}

/// PCK@tau: `{"overall": float | None, "per_class": {label: float | None}, "missing": int}`.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, tau = harness::DEFAULT_PCK_TAU))]
fn pck_score<'py>(
    py: Python<'py>,
    predictions: BTreeMap<String, Vec<(f64, f64)>>,
    ground_truth: Vec<PyPoseInstance>,
    tau: f64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let preds: Predictions = predictions
        .into_iter()
        .map(|(id, pts)| (id, pts.into_iter().map(|(x, y)| [x, y]).collect()))
        .collect();
    let gt: Vec<_> = ground_truth.into_iter().map(|p| p.inner).collect();
    let report = harness::pck_score(&preds, &gt, tau).map_err(to_py)?;
    let per_class: BTreeMap<String, Option<f64>> = report
        .per_class
        .iter()
        .map(|(c, n)| (c.clone(), n.score()))
        .collect();
    let out = pyo3::types::PyDict::new(py);
    out.set_item("overall", report.overall.score())?;
    out.set_item("per_class", per_class)?;
    out.set_item("missing", report.missing_predictions)?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "posedpp")]
fn posedpp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PosedppError", m.py().get_type::<PosedppError>())?;
    m.add("RankError", m.py().get_type::<RankError>())?;
    m.add("IntegrityError", m.py().get_type::<IntegrityError>())?;
    m.add_class::<PyPoseInstance>()?;
    m.add_class::<PyThinPlateSpline>()?;
    m.add_function(wrap_pyfunction!(build_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(flatten_poses, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_map_kdpp, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_map, m)?)?;
    m.add_function(wrap_pyfunction!(elementary_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(kdpp_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(per_class_quota, m)?)?;
    m.add_function(wrap_pyfunction!(select_exemplars, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(load_annotations, m)?)?;
    m.add_function(wrap_pyfunction!(pck_score, m)?)?;
    Ok(())
}
