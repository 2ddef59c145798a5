//! Python bindings: datasets, sparse selection, baselines, metrics, losses,
//! and model training, checkpointing and inference.

use std::path::PathBuf;

use hrtf_core::baselines::{self, Method};
use hrtf_core::dataio::{self, SubsetStrategy, SyntheticSpec};
use hrtf_core::metrics;
use hrtf_core::model::{FdModel, ModelConfig};
use hrtf_core::nn::checkpoint::{self, Checkpoint};
use hrtf_core::nn::ParamStore;
use hrtf_core::training::{self, TrainConfig};
use hrtf_core::types::{split_set, Direction, FrequencyGrid, SparseConfig};
use hrtf_core::HrtfSet;
use numpy::{PyArray1, PyArray3, PyReadonlyArray3};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// One subject's log-magnitude HRTFs, `D × 2 × F` in dB.
#[pyclass(name = "HrtfSet", module = "hrtf_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHrtfSet {
    inner: HrtfSet,
}

#[pymethods]
impl PyHrtfSet {
    #[new]
    #[pyo3(signature = (subject_id, azimuth_deg, elevation_deg, frequencies_hz, logmag_db, sample_rate_hz = 48_000.0))]
    fn new(
        subject_id: String,
        azimuth_deg: Vec<f64>,
        elevation_deg: Vec<f64>,
        frequencies_hz: Vec<f64>,
        logmag_db: PyReadonlyArray3<'_, f64>,
        sample_rate_hz: f64,
    ) -> PyResult<Self> {
        if azimuth_deg.len() != elevation_deg.len() {
            return Err(value_err("azimuth and elevation lists differ in length"));
        }
        let dirs = azimuth_deg
            .iter()
            .zip(&elevation_deg)
            .map(|(&a, &e)| Direction::new(a, e))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let grid = FrequencyGrid::new(frequencies_hz).map_err(value_err)?;
        let inner = HrtfSet::new(subject_id, dirs, grid, logmag_db.as_array().to_owned()).map_err(value_err)?;
        Ok(Self { inner: inner.with_sample_rate(sample_rate_hz) })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: dataio::read_set(path).map_err(value_err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        dataio::write_set(&self.inner, path).map_err(value_err)
    }

    #[getter]
    fn subject_id(&self) -> &str {
        &self.inner.subject_id
    }

    #[getter]
    fn sample_rate_hz(&self) -> f64 {
        self.inner.sample_rate_hz
    }

    #[getter]
    fn n_directions(&self) -> usize {
        self.inner.n_directions()
    }

    #[getter]
    fn n_freqs(&self) -> usize {
        self.inner.n_freqs()
    }

    /// `(azimuth_deg, elevation_deg)` per direction.
    fn directions(&self) -> Vec<(f64, f64)> {
        self.inner.directions().iter().map(|d| (d.azimuth_deg(), d.elevation_deg())).collect()
    }

    fn frequencies_hz<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        PyArray1::from_slice(py, self.inner.freq_grid().frequencies_hz())
    }

    fn logmag_db<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray3<f64>> {
        PyArray3::from_owned_array(py, self.inner.logmag_db().to_owned())
    }

    fn __repr__(&self) -> String {
        format!("HrtfSet({:?}, D={}, F={})", self.inner.subject_id, self.inner.n_directions(), self.inner.n_freqs())
    }
}

fn unwrap_sets(sets: &[PyRef<'_, PyHrtfSet>]) -> Vec<HrtfSet> {
    sets.iter().map(|s| s.inner.clone()).collect()
}

fn sparse_for(set: &HrtfSet, measured: Vec<usize>) -> PyResult<SparseConfig> {
    SparseConfig::new(measured, set.n_directions()).map_err(value_err)
}

/// Deterministic synthetic subjects.
#[pyfunction]
#[pyo3(signature = (seed, subjects, dirs, freqs, sh_order = 3, notches = 2))]
fn synthetic(seed: u64, subjects: u32, dirs: u32, freqs: u32, sh_order: u32, notches: u32) -> PyResult<Vec<PyHrtfSet>> {
    let spec = SyntheticSpec { sh_order, notch_count: notches, ..SyntheticSpec::new(seed, subjects, dirs, freqs) };
    let sets = dataio::generate_synthetic(&spec).map_err(value_err)?;
    Ok(sets.into_iter().map(|inner| PyHrtfSet { inner }).collect())
}

/// Loads a dataset directory, manifest directory or single file.
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<PyHrtfSet>> {
    Ok(dataio::load_dataset(path).map_err(value_err)?.into_iter().map(|inner| PyHrtfSet { inner }).collect())
}

/// Farthest-point sample of `m` direction indices, in selection order.
#[pyfunction]
fn farthest_point_subset(set: PyRef<'_, PyHrtfSet>, m: usize) -> PyResult<Vec<usize>> {
    let dirs = set.inner.directions();
    if m == 0 || m >= dirs.len() {
        return Err(value_err(format!("need 1 <= m < D = {}, got {m}", dirs.len())));
    }
    let _ = dataio::select_sparse_subset(dirs, &SubsetStrategy::FarthestPoint { m }).map_err(value_err)?;
    Ok(dataio::farthest_point_order(dirs, m))
}

/// Predicts the unmeasured directions of `set` from the `measured` rows.
/// Returns `(values U×2×F, unmeasured indices, extrapolated count)`.
#[pyfunction]
#[pyo3(signature = (method, set, measured, lmax = None, lam = None))]
fn baseline_predict<'py>(
    py: Python<'py>,
    method: &str,
    set: PyRef<'_, PyHrtfSet>,
    measured: Vec<usize>,
    lmax: Option<usize>,
    lam: Option<f64>,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Vec<usize>, usize)> {
    let mut method: Method = method.parse().map_err(value_err)?;
    if let Method::Sh { l_max, lambda } = &mut method {
        *l_max = lmax.or(*l_max);
        *lambda = lam.unwrap_or(*lambda);
    }
    let sparse = sparse_for(&set.inner, measured)?;
    let (m, _) = split_set(&set.inner, &sparse).map_err(value_err)?;
    let dirs = set.inner.directions();
    let md: Vec<Direction> = sparse.measured().iter().map(|&i| dirs[i]).collect();
    let td: Vec<Direction> = sparse.unmeasured().iter().map(|&i| dirs[i]).collect();
    let p = baselines::predict(method, m.view(), &md, &td).map_err(value_err)?;
    Ok((PyArray3::from_owned_array(py, p.values), sparse.unmeasured().to_vec(), p.extrapolated))
}

/// Mean LSD, ILD error and per-frequency LSD of `pred` against `truth`
/// (both `U × 2 × F`, unmeasured rows only).
#[pyfunction]
fn evaluate_metrics<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray3<'_, f64>,
    truth: PyReadonlyArray3<'_, f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let (p, t) = (pred.as_array(), truth.as_array());
    let d = PyDict::new(py);
    d.set_item("mean_lsd_db", metrics::mean_lsd(p, t).map_err(value_err)?)?;
    d.set_item("ild_error_db", metrics::ild_error(p, t).map_err(value_err)?)?;
    d.set_item("per_frequency_lsd_db", PyArray1::from_owned_array(py, metrics::lsd_per_frequency(p, t).map_err(value_err)?))?;
    Ok(d)
}

#[pyfunction]
fn loss_lsd(pred: PyReadonlyArray3<'_, f64>, truth: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    training::loss_lsd(pred.as_array(), truth.as_array()).map_err(value_err)
}

#[pyfunction]
fn loss_sgl(pred: PyReadonlyArray3<'_, f64>, truth: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    training::loss_sgl(pred.as_array(), truth.as_array()).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (pred, truth, beta = 1.0))]
fn loss_total(pred: PyReadonlyArray3<'_, f64>, truth: PyReadonlyArray3<'_, f64>, beta: f64) -> PyResult<f64> {
    training::loss_total(pred.as_array(), truth.as_array(), beta).map_err(value_err)
}

/// A frequency-domain network with its parameters.
#[pyclass(name = "Model", module = "hrtf_py", frozen)]
struct PyModel {
    model: FdModel,
    params: ParamStore<f32>,
    checkpoint: Checkpoint,
    history: Vec<(usize, f64, f64)>,
}

#[pymethods]
impl PyModel {
    /// Trains a model. `model_config` and `train_config` are `key = value`
    /// texts; `m`, `d`, `f` follow from the data and `measured`.
    #[staticmethod]
    #[pyo3(signature = (train_sets, val_sets, measured, model_config = "", train_config = ""))]
    fn fit(
        py: Python<'_>,
        train_sets: Vec<PyRef<'_, PyHrtfSet>>,
        val_sets: Vec<PyRef<'_, PyHrtfSet>>,
        measured: Vec<usize>,
        model_config: &str,
        train_config: &str,
    ) -> PyResult<Self> {
        let train = unwrap_sets(&train_sets);
        let val = unwrap_sets(&val_sets);
        let first = train.first().ok_or_else(|| value_err("no training subjects"))?;
        let sparse = sparse_for(first, measured)?;
        let doc = hrtf_core::kv::KvDoc::parse(model_config).map_err(value_err)?;
        let shape = (sparse.m(), first.n_directions(), first.n_freqs(), hrtf_core::model::Variant::Conformer);
        let mc = ModelConfig::from_doc(&doc, Some(shape)).map_err(value_err)?;
        let tdoc = hrtf_core::kv::KvDoc::parse(train_config).map_err(value_err)?;
        let tc = TrainConfig::from_doc(&tdoc).map_err(value_err)?;
        let out = py
            .detach(|| training::fit(&train, &val, &sparse, &mc, &tc, &mut |_| {}))
            .map_err(runtime_err)?;
        Ok(Self {
            history: out.history.iter().map(|r| (r.epoch, r.train_loss, r.val_lsd)).collect(),
            model: out.model,
            params: out.params,
            checkpoint: out.best,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = checkpoint::read(&path).map_err(value_err)?;
        let (model, params) = training::load_checkpoint(&ck).map_err(value_err)?;
        Ok(Self { model, params, checkpoint: ck, history: Vec::new() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::write(&path, &self.checkpoint).map_err(value_err)
    }

    /// The model config as `key = value` text.
    #[getter]
    fn config(&self) -> String {
        self.model.config().to_text()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.params.n_scalars()
    }

    /// `(epoch, train_loss, val_lsd)` per epoch; empty for loaded models.
    #[getter]
    fn history(&self) -> Vec<(usize, f64, f64)> {
        self.history.clone()
    }

    #[getter]
    fn best_val_lsd(&self) -> f64 {
        self.checkpoint.val_lsd
    }

    /// Dense `D × 2 × F` prediction from measured rows `M × 2 × F`.
    fn predict<'py>(&self, py: Python<'py>, measured: PyReadonlyArray3<'_, f64>) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let p = self.model.predict(&self.params, measured.as_array()).map_err(value_err)?;
        Ok(PyArray3::from_owned_array(py, p.output))
    }
}

#[pymodule]
fn hrtf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHrtfSet>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(farthest_point_subset, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(loss_lsd, m)?)?;
    m.add_function(wrap_pyfunction!(loss_sgl, m)?)?;
    m.add_function(wrap_pyfunction!(loss_total, m)?)?;
    Ok(())
}
