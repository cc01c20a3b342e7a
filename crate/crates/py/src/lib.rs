//! Python module `sgbm_py`: run configurations, per-seed reports and a few
//! standalone helpers.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sgbm::model::{OptionType, Preset};
use sgbm::report::{self, Profile};
use sgbm::runner::{self, Resolved, RunConfig};

fn err(e: sgbm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn option_type(s: &str) -> PyResult<OptionType> {
    match s {
        "call" => Ok(OptionType::Call),
        "put" => Ok(OptionType::Put),
        _ => Err(PyValueError::new_err(format!("option must be 'call' or 'put', got {s:?}"))),
    }
}

/// One estimator's exposure profile and scalars for one seed.
#[pyclass(name = "ExposureReport", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyReport(report::ExposureReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn estimator(&self) -> &'static str {
        self.0.estimator.name()
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
    #[getter]
    fn n_paths(&self) -> usize {
        self.0.n_paths
    }
    #[getter]
    fn v0(&self) -> f64 {
        self.0.v0
    }
    #[getter]
    fn v0_std_err(&self) -> f64 {
        self.0.v0_std_err
    }
    #[getter]
    fn cva(&self) -> f64 {
        self.0.cva
    }
    #[getter]
    fn t(&self) -> Vec<f64> {
        self.0.profile.t.clone()
    }
    #[getter]
    fn ee(&self) -> Vec<f64> {
        self.0.profile.ee.clone()
    }
    #[getter]
    fn ee_star(&self) -> Vec<f64> {
        self.0.profile.ee_star.clone()
    }
    #[getter]
    fn pfe(&self) -> Vec<f64> {
        self.0.profile.pfe.clone()
    }
    #[getter]
    fn delta(&self) -> Option<Vec<f64>> {
        self.0.profile.delta.clone()
    }
    #[getter]
    fn gamma(&self) -> Option<Vec<f64>> {
        self.0.profile.gamma.clone()
    }
    fn to_csv(&self) -> String {
        self.0.profile.to_csv_string()
    }
    fn __repr__(&self) -> String {
        format!("ExposureReport({}, seed={}, v0={}, cva={})", self.0.estimator.name(), self.0.seed, self.0.v0, self.0.cva)
    }
}

/// A resolved run configuration.
#[pyclass(name = "Run", frozen, skip_from_py_object)]
pub struct PyRun(Resolved);

#[pymethods]
impl PyRun {
    /// Parses and resolves a TOML run configuration.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyRun(RunConfig::from_toml(text).and_then(|c| c.resolve()).map_err(err)?))
    }

    /// A preset with the common knobs overridden.
    #[staticmethod]
    #[pyo3(signature = (name, paths=100_000, bundles=64, order=2, seeds=vec![1], output_dir=None))]
    fn preset(name: &str, paths: usize, bundles: usize, order: usize, seeds: Vec<u64>, output_dir: Option<String>) -> PyResult<Self> {
        let mut cfg = RunConfig { preset: Some(name.into()), paths, bundles: Some(bundles), order, seeds, ..Default::default() };
        if let Some(d) = output_dir {
            cfg.output_dir = d.into();
        }
        Ok(PyRun(cfg.resolve().map_err(err)?))
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }
    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.0.seeds.clone()
    }
    #[getter]
    fn dates(&self) -> Vec<f64> {
        self.0.grid.dates.clone()
    }

    /// Direct report and, when requested by the configuration, the path
    /// estimator report for one seed. Nothing is written to disk.
    fn run_seed(&self, py: Python<'_>, seed: u64) -> PyResult<(PyReport, Option<PyReport>)> {
        let r = &self.0;
        let out = py.detach(|| runner::run_seed(r, seed)).map_err(err)?;
        Ok((PyReport(out.sweep.report), out.path.map(PyReport)))
    }

    /// Runs all seeds, writes the artifacts, and returns the summary as TOML.
    fn run(&self, py: Python<'_>) -> PyResult<String> {
        let r = &self.0;
        Ok(py.detach(|| runner::run(r)).map_err(err)?.to_toml())
    }
}

#[pyfunction]
fn preset_list() -> Vec<(&'static str, &'static str)> {
    Preset::ALL.iter().map(|p| (p.name(), p.description())).collect()
}

/// Relative L2 distances of profile `b` from reference `a`, both as CSV text.
#[pyfunction]
fn compare<'py>(py: Python<'py>, a: &str, b: &str) -> PyResult<Bound<'py, PyDict>> {
    let pa = Profile::read_csv(a.as_bytes()).map_err(err)?;
    let pb = Profile::read_csv(b.as_bytes()).map_err(err)?;
    let c = report::compare(&pa, &pb).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("EE", c.ee)?;
    d.set_item("PFE", c.pfe)?;
    d.set_item("DeltaEE", c.delta)?;
    d.set_item("GammaEE", c.gamma)?;
    Ok(d)
}

#[pyfunction]
fn bs_price(option: &str, s0: f64, strike: f64, maturity: f64, rate: f64, vol: f64) -> PyResult<f64> {
    Ok(sgbm::risk::bs_price(option_type(option)?, s0, strike, maturity, rate, vol))
}

#[pyfunction]
fn implied_vol(option: &str, price: f64, s0: f64, strike: f64, maturity: f64, rate: f64) -> PyResult<f64> {
    sgbm::risk::implied_vol(option_type(option)?, price, s0, strike, maturity, rate).map_err(err)
}

/// Log-log slope of the piecewise projection error of sin on `[0, 2 pi]`.
#[pyfunction]
fn projection_slope(order: usize, bundles: Vec<usize>) -> PyResult<f64> {
    if bundles.len() < 2 {
        return Err(PyKeyError::new_err("need at least two bundle counts"));
    }
    Ok(sgbm::regression::projection_error_probe(f64::sin, 0.0, std::f64::consts::TAU, order, &bundles).slope())
}

#[pymodule]
fn sgbm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyReport>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(preset_list, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(bs_price, m)?)?;
    m.add_function(wrap_pyfunction!(implied_vol, m)?)?;
    m.add_function(wrap_pyfunction!(projection_slope, m)?)?;
    Ok(())
}
