//! Python bindings: potentials, spectra with spectral data, the Weyl
//! function, isospectral transforms and the verification suite.
//!
//! Matrices cross the boundary as lists of rows of Python `complex`.

use std::path::PathBuf;

use isospectral::darboux::target_from_pair as core_target_from_pair;
use isospectral::report::spectrum_report;
use isospectral::spectral_data::{attach_all, default_contour_radius};
use isospectral::{
    compose as core_compose, compute_spectrum as core_compute_spectrum, m_residue as core_m_residue, run_suite, transform as core_transform,
    weyl_m as core_weyl_m, CMatrix, CheckReport, EigenGroup, Error, Potential, SolverConfig, Spectrum, SubspaceBasis, SuiteOptions,
    TransformSpec, C64,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;

create_exception!(pyisospectral, IsospectralError, PyException, "Numerical failure inside the solver.");
create_exception!(pyisospectral, RejectedTargetError, IsospectralError, "Transform target fails validation.");

type Rows = Vec<Vec<C64>>;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::RejectedTarget { .. } => RejectedTargetError::new_err(msg),
        Error::ContractViolation(_) | Error::Domain { .. } | Error::Parse { .. } | Error::InvalidNorming(_) => PyValueError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        _ => IsospectralError::new_err(msg),
    }
}

fn rows(m: &CMatrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn matrix(r: &Rows) -> PyResult<CMatrix> {
    let n = r.len();
    let m = r.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || r.iter().any(|row| row.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| r[i][j]))
}

fn config_or_default(c: Option<PyRef<'_, PySolverConfig>>) -> SolverConfig {
    c.map(|c| c.inner.clone()).unwrap_or_default()
}

#[pyclass(name = "Potential", module = "pyisospectral", frozen)]
struct PyPotential {
    inner: Potential,
}

#[pymethods]
impl PyPotential {
    #[staticmethod]
    fn zero(n: usize) -> PyResult<Self> {
        if n == 0 {
            return Err(PyValueError::new_err("dimension must be positive"));
        }
        Ok(PyPotential { inner: Potential::zero(n) })
    }

    #[staticmethod]
    fn constant_diagonal(diag: Vec<f64>) -> PyResult<Self> {
        if diag.is_empty() {
            return Err(PyValueError::new_err("dimension must be positive"));
        }
        Ok(PyPotential { inner: Potential::constant_diagonal(diag) })
    }

    #[staticmethod]
    #[pyo3(signature = (n, modes, amplitude, seed=0))]
    fn random_fourier(n: usize, modes: usize, amplitude: f64, seed: u64) -> PyResult<Self> {
        if n == 0 || modes == 0 || !amplitude.is_finite() {
            return Err(PyValueError::new_err("need n > 0, modes > 0 and a finite amplitude"));
        }
        Ok(PyPotential { inner: Potential::random_fourier(n, modes, amplitude, seed) })
    }

    /// Cosine series `sum_j C_j cos(j pi x)` with Hermitian modes.
    #[staticmethod]
    fn fourier(coeffs: Vec<Rows>) -> PyResult<Self> {
        let cs = coeffs.iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
        Ok(PyPotential { inner: Potential::fourier(cs).map_err(err)? })
    }

    #[staticmethod]
    fn grid(xs: Vec<f64>, values: Vec<Rows>) -> PyResult<Self> {
        let vs = values.iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
        Ok(PyPotential { inner: Potential::grid(xs, vs).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyPotential { inner: Potential::load(path).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPotential { inner: Potential::from_json_str(text).map_err(err)? })
    }

    fn to_json(&self, py: Python<'_>) -> String {
        py.detach(|| self.inner.to_json_string())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind_name()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn __call__(&self, x: f64) -> PyResult<Rows> {
        self.inner.eval(x).map(|m| rows(&m)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Potential(kind={:?}, dim={}, depth={})", self.inner.kind_name(), self.inner.dim(), self.inner.depth())
    }
}

#[pyclass(name = "SolverConfig", module = "pyisospectral")]
struct PySolverConfig {
    inner: SolverConfig,
}

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (steps=None, fd_mesh=None, sv_tol=None, cluster_tol=None, contour_nodes=None))]
    fn new(steps: Option<usize>, fd_mesh: Option<usize>, sv_tol: Option<f64>, cluster_tol: Option<f64>, contour_nodes: Option<usize>) -> PyResult<Self> {
        let mut c = SolverConfig::default();
        if let Some(v) = steps {
            c.steps = v;
        }
        if let Some(v) = fd_mesh {
            c.fd_mesh = v;
        }
        if let Some(v) = sv_tol {
            c.sv_tol = v;
        }
        if let Some(v) = cluster_tol {
            c.cluster_tol = v;
        }
        if let Some(v) = contour_nodes {
            c.contour_nodes = v;
        }
        c.validate().map_err(err)?;
        Ok(PySolverConfig { inner: c })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    #[getter]
    fn fd_mesh(&self) -> usize {
        self.inner.fd_mesh
    }

    #[getter]
    fn sv_tol(&self) -> f64 {
        self.inner.sv_tol
    }

    #[getter]
    fn cluster_tol(&self) -> f64 {
        self.inner.cluster_tol
    }

    #[getter]
    fn contour_nodes(&self) -> usize {
        self.inner.contour_nodes
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "EigenGroup", module = "pyisospectral", frozen)]
struct PyEigenGroup {
    inner: EigenGroup,
}

impl PyEigenGroup {
    fn with_data<T>(&self, f: impl FnOnce(&isospectral::GroupData) -> T) -> PyResult<T> {
        self.inner.data().map(f).map_err(err)
    }
}

#[pymethods]
impl PyEigenGroup {
    #[getter]
    fn eigenvalue(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn multiplicity(&self) -> usize {
        self.inner.k
    }

    /// Orthonormal basis vectors of the eigenspace.
    #[getter]
    fn kernel(&self) -> Vec<Vec<C64>> {
        self.inner.e.vectors()
    }

    #[getter]
    fn has_data(&self) -> bool {
        self.inner.data.is_some()
    }

    #[getter]
    fn s_alpha(&self) -> PyResult<Rows> {
        self.with_data(|d| rows(&d.s_alpha))
    }

    #[getter]
    fn g_alpha(&self) -> PyResult<Rows> {
        self.with_data(|d| rows(&d.g_alpha))
    }

    #[getter]
    fn b_alpha(&self) -> PyResult<Rows> {
        self.with_data(|d| rows(&d.b_alpha))
    }

    #[getter]
    fn d_alpha(&self) -> PyResult<Rows> {
        self.with_data(|d| rows(&d.d_alpha))
    }

    #[getter]
    fn forbidden(&self) -> PyResult<Vec<Vec<C64>>> {
        self.with_data(|d| d.f_alpha.vectors())
    }

    fn __repr__(&self) -> String {
        format!("EigenGroup(eigenvalue={}, multiplicity={})", self.inner.lambda, self.inner.k)
    }
}

#[pyclass(name = "Spectrum", module = "pyisospectral", frozen)]
struct PySpectrum {
    inner: Spectrum,
    potential: Potential,
}

#[pymethods]
impl PySpectrum {
    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.lambdas()
    }

    #[getter]
    fn multiplicities(&self) -> Vec<usize> {
        self.inner.multiplicities()
    }

    #[getter]
    fn lambda_max(&self) -> f64 {
        self.inner.lambda_max
    }

    /// 1-based group index.
    fn group(&self, alpha: usize) -> PyResult<PyEigenGroup> {
        let g = self.inner.group(alpha).map_err(|e| PyIndexError::new_err(e.to_string()))?;
        Ok(PyEigenGroup { inner: g.clone() })
    }

    fn __len__(&self) -> usize {
        self.inner.groups.len()
    }

    fn __getitem__(&self, i: usize) -> PyResult<PyEigenGroup> {
        self.inner
            .groups
            .get(i)
            .map(|g| PyEigenGroup { inner: g.clone() })
            .ok_or_else(|| PyIndexError::new_err(format!("group index {i} out of range")))
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&spectrum_report(&self.potential, &self.inner)).expect("serializable")
    }

    fn __repr__(&self) -> String {
        format!("Spectrum(groups={}, lambda_max={})", self.inner.groups.len(), self.inner.lambda_max)
    }
}

#[pyclass(name = "CheckReport", module = "pyisospectral", frozen)]
struct PyCheckReport {
    inner: CheckReport,
}

#[pymethods]
impl PyCheckReport {
    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    #[getter]
    fn tolerance(&self) -> f64 {
        self.inner.tolerance
    }

    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed
    }

    #[getter]
    fn skipped(&self) -> bool {
        self.inner.skipped
    }

    /// JSON text with check-specific detail.
    #[getter]
    fn context(&self) -> String {
        self.inner.context.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "CheckReport(name={:?}, passed={}, residual={:e}, tolerance={:e})",
            self.inner.name, self.inner.passed, self.inner.residual, self.inner.tolerance
        )
    }
}

/// Dirichlet eigenvalues up to `lambda_max`, grouped with multiplicities.
#[pyfunction]
#[pyo3(signature = (potential, lambda_max, config=None, data=true))]
fn compute_spectrum(
    py: Python<'_>,
    potential: &PyPotential,
    lambda_max: f64,
    config: Option<PyRef<'_, PySolverConfig>>,
    data: bool,
) -> PyResult<PySpectrum> {
    let cfg = config_or_default(config);
    let v = potential.inner.clone();
    let s = py
        .detach(|| {
            let s = core_compute_spectrum(&v, lambda_max, &cfg)?;
            if data {
                attach_all(&v, &s, &cfg)
            } else {
                Ok(s)
            }
        })
        .map_err(err)?;
    Ok(PySpectrum { inner: s, potential: v })
}

#[pyfunction]
#[pyo3(signature = (potential, lam, config=None))]
fn weyl_m(py: Python<'_>, potential: &PyPotential, lam: C64, config: Option<PyRef<'_, PySolverConfig>>) -> PyResult<Rows> {
    let cfg = config_or_default(config);
    let v = potential.inner.clone();
    py.detach(|| core_weyl_m(&v, lam, &cfg, None)).map(|s| rows(&s.m)).map_err(err)
}

/// Contour-integral residue of `m` at group `alpha`.
#[pyfunction]
#[pyo3(signature = (spectrum, alpha, radius=None, nodes=None, config=None))]
fn m_residue(
    py: Python<'_>,
    spectrum: &PySpectrum,
    alpha: usize,
    radius: Option<f64>,
    nodes: Option<usize>,
    config: Option<PyRef<'_, PySolverConfig>>,
) -> PyResult<Rows> {
    let cfg = config_or_default(config);
    let radius = match radius {
        Some(r) => r,
        None => default_contour_radius(&spectrum.inner, alpha, cfg.contour_radius_factor).map_err(err)?,
    };
    let nodes = nodes.unwrap_or(cfg.contour_nodes);
    py.detach(|| core_m_residue(&spectrum.potential, &spectrum.inner, alpha, radius, nodes, &cfg))
        .map(|m| rows(&m))
        .map_err(err)
}

/// `B = e g^{-1} e*` for a kernel basis `e` (list of vectors) and a
/// positive definite `g`.
#[pyfunction]
fn target_from_pair(kernel: Vec<Vec<C64>>, g: Rows) -> PyResult<Rows> {
    let n = kernel.first().map_or(0, Vec::len);
    if n == 0 || kernel.iter().any(|v| v.len() != n) {
        return Err(PyValueError::new_err("kernel vectors must be non-empty and of equal length"));
    }
    let e = SubspaceBasis::span_of(n, &kernel);
    core_target_from_pair(&e, &matrix(&g)?).map(|b| rows(&b)).map_err(err)
}

/// Replaces `B_alpha` by `b`, leaving the spectrum and all other groups fixed.
#[pyfunction]
#[pyo3(signature = (potential, alpha, b, config=None))]
fn transform(py: Python<'_>, potential: &PyPotential, alpha: usize, b: Rows, config: Option<PyRef<'_, PySolverConfig>>) -> PyResult<PyPotential> {
    let cfg = config_or_default(config);
    let spec = TransformSpec::new(alpha, matrix(&b)?);
    let v = potential.inner.clone();
    let t = py.detach(|| core_transform(&v, &spec, &cfg)).map_err(err)?;
    Ok(PyPotential { inner: t })
}

/// Applies `(alpha, B)` pairs left to right.
#[pyfunction]
#[pyo3(signature = (potential, specs, config=None))]
fn compose(py: Python<'_>, potential: &PyPotential, specs: Vec<(usize, Rows)>, config: Option<PyRef<'_, PySolverConfig>>) -> PyResult<PyPotential> {
    let cfg = config_or_default(config);
    let specs = specs
        .iter()
        .map(|(a, b)| Ok(TransformSpec::new(*a, matrix(b)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let v = potential.inner.clone();
    let t = py.detach(|| core_compose(&v, &specs, &cfg)).map_err(err)?;
    Ok(PyPotential { inner: t })
}

/// Runs every check of the verification suite.
#[pyfunction]
#[pyo3(signature = (potential, lambda_max=100.0, seed=0, config=None))]
fn verify(
    py: Python<'_>,
    potential: &PyPotential,
    lambda_max: f64,
    seed: u64,
    config: Option<PyRef<'_, PySolverConfig>>,
) -> PyResult<Vec<PyCheckReport>> {
    let cfg = config_or_default(config);
    let opts = SuiteOptions { lambda_max, seed, ..SuiteOptions::default() };
    let v = potential.inner.clone();
    let reports = py.detach(|| run_suite(&v, &cfg, &opts)).map_err(err)?;
    Ok(reports.into_iter().map(|r| PyCheckReport { inner: r }).collect())
}

#[pymodule]
fn pyisospectral(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("IsospectralError", m.py().get_type::<IsospectralError>())?;
    m.add("RejectedTargetError", m.py().get_type::<RejectedTargetError>())?;
    m.add_class::<PyPotential>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PyEigenGroup>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyCheckReport>()?;
    m.add_function(wrap_pyfunction!(compute_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(weyl_m, m)?)?;
    m.add_function(wrap_pyfunction!(m_residue, m)?)?;
    m.add_function(wrap_pyfunction!(target_from_pair, m)?)?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
