use nalgebra::Matrix3xX;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use varpose::discrete::solve_f as solve_f_core;
use varpose::geometry::{exp_so3 as exp_so3_core, principal_angle as principal_angle_core, Mat3, Vec3};
use varpose::harness::{self, HarnessError, Preset};
use varpose::velocity::{reconstruct_twist as reconstruct_core, ButterworthState};
use varpose::wahba::{select_weights, WeightSpec};

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn mat3(rows: [[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| rows[i][j])
}

fn rows3(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn toml_to_py(py: Python<'_>, v: &toml::Value) -> PyResult<PyObject> {
    Ok(match v {
        toml::Value::String(s) => s.into_pyobject(py)?.into_any().unbind(),
        toml::Value::Integer(i) => i.into_pyobject(py)?.into_any().unbind(),
        toml::Value::Float(f) => f.into_pyobject(py)?.into_any().unbind(),
        toml::Value::Boolean(b) => b.into_pyobject(py)?.to_owned().into_any().unbind(),
        toml::Value::Datetime(d) => d.to_string().into_pyobject(py)?.into_any().unbind(),
        toml::Value::Array(a) => {
            let items = a.iter().map(|x| toml_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any().unbind()
        }
        toml::Value::Table(t) => {
            let d = PyDict::new(py);
            for (k, x) in t {
                d.set_item(k, toml_to_py(py, x)?)?;
            }
            d.into_any().unbind()
        }
    })
}

/// Experiment configuration; starts from a built-in preset.
#[pyclass(name = "ExperimentConfig")]
#[derive(Clone)]
struct PyConfig {
    inner: harness::ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (preset = "case1"))]
    fn new(preset: &str) -> PyResult<Self> {
        let p: Preset = preset.parse().map_err(PyValueError::new_err)?;
        Ok(Self {
            inner: harness::ExperimentConfig::preset(p),
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        harness::ExperimentConfig::from_toml(text)
            .map(|inner| Self { inner })
            .map_err(harness_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Returns a copy with the dotted field set from a TOML literal, e.g.
    /// `cfg.with_override("gains.kappa", "2.0")`.
    fn with_override(&self, path: &str, literal: &str) -> PyResult<Self> {
        self.inner
            .with_override(path, literal)
            .map(|inner| Self { inner })
            .map_err(harness_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(name={:?}, seed={})", self.inner.name, self.inner.seed)
    }
}

/// Runs an experiment in memory. Returns `(trace, summary)`: the trace as a dict of
/// column lists, the summary as a dict.
#[pyfunction]
fn run(py: Python<'_>, config: &PyConfig) -> PyResult<(PyObject, PyObject)> {
    let (report, _) = py
        .allow_threads(|| harness::simulate(&config.inner, &harness::RunOptions::default()))
        .map_err(harness_err)?;
    let trace = PyDict::new(py);
    let t = &report.trace;
    let cols: [(&str, fn(&harness::TraceRow) -> f64); 10] = [
        ("t", |r| r.t),
        ("ang_err", |r| r.ang_err),
        ("pos_err", |r| r.pos_err),
        ("wx", |r| r.wx),
        ("wy", |r| r.wy),
        ("wz", |r| r.wz),
        ("vx", |r| r.vx),
        ("vy", |r| r.vy),
        ("vz", |r| r.vz),
        ("V", |r| r.v),
    ];
    for (name, f) in cols {
        trace.set_item(name, t.iter().map(f).collect::<Vec<_>>())?;
    }
    trace.set_item("n_beacons", t.iter().map(|r| r.n_beacons).collect::<Vec<_>>())?;
    trace.set_item("newton_iters", t.iter().map(|r| r.newton_iters).collect::<Vec<_>>())?;
    let summary = toml::Value::try_from(&report.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((trace.into_any().unbind(), toml_to_py(py, &summary)?))
}

/// Rotation matrix `exp(v^×)` as nested lists.
#[pyfunction]
fn exp_so3(v: [f64; 3]) -> [[f64; 3]; 3] {
    rows3(&exp_so3_core(&Vec3::from(v)))
}

#[pyfunction]
fn principal_angle(r: [[f64; 3]; 3]) -> f64 {
    principal_angle_core(&mat3(r))
}

/// Implicit rotation update of the discrete estimator. Returns `(F, iterations, residual)`.
#[pyfunction]
fn solve_f(j: [[f64; 3]; 3], omega: [f64; 3], dt: f64) -> PyResult<([[f64; 3]; 3], usize, f64)> {
    let sol = solve_f_core(&mat3(j), &Vec3::from(omega), dt).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((rows3(&sol.f), sol.iterations, sol.residual))
}

/// Least-squares body twist `(omega, nu)` from beacon positions and velocities in the body frame.
#[pyfunction]
fn reconstruct_twist(a: Vec<[f64; 3]>, v: Vec<[f64; 3]>) -> PyResult<([f64; 3], [f64; 3])> {
    let a: Vec<Vec3> = a.into_iter().map(Vec3::from).collect();
    let v: Vec<Vec3> = v.into_iter().map(Vec3::from).collect();
    let xi = reconstruct_core(&a, &v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((xi.omega.into(), xi.nu.into()))
}

/// `K = D W Dᵀ` for reference vectors given as a list of columns.
#[pyfunction]
#[pyo3(signature = (columns, varsigma = [3.0, 2.0, 1.0]))]
fn wahba_k(columns: Vec<[f64; 3]>, varsigma: [f64; 3]) -> PyResult<[[f64; 3]; 3]> {
    let d = Matrix3xX::from_columns(&columns.into_iter().map(Vec3::from).collect::<Vec<_>>());
    let spec = WeightSpec {
        varsigma,
        ..WeightSpec::default()
    };
    let ctx = select_weights(&d, &spec).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(rows3(&ctx.k))
}

/// Output of the second-order low-pass filter for a scalar input sequence, starting at rest at zero.
#[pyfunction]
#[pyo3(signature = (inputs, dt, omega_n = 2.0, mu = 0.5))]
fn butterworth(inputs: Vec<f64>, dt: f64, omega_n: f64, mu: f64) -> PyResult<Vec<f64>> {
    let mut s = ButterworthState::<1>::new(omega_n, mu, nalgebra::SVector::zeros())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(inputs
        .windows(2)
        .map(|w| {
            s = s.step(&nalgebra::SVector::from([w[0]]), &nalgebra::SVector::from([w[1]]), dt);
            s.z[0]
        })
        .collect())
}

#[pymodule]
fn varpose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(exp_so3, m)?)?;
    m.add_function(wrap_pyfunction!(principal_angle, m)?)?;
    m.add_function(wrap_pyfunction!(solve_f, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_twist, m)?)?;
    m.add_function(wrap_pyfunction!(wahba_k, m)?)?;
    m.add_function(wrap_pyfunction!(butterworth, m)?)?;
    Ok(())
}
