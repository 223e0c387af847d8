//! Python bindings: meshes, model parameters, simulations, the convergence
//! study and the manufactured solution.

use std::path::PathBuf;

use chemoflow_core::io::config::InitialKind;
use chemoflow_core::io::{parse_config, FieldSnapshot, Preset, RunConfig};
use chemoflow_core::manufactured::{self, ExactSolution, StudyConfig, Variable};
use chemoflow_core::mesh::build_rect_mesh;
use chemoflow_core::scheme::{Forcing, InitMode, Scheme, State, StepDiagnostics};
use chemoflow_core::{io, quadrature, Error};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Singular { .. } | Error::Solver { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Structured triangulation of `[0, lx] × [0, ly]`.
#[pyclass(module = "chemoflow", frozen)]
struct Mesh {
    inner: chemoflow_core::mesh::Mesh,
}

#[pymethods]
impl Mesh {
    #[new]
    #[pyo3(signature = (lx, ly, kx, ky))]
    fn new(lx: f64, ly: f64, kx: usize, ky: usize) -> PyResult<Self> {
        Ok(Self {
            inner: build_rect_mesh(lx, ly, kx, ky).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_triangles(&self) -> usize {
        self.inner.n_triangles()
    }

    #[getter]
    fn area(&self) -> f64 {
        self.inner.domain_area()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    #[getter]
    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.nodes.iter().map(|p| (p[0], p[1])).collect()
    }

    #[getter]
    fn triangles(&self) -> Vec<(usize, usize, usize)> {
        self.inner
            .triangles
            .iter()
            .map(|t| (t[0], t[1], t[2]))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(n_nodes={}, n_triangles={})",
            self.inner.n_nodes(),
            self.inner.n_triangles()
        )
    }
}

/// Model coefficients `χ, D_n, D_c, D_u, ρ, γ` and the constant `∇φ`.
#[pyclass(module = "chemoflow", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct ModelParams {
    chi: f64,
    d_n: f64,
    d_c: f64,
    d_u: f64,
    rho: f64,
    gamma: f64,
    grad_phi: (f64, f64),
}

impl From<chemoflow_core::scheme::ModelParams> for ModelParams {
    fn from(p: chemoflow_core::scheme::ModelParams) -> Self {
        Self {
            chi: p.chi,
            d_n: p.d_n,
            d_c: p.d_c,
            d_u: p.d_u,
            rho: p.rho,
            gamma: p.gamma,
            grad_phi: (p.grad_phi[0], p.grad_phi[1]),
        }
    }
}

impl From<&ModelParams> for chemoflow_core::scheme::ModelParams {
    fn from(p: &ModelParams) -> Self {
        Self {
            chi: p.chi,
            d_n: p.d_n,
            d_c: p.d_c,
            d_u: p.d_u,
            rho: p.rho,
            gamma: p.gamma,
            grad_phi: [p.grad_phi.0, p.grad_phi.1],
        }
    }
}

#[pymethods]
impl ModelParams {
    #[staticmethod]
    fn unit() -> Self {
        chemoflow_core::scheme::ModelParams::unit().into()
    }

    #[staticmethod]
    fn drop_experiment() -> Self {
        chemoflow_core::scheme::ModelParams::drop_experiment().into()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(chi={}, d_n={}, d_c={}, d_u={}, rho={}, gamma={}, grad_phi={:?})",
            self.chi, self.d_n, self.d_c, self.d_u, self.rho, self.gamma, self.grad_phi
        )
    }
}

fn diagnostics_dict<'py>(py: Python<'py>, d: &StepDiagnostics) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("m", d.m)?;
    out.set_item("t", d.t)?;
    out.set_item("mass", d.mass)?;
    out.set_item("n_integral", d.n_integral)?;
    out.set_item("pi_integral", d.pi_integral)?;
    out.set_item("div_residual", d.div_residual)?;
    out.set_item("eta_min", d.eta.min)?;
    out.set_item("eta_max", d.eta.max)?;
    out.set_item("c_min", d.c.min)?;
    out.set_item("c_max", d.c.max)?;
    out.set_item("u_max", d.u_norm.max)?;
    if let Some(r) = &d.reports {
        out.set_item("max_relative_residual", r.max_relative_residual())?;
    }
    Ok(out)
}

/// A time-dependent run driven by a configuration. The state persists
/// between calls to `run`.
#[pyclass(module = "chemoflow")]
struct Simulation {
    cfg: RunConfig,
    mesh: chemoflow_core::mesh::Mesh,
    state: State,
    n_steps: usize,
}

impl Simulation {
    fn from_config(cfg: RunConfig) -> PyResult<Self> {
        cfg.validate().map_err(to_py)?;
        let grid = cfg.time_grid().map_err(to_py)?;
        let mesh = build_rect_mesh(cfg.domain.lx, cfg.domain.ly, cfg.mesh.kx, cfg.mesh.ky)
            .map_err(to_py)?;
        let state = {
            let scheme = Scheme::with_quadrature(&mesh, cfg.params, grid.dt, cfg.quadrature_degree)
                .map_err(to_py)?;
            let data = cfg.initial_data().map_err(to_py)?;
            scheme
                .init_state(data.as_ref(), cfg.init_mode)
                .map_err(to_py)?
        };
        Ok(Self {
            n_steps: grid.n_steps,
            cfg,
            mesh,
            state,
        })
    }

    fn scheme(&self) -> PyResult<Scheme<'_>> {
        Scheme::with_quadrature(
            &self.mesh,
            self.cfg.params,
            self.cfg.time.dt,
            self.cfg.quadrature_degree,
        )
        .map_err(to_py)
    }

    fn snapshot(&self) -> PyResult<FieldSnapshot<'_>> {
        let scheme = self.scheme()?;
        Ok(FieldSnapshot::from_state(
            &self.mesh,
            scheme.layouts(),
            &self.state,
        ))
    }
}

#[pymethods]
impl Simulation {
    /// Build from a preset name (`test1`, `test2`, `custom`) and optional TOML
    /// overrides, plus direct overrides of the most common settings.
    #[new]
    #[pyo3(signature = (preset = "test2", config = None, kx = None, ky = None, dt = None, t_final = None, init_mode = None, params = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        preset: &str,
        config: Option<&str>,
        kx: Option<usize>,
        ky: Option<usize>,
        dt: Option<f64>,
        t_final: Option<f64>,
        init_mode: Option<&str>,
        params: Option<ModelParams>,
    ) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => parse_config(text).map_err(to_py)?,
            None => RunConfig::preset(parse::<Preset>(preset)?),
        };
        if let Some(k) = kx {
            cfg.mesh.kx = k;
        }
        if let Some(k) = ky {
            cfg.mesh.ky = k;
        }
        if let Some(v) = dt {
            cfg.time.dt = v;
        }
        if let Some(v) = t_final {
            cfg.time.t_final = v;
        }
        if dt.is_some() || t_final.is_some() {
            cfg.output.snapshot_times = vec![0.0, cfg.time.t_final];
        }
        if let Some(m) = init_mode {
            cfg.init_mode = parse::<InitMode>(m)?;
        }
        if let Some(p) = params {
            cfg.params = (&p).into();
        }
        Self::from_config(cfg)
    }

    /// Advance `n_steps` levels (default: up to the final time) and return
    /// one diagnostics dict per new level.
    #[pyo3(signature = (n_steps = None))]
    fn run<'py>(
        &mut self,
        py: Python<'py>,
        n_steps: Option<usize>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let steps = n_steps.unwrap_or(self.n_steps.saturating_sub(self.state.m));
        let exact = ExactSolution::new(self.cfg.params);
        let forcing: Option<&dyn Forcing> = match self.cfg.initial.kind {
            InitialKind::Test2 => Some(&exact),
            _ => None,
        };
        let mut records = Vec::new();
        let state = {
            let scheme = self.scheme()?;
            scheme
                .run(self.state.clone(), steps, forcing, |s, d| {
                    if s.m > self.state.m {
                        records.push(d.clone());
                    }
                    Ok(())
                })
                .map_err(to_py)?
        };
        self.state = state;
        records.iter().map(|d| diagnostics_dict(py, d)).collect()
    }

    #[getter]
    fn m(&self) -> usize {
        self.state.m
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.state.alpha
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[getter]
    fn mass(&self) -> PyResult<f64> {
        Ok(self.scheme()?.mass_of_eta(&self.state))
    }

    #[getter]
    fn mesh(&self) -> Mesh {
        Mesh {
            inner: self.mesh.clone(),
        }
    }

    /// Nodal values of `η = n + α`.
    #[getter]
    fn eta(&self) -> Vec<f64> {
        self.state.eta_nodal()
    }

    #[getter]
    fn c(&self) -> Vec<f64> {
        self.state.c.clone()
    }

    #[getter]
    fn pressure(&self) -> Vec<f64> {
        self.state.pi.clone()
    }

    #[getter]
    fn velocity(&self) -> PyResult<Vec<(f64, f64)>> {
        Ok(self
            .snapshot()?
            .velocity
            .iter()
            .map(|v| (v[0], v[1]))
            .collect())
    }

    #[getter]
    fn sigma(&self) -> PyResult<Vec<(f64, f64)>> {
        Ok(self
            .snapshot()?
            .sigma
            .iter()
            .map(|v| (v[0], v[1]))
            .collect())
    }

    /// The effective configuration as TOML.
    fn config_toml(&self) -> PyResult<String> {
        self.cfg.to_toml().map_err(to_py)
    }

    fn write_vtk(&self, path: PathBuf) -> PyResult<()> {
        io::write_vtk(&self.snapshot()?, &path).map_err(to_py)
    }
}

/// Manufactured-solution study; returns the error report as a dict.
#[pyfunction]
#[pyo3(signature = (mesh_sizes, dt = 2e-4, t_final = 0.01, init_mode = "elliptic", quadrature_degree = 8))]
fn convergence_study<'py>(
    py: Python<'py>,
    mesh_sizes: Vec<usize>,
    dt: f64,
    t_final: f64,
    init_mode: &str,
    quadrature_degree: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = StudyConfig {
        dt,
        t_final,
        init_mode: parse(init_mode)?,
        quadrature_degree,
    };
    let (report, _) = manufactured::convergence_study(&mesh_sizes, &cfg).map_err(to_py)?;
    let json =
        serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (json,))
}

/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`; `None` where undefined.
#[pyfunction]
fn observed_orders(errors: Vec<f64>, h: Vec<f64>) -> Vec<Option<f64>> {
    manufactured::observed_orders(&errors, &h)
}

/// Exact manufactured field: `eta`, `c`, `pi` give a float; `sigma`, `u`
/// give a pair.
#[pyfunction]
fn eval_exact<'py>(
    py: Python<'py>,
    which: &str,
    x: f64,
    y: f64,
    t: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let ex = ExactSolution::default();
    let p = [x, y];
    let pair = |v: [f64; 2]| (v[0], v[1]).into_pyobject(py).map(|b| b.into_any());
    match which {
        "eta" => Ok(ex.eta(p, t).into_pyobject(py)?.into_any()),
        "c" => Ok(ex.c(p, t).into_pyobject(py)?.into_any()),
        "pi" => Ok(ex.pi(p, t).into_pyobject(py)?.into_any()),
        "sigma" => pair(ex.sigma(p, t)),
        "u" => pair(ex.u(p, t)),
        other => Err(PyValueError::new_err(format!(
            "unknown field `{other}` (eta, c, sigma, u, pi)"
        ))),
    }
}

/// Manufactured forcing: `n`, `c` give a float; `sigma`, `u` give a pair.
#[pyfunction]
fn eval_forcing<'py>(
    py: Python<'py>,
    which: &str,
    x: f64,
    y: f64,
    t: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let ex = ExactSolution::default();
    let p = [x, y];
    let pair = |v: [f64; 2]| (v[0], v[1]).into_pyobject(py).map(|b| b.into_any());
    match which {
        "n" => Ok(ex.g_n(p, t).into_pyobject(py)?.into_any()),
        "c" => Ok(ex.g_c(p, t).into_pyobject(py)?.into_any()),
        "sigma" => pair(ex.g_sigma(p, t)),
        "u" => pair(ex.g_u(p, t)),
        other => Err(PyValueError::new_err(format!(
            "unknown equation `{other}` (n, c, sigma, u)"
        ))),
    }
}

type Rule = (Vec<(f64, f64, f64)>, Vec<f64>);

/// Barycentric points and weights (summing to one) of the rule exact to
/// `degree`.
#[pyfunction]
fn triangle_rule(degree: usize) -> PyResult<Rule> {
    let r = quadrature::triangle_rule(degree).map_err(to_py)?;
    Ok((
        r.points.iter().map(|p| (p[0], p[1], p[2])).collect(),
        r.weights,
    ))
}

/// The invariant suite: `(name, passed, value, tolerance)` per check.
#[pyfunction]
fn check() -> PyResult<Vec<(String, bool, f64, f64)>> {
    Ok(io::check::run_suite()
        .map_err(to_py)?
        .into_iter()
        .map(|c| (c.name, c.passed, c.value, c.tolerance))
        .collect())
}

#[pymodule]
fn chemoflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_class::<ModelParams>()?;
    m.add_class::<Simulation>()?;
    m.add_function(wrap_pyfunction!(convergence_study, m)?)?;
    m.add_function(wrap_pyfunction!(observed_orders, m)?)?;
    m.add_function(wrap_pyfunction!(eval_exact, m)?)?;
    m.add_function(wrap_pyfunction!(eval_forcing, m)?)?;
    m.add_function(wrap_pyfunction!(triangle_rule, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add(
        "VARIABLES",
        Variable::ALL.iter().map(|v| v.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
