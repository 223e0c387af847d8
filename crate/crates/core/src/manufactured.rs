//! Manufactured-solution harness on the unit square.
//!
//! With `E = e^{−t}` and `k = 2π` the exact fields are
//!
//! ```text
//! η = E (cos kx + cos ky + 3)
//! c = E (sin ky + cos kx − k y + 9)
//! σ = ∇c = k E (−sin kx, cos ky − 1)
//! u = E (sin ky (cos kx − 1), sin kx (1 − cos ky))
//! π = E (cos kx + sin ky)
//! ```
//!
//! They do not solve the homogeneous system, so the residuals
//!
//! ```text
//! g_n = η_t + u·∇η − D_n Δη + χ ∇·(η∇c)
//! g_c = c_t + u·∇c − D_c Δc + γ η c
//! g_u = u_t + (u·∇)u − (D_u/ρ) Δu + (1/ρ)∇π − (1/ρ) η ∇φ
//! ```
//!
//! are added as sources. The `σ` equation receives `−(g_c, ∇·σ̄)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::mesh::build_rect_mesh;
use crate::quadrature::triangle_rule;
use crate::scheme::{
    Forcing, InitMode, InitialData, ModelParams, Scheme, State, StepDiagnostics, TimeGrid,
};
use crate::spaces::DofLayout;
use crate::{Error, Result};

const K: f64 = 2.0 * PI;

/// Closed-form exact solution together with the parameters its forcing uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    pub params: ModelParams,
}

impl Default for ExactSolution {
    fn default() -> Self {
        Self {
            params: ModelParams::unit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Eta,
    C,
    U1,
    U2,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::Eta, Variable::C, Variable::U1, Variable::U2];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Eta => "eta",
            Variable::C => "c",
            Variable::U1 => "u1",
            Variable::U2 => "u2",
        }
    }

    /// Whether the `l∞(H¹)` norm is reported.
    pub fn has_linf_h1(self) -> bool {
        matches!(self, Variable::U1 | Variable::U2)
    }
}

impl ExactSolution {
    pub fn new(params: ModelParams) -> Self {
        Self { params }
    }

    pub fn eta(&self, x: [f64; 2], t: f64) -> f64 {
        (-t).exp() * ((K * x[0]).cos() + (K * x[1]).cos() + 3.0)
    }

    pub fn grad_eta(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [-K * e * (K * x[0]).sin(), -K * e * (K * x[1]).sin()]
    }

    pub fn lap_eta(&self, x: [f64; 2], t: f64) -> f64 {
        -K * K * (-t).exp() * ((K * x[0]).cos() + (K * x[1]).cos())
    }

    pub fn c(&self, x: [f64; 2], t: f64) -> f64 {
        (-t).exp() * ((K * x[1]).sin() + (K * x[0]).cos() - K * x[1] + 9.0)
    }

    pub fn grad_c(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.sigma(x, t)
    }

    /// Hessian of `c`; it is diagonal.
    pub fn hess_c(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let e = (-t).exp();
        [
            [-K * K * e * (K * x[0]).cos(), 0.0],
            [0.0, -K * K * e * (K * x[1]).sin()],
        ]
    }

    pub fn lap_c(&self, x: [f64; 2], t: f64) -> f64 {
        let h = self.hess_c(x, t);
        h[0][0] + h[1][1]
    }

    pub fn sigma(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [-K * e * (K * x[0]).sin(), K * e * ((K * x[1]).cos() - 1.0)]
    }

    pub fn u(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        let (sx, cx) = (K * x[0]).sin_cos();
        let (sy, cy) = (K * x[1]).sin_cos();
        [e * sy * (cx - 1.0), e * sx * (1.0 - cy)]
    }

    /// `J[i][j] = ∂u_i/∂x_j`.
    pub fn jac_u(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let e = (-t).exp();
        let (sx, cx) = (K * x[0]).sin_cos();
        let (sy, cy) = (K * x[1]).sin_cos();
        [
            [-K * e * sy * sx, K * e * cy * (cx - 1.0)],
            [K * e * cx * (1.0 - cy), K * e * sx * sy],
        ]
    }

    pub fn lap_u(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        let (sx, cx) = (K * x[0]).sin_cos();
        let (sy, cy) = (K * x[1]).sin_cos();
        [
            -K * K * e * sy * (2.0 * cx - 1.0),
            K * K * e * sx * (2.0 * cy - 1.0),
        ]
    }

    pub fn div_u(&self, x: [f64; 2], t: f64) -> f64 {
        let j = self.jac_u(x, t);
        j[0][0] + j[1][1]
    }

    pub fn pi(&self, x: [f64; 2], t: f64) -> f64 {
        (-t).exp() * ((K * x[0]).cos() + (K * x[1]).sin())
    }

    pub fn grad_pi(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [-K * e * (K * x[0]).sin(), K * e * (K * x[1]).cos()]
    }

    /// Value and gradient of a scalar variable, or of one velocity component.
    pub fn value_and_gradient(&self, var: Variable, x: [f64; 2], t: f64) -> (f64, [f64; 2]) {
        match var {
            Variable::Eta => (self.eta(x, t), self.grad_eta(x, t)),
            Variable::C => (self.c(x, t), self.grad_c(x, t)),
            Variable::U1 => (self.u(x, t)[0], self.jac_u(x, t)[0]),
            Variable::U2 => (self.u(x, t)[1], self.jac_u(x, t)[1]),
        }
    }

    /// Cell-density residual.
    pub fn g_n(&self, x: [f64; 2], t: f64) -> f64 {
        let p = &self.params;
        let eta = self.eta(x, t);
        let ge = self.grad_eta(x, t);
        let s = self.sigma(x, t);
        let u = self.u(x, t);
        // all fields are e^{−t} times a spatial profile
        let eta_t = -eta;
        let div_flux = ge[0] * s[0] + ge[1] * s[1] + eta * self.lap_c(x, t);
        eta_t + u[0] * ge[0] + u[1] * ge[1] - p.d_n * self.lap_eta(x, t) + p.chi * div_flux
    }

    /// Chemical residual.
    pub fn g_c(&self, x: [f64; 2], t: f64) -> f64 {
        let p = &self.params;
        let c = self.c(x, t);
        let s = self.sigma(x, t);
        let u = self.u(x, t);
        -c + u[0] * s[0] + u[1] * s[1] - p.d_c * self.lap_c(x, t) + p.gamma * self.eta(x, t) * c
    }

    /// `∇g_c` in closed form.
    pub fn g_sigma(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let p = &self.params;
        let e = (-t).exp();
        let s = self.sigma(x, t);
        let u = self.u(x, t);
        let j = self.jac_u(x, t);
        let h = self.hess_c(x, t);
        let c = self.c(x, t);
        let eta = self.eta(x, t);
        let ge = self.grad_eta(x, t);
        // ∇Δc
        let grad_lap = [
            K * K * K * e * (K * x[0]).sin(),
            -K * K * K * e * (K * x[1]).cos(),
        ];
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let grad_us = j[0][i] * s[0] + j[1][i] * s[1] + h[i][0] * u[0] + h[i][1] * u[1];
            *o = -s[i] + grad_us - p.d_c * grad_lap[i] + p.gamma * (ge[i] * c + eta * s[i]);
        }
        out
    }

    /// Momentum residual.
    pub fn g_u(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let p = &self.params;
        let u = self.u(x, t);
        let j = self.jac_u(x, t);
        let lap = self.lap_u(x, t);
        let gp = self.grad_pi(x, t);
        let eta = self.eta(x, t);
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let conv = u[0] * j[i][0] + u[1] * j[i][1];
            *o =
                -u[i] + conv - p.d_u / p.rho * lap[i] + gp[i] / p.rho - eta * p.grad_phi[i] / p.rho;
        }
        out
    }
}

impl Forcing for ExactSolution {
    fn g_n(&self, x: [f64; 2], t: f64) -> f64 {
        ExactSolution::g_n(self, x, t)
    }

    fn g_c(&self, x: [f64; 2], t: f64) -> f64 {
        ExactSolution::g_c(self, x, t)
    }

    fn g_u(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        ExactSolution::g_u(self, x, t)
    }
}

impl InitialData for ExactSolution {
    fn eta(&self, x: [f64; 2]) -> f64 {
        ExactSolution::eta(self, x, 0.0)
    }

    fn c(&self, x: [f64; 2]) -> f64 {
        ExactSolution::c(self, x, 0.0)
    }

    fn u(&self, x: [f64; 2]) -> [f64; 2] {
        ExactSolution::u(self, x, 0.0)
    }

    fn grad_eta(&self, x: [f64; 2]) -> [f64; 2] {
        ExactSolution::grad_eta(self, x, 0.0)
    }

    fn grad_c(&self, x: [f64; 2]) -> [f64; 2] {
        ExactSolution::grad_c(self, x, 0.0)
    }

    fn sigma(&self, x: [f64; 2]) -> [f64; 2] {
        ExactSolution::sigma(self, x, 0.0)
    }

    fn jac_sigma(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        self.hess_c(x, 0.0)
    }

    fn jac_u(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        ExactSolution::jac_u(self, x, 0.0)
    }

    fn pressure(&self, x: [f64; 2]) -> Option<f64> {
        Some(self.pi(x, 0.0))
    }
}

/// Spatial `L²` and `H¹` errors of every variable at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelErrors {
    pub l2: [f64; 4],
    pub h1: [f64; 4],
}

/// Errors of `state` against the exact solution at `state.t`, integrated with
/// the scheme's quadrature rule.
pub fn level_errors(scheme: &Scheme<'_>, state: &State, exact: &ExactSolution) -> LevelErrors {
    let l = scheme.layouts();
    let asm = scheme.assembler();
    let rule = asm.rule();
    let t = state.t;
    let mut l2 = [0.0; 4];
    let mut semi = [0.0; 4];
    for (e, geom) in asm.geometries().iter().enumerate() {
        for (p, w) in rule.iter() {
            let x = geom.map(p);
            let wa = w * geom.area;
            let (nv, ng) = l.n.eval_scalar(&state.n, e, geom, p);
            let (cv, cg) = l.c.eval_scalar(&state.c, e, geom, p);
            let (uv, uj) = l.u.eval_vector(&state.u, e, geom, p);
            let discrete = [
                (nv + state.alpha, ng),
                (cv, cg),
                (uv[0], uj[0]),
                (uv[1], uj[1]),
            ];
            for (i, var) in Variable::ALL.iter().enumerate() {
                let (ev, eg) = exact.value_and_gradient(*var, x, t);
                let (dv, dg) = discrete[i];
                l2[i] += wa * (ev - dv).powi(2);
                semi[i] += wa * ((eg[0] - dg[0]).powi(2) + (eg[1] - dg[1]).powi(2));
            }
        }
    }
    let mut out = LevelErrors {
        l2: [0.0; 4],
        h1: [0.0; 4],
    };
    for i in 0..4 {
        out.l2[i] = l2[i].sqrt();
        out.h1[i] = (l2[i] + semi[i]).sqrt();
    }
    out
}

/// `L²` norm and `H¹` seminorm of `f − v_h` for a scalar discrete field
/// `v_h` (component `comp` of `coeffs`); `f` returns value and gradient.
pub fn scalar_error(
    asm: &Assembler<'_>,
    layout: &DofLayout,
    coeffs: &[f64],
    f: &dyn Fn([f64; 2]) -> (f64, [f64; 2]),
) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for (e, geom) in asm.geometries().iter().enumerate() {
        for (p, w) in asm.rule().iter() {
            let wa = w * geom.area;
            let (dv, dg) = layout.eval_scalar(coeffs, e, geom, p);
            let (ev, eg) = f(geom.map(p));
            l2 += wa * (ev - dv).powi(2);
            semi += wa * ((eg[0] - dg[0]).powi(2) + (eg[1] - dg[1]).powi(2));
        }
    }
    (l2.sqrt(), semi.sqrt())
}

/// Discrete-in-time norms accumulated over levels `m = 1..N`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeNorms {
    pub linf_l2: [f64; 4],
    pub l2_h1: [f64; 4],
    pub linf_h1: [f64; 4],
}

#[derive(Debug, Clone, Copy, Default)]
struct NormAccumulator {
    max_l2: [f64; 4],
    max_h1: [f64; 4],
    sum_h1_sq: [f64; 4],
    dt: f64,
}

impl NormAccumulator {
    fn push(&mut self, e: &LevelErrors) {
        for i in 0..4 {
            self.max_l2[i] = self.max_l2[i].max(e.l2[i]);
            self.max_h1[i] = self.max_h1[i].max(e.h1[i]);
            self.sum_h1_sq[i] += self.dt * e.h1[i] * e.h1[i];
        }
    }

    fn finish(&self) -> TimeNorms {
        let mut out = TimeNorms {
            linf_l2: self.max_l2,
            linf_h1: self.max_h1,
            l2_h1: [0.0; 4],
        };
        for i in 0..4 {
            out.l2_h1[i] = self.sum_h1_sq[i].sqrt();
        }
        out
    }
}

/// Settings of one manufactured run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub dt: f64,
    pub t_final: f64,
    pub init_mode: InitMode,
    pub quadrature_degree: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            t_final: 0.01,
            init_mode: InitMode::Elliptic,
            quadrature_degree: 8,
        }
    }
}

/// Result of one manufactured run on a `k × k` mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRun {
    pub k: usize,
    pub h: f64,
    pub norms: TimeNorms,
    pub max_div_residual: f64,
    pub max_relative_residual: f64,
}

/// Run the manufactured problem on a `k × k` mesh of the unit square.
/// `observe` sees every level.
pub fn run_manufactured<F>(k: usize, cfg: &StudyConfig, mut observe: F) -> Result<MeshRun>
where
    F: FnMut(&Scheme<'_>, &State, &StepDiagnostics) -> Result<()>,
{
    let grid = TimeGrid::new(cfg.dt, cfg.t_final)?;
    let mesh = build_rect_mesh(1.0, 1.0, k, k)?;
    let exact = ExactSolution::default();
    let scheme = Scheme::with_quadrature(&mesh, exact.params, cfg.dt, cfg.quadrature_degree)?;
    let init = scheme.init_state(&exact, cfg.init_mode)?;
    let mut acc = NormAccumulator {
        dt: cfg.dt,
        ..Default::default()
    };
    let mut max_div: f64 = 0.0;
    let mut max_res: f64 = 0.0;
    scheme.run(init, grid.n_steps, Some(&exact), |state, diag| {
        if state.m > 0 {
            acc.push(&level_errors(&scheme, state, &exact));
            max_div = max_div.max(diag.div_residual);
            if let Some(r) = &diag.reports {
                max_res = max_res.max(r.max_relative_residual());
            }
        }
        observe(&scheme, state, diag)
    })?;
    Ok(MeshRun {
        k,
        h: 1.0 / k as f64,
        norms: acc.finish(),
        max_div_residual: max_div,
        max_relative_residual: max_res,
    })
}

/// Errors of one variable over the mesh sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableErrors {
    pub variable: Variable,
    pub linf_l2: Vec<f64>,
    pub l2_h1: Vec<f64>,
    pub linf_h1: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mesh_sizes: Vec<usize>,
    pub h: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    pub init_mode: InitMode,
    pub variables: Vec<VariableErrors>,
}

impl ErrorReport {
    pub fn variable(&self, var: Variable) -> Option<&VariableErrors> {
        self.variables.iter().find(|v| v.variable == var)
    }

    pub fn from_runs(runs: &[MeshRun], cfg: &StudyConfig) -> Self {
        let variables = Variable::ALL
            .iter()
            .enumerate()
            .map(|(i, &var)| VariableErrors {
                variable: var,
                linf_l2: runs.iter().map(|r| r.norms.linf_l2[i]).collect(),
                l2_h1: runs.iter().map(|r| r.norms.l2_h1[i]).collect(),
                linf_h1: var
                    .has_linf_h1()
                    .then(|| runs.iter().map(|r| r.norms.linf_h1[i]).collect()),
            })
            .collect();
        Self {
            mesh_sizes: runs.iter().map(|r| r.k).collect(),
            h: runs.iter().map(|r| r.h).collect(),
            dt: cfg.dt,
            t_final: cfg.t_final,
            init_mode: cfg.init_mode,
            variables,
        }
    }
}

/// `log(e_coarse / e_fine) / log(h_coarse / h_fine)` for consecutive pairs;
/// `None` where an error is not strictly positive.
pub fn observed_orders(errors: &[f64], h: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, h)| {
            (e[0] > 0.0 && e[1] > 0.0 && h[0] > h[1])
                .then(|| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        })
        .collect()
}

/// Manufactured runs for every mesh size, executed concurrently.
pub fn convergence_study(
    mesh_sizes: &[usize],
    cfg: &StudyConfig,
) -> Result<(ErrorReport, Vec<MeshRun>)> {
    if mesh_sizes.is_empty() {
        return Err(Error::InvalidArgument("no mesh sizes given".into()));
    }
    if mesh_sizes.windows(2).any(|w| w[0] >= w[1]) || mesh_sizes[0] == 0 {
        return Err(Error::InvalidArgument(
            "mesh sizes must be positive and strictly increasing".into(),
        ));
    }
    triangle_rule(cfg.quadrature_degree)?;
    let runs: Vec<Result<MeshRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = mesh_sizes
            .iter()
            .map(|&k| s.spawn(move || run_manufactured(k, cfg, |_, _, _| Ok(()))))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| {
                    Err(Error::Solver {
                        what: "convergence study".into(),
                        detail: "worker panicked".into(),
                    })
                })
            })
            .collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((ErrorReport::from_runs(&runs, cfg), runs))
}
