//! The linear, semi-coupled time integrator.
//!
//! Each step solves, in order:
//!
//! * (a) the cell-density system for the zero-mean `n` (mean multiplier);
//! * (b) the `σ = ∇c` system (normal trace pinned);
//! * (c) the chemical system for `c`;
//! * (d–e) the velocity–pressure saddle system (Dirichlet velocity, mean-free
//!   pressure).
//!
//! All couplings use level `m − 1` data, so the four solves are independent
//! and run concurrently; the results are identical to sequential execution.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    eliminate_dofs, solve_mean_constrained, Assembler, FieldFn, LinearSystem, MeanKernel,
    VectorFieldFn,
};
use crate::mesh::Mesh;
use crate::spaces::{build_layout, DofLayout, SpaceKind};
use crate::sparse::{norm2, LuFactorization, SolveReport, SparseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub chi: f64,
    pub d_n: f64,
    pub d_c: f64,
    pub d_u: f64,
    pub rho: f64,
    pub gamma: f64,
    /// Constant gradient of the gravitational potential.
    pub grad_phi: [f64; 2],
}

impl ModelParams {
    /// Every coefficient 1 and no gravity.
    pub fn unit() -> Self {
        Self {
            chi: 1.0,
            d_n: 1.0,
            d_c: 1.0,
            d_u: 1.0,
            rho: 1.0,
            gamma: 1.0,
            grad_phi: [0.0, 0.0],
        }
    }

    /// Parameters of the bacteria-in-a-drop experiment (`φ = −1000 y`).
    pub fn drop_experiment() -> Self {
        Self {
            chi: 8.0,
            d_n: 1.0,
            d_c: 5.0,
            d_u: 10.0,
            rho: 1.0,
            gamma: 8.0,
            grad_phi: [0.0, -1000.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("chi", self.chi),
            ("d_n", self.d_n),
            ("d_c", self.d_c),
            ("d_u", self.d_u),
            ("rho", self.rho),
            ("gamma", self.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("params.{name}"),
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if !self.grad_phi.iter().all(|v| v.is_finite()) {
            return Err(Error::config("params.grad_phi", "must be finite"));
        }
        Ok(())
    }
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Grid with `T / Δt` required to be an integer within `1e-9`.
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::GridMismatch(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(Error::GridMismatch(format!(
                "final time must be non-negative, got {t_final}"
            )));
        }
        let ratio = t_final / dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "final time {t_final} is not a multiple of the time step {dt}"
            )));
        }
        Ok(Self {
            dt,
            n_steps: n as usize,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.dt * m as f64
    }

    /// Index of the grid level equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let r = t / self.dt;
        let m = r.round();
        ((r - m).abs() <= 1e-9 * r.abs().max(1.0) && m >= 0.0 && m as usize <= self.n_steps)
            .then_some(m as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Elliptic projections for `n`, `c`, `σ` and the Stokes projection for `u`.
    Elliptic,
    /// Vertex interpolation with zero bubbles.
    Nodal,
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::Elliptic => "elliptic",
            InitMode::Nodal => "nodal",
        })
    }
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elliptic" => Ok(InitMode::Elliptic),
            "nodal" => Ok(InitMode::Nodal),
            other => Err(Error::config(
                "init_mode",
                format!("expected `elliptic` or `nodal`, got `{other}`"),
            )),
        }
    }
}

/// Fourth-order central difference step for default derivatives.
const FD_STEP: f64 = 1e-4;

fn fd_partial(f: &dyn Fn([f64; 2]) -> f64, x: [f64; 2], dir: usize) -> f64 {
    let at = |s: f64| {
        let mut p = x;
        p[dir] += s * FD_STEP;
        f(p)
    };
    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * FD_STEP)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: &dyn Fn([f64; 2]) -> f64, x: [f64; 2]) -> [f64; 2] {
    [fd_partial(f, x, 0), fd_partial(f, x, 1)]
}

/// Central-difference Jacobian `J[k][j] = ∂_j f_k`.
pub fn fd_jacobian(f: &dyn Fn([f64; 2]) -> [f64; 2], x: [f64; 2]) -> [[f64; 2]; 2] {
    let mut j = [[0.0; 2]; 2];
    for (k, row) in j.iter_mut().enumerate() {
        let fk = |p: [f64; 2]| f(p)[k];
        *row = fd_gradient(&fk, x);
    }
    j
}

/// Analytic initial fields. Derivatives default to central differences.
pub trait InitialData: Sync {
    fn eta(&self, x: [f64; 2]) -> f64;
    fn c(&self, x: [f64; 2]) -> f64;
    fn u(&self, x: [f64; 2]) -> [f64; 2];

    fn grad_eta(&self, x: [f64; 2]) -> [f64; 2] {
        fd_gradient(&|p| self.eta(p), x)
    }

    fn grad_c(&self, x: [f64; 2]) -> [f64; 2] {
        fd_gradient(&|p| self.c(p), x)
    }

    fn sigma(&self, x: [f64; 2]) -> [f64; 2] {
        self.grad_c(x)
    }

    fn jac_sigma(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        fd_jacobian(&|p| self.sigma(p), x)
    }

    fn jac_u(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        fd_jacobian(&|p| self.u(p), x)
    }

    /// Pressure paired with `u` in the Stokes projection; zero when absent.
    fn pressure(&self, _x: [f64; 2]) -> Option<f64> {
        None
    }
}

/// Source terms added to the right-hand sides, evaluated at the new level.
pub trait Forcing: Sync {
    fn g_n(&self, x: [f64; 2], t: f64) -> f64;
    fn g_c(&self, x: [f64; 2], t: f64) -> f64;
    fn g_u(&self, x: [f64; 2], t: f64) -> [f64; 2];
}

/// Discrete unknowns at one time level. `η_h = n + alpha` is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub m: usize,
    pub t: f64,
    /// Mean of `η_h`. Constant unless a cell-density source is applied.
    pub alpha: f64,
    pub n: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub pi: Vec<f64>,
}

impl State {
    /// Cell density nodal values `n + α`.
    pub fn eta_nodal(&self) -> Vec<f64> {
        self.n.iter().map(|v| v + self.alpha).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Layouts {
    pub n: DofLayout,
    pub c: DofLayout,
    pub sigma: DofLayout,
    pub u: DofLayout,
    pub pi: DofLayout,
}

impl Layouts {
    pub fn new(mesh: &Mesh) -> Self {
        Self {
            n: build_layout(mesh, SpaceKind::ScalarP1).with_mean_constraint(true),
            c: build_layout(mesh, SpaceKind::ScalarP1),
            sigma: build_layout(mesh, SpaceKind::VectorP1Sigma),
            u: build_layout(mesh, SpaceKind::VelocityMini),
            pi: build_layout(mesh, SpaceKind::PressureP1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReports {
    pub n: SolveReport,
    pub sigma: SolveReport,
    pub c: SolveReport,
    pub stokes: SolveReport,
}

impl StepReports {
    pub fn all(&self) -> [(&'static str, &SolveReport); 4] {
        [
            ("n", &self.n),
            ("sigma", &self.sigma),
            ("c", &self.c),
            ("stokes", &self.stokes),
        ]
    }

    pub fn max_relative_residual(&self) -> f64 {
        self.all()
            .iter()
            .map(|(_, r)| r.relative_residual())
            .fold(0.0, f64::max)
    }

    pub fn within_tolerance(&self) -> bool {
        self.all().iter().all(|(_, r)| r.within_tolerance())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRange {
    pub min: f64,
    pub max: f64,
}

impl FieldRange {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        values.fold(
            FieldRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, v| FieldRange {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }
}

/// Per-level record emitted by [`Scheme::run`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub m: usize,
    pub t: f64,
    /// `∫ η_h`.
    pub mass: f64,
    pub n_integral: f64,
    pub pi_integral: f64,
    /// `max_j |(π̄_j, ∇·u_h)|`.
    pub div_residual: f64,
    pub eta: FieldRange,
    pub c: FieldRange,
    pub sigma_norm: FieldRange,
    pub u_norm: FieldRange,
    pub pi: FieldRange,
    /// Absent for the initial level.
    pub reports: Option<StepReports>,
}

/// Pre-assembled operators for one mesh, parameter set and time step.
pub struct Scheme<'m> {
    mesh: &'m Mesh,
    asm: Assembler<'m>,
    params: ModelParams,
    dt: f64,
    layouts: Layouts,
    mass_p1: SparseMatrix,
    stiff_p1: SparseMatrix,
    mean_w: Vec<f64>,
    mass_sigma: SparseMatrix,
    sigma_lu: LuFactorization,
    mass_u: SparseMatrix,
    stiff_u: SparseMatrix,
    coupling: SparseMatrix,
    coupling_t: SparseMatrix,
}

impl<'m> Scheme<'m> {
    pub fn new(mesh: &'m Mesh, params: ModelParams, dt: f64) -> Result<Self> {
        Self::with_quadrature(mesh, params, dt, 8)
    }

    pub fn with_quadrature(
        mesh: &'m Mesh,
        params: ModelParams,
        dt: f64,
        degree: usize,
    ) -> Result<Self> {
        params.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let asm = Assembler::with_degree(mesh, degree)?;
        let layouts = Layouts::new(mesh);
        let mass_p1 = asm.assemble_mass(&layouts.c)?.matrix;
        let stiff_p1 = asm.assemble_stiffness(&layouts.c, 1.0)?.matrix;
        let mean_w = asm.mean_weights(&layouts.n)?;
        let mass_sigma = asm.assemble_mass(&layouts.sigma)?.matrix;
        let divrot = asm.assemble_divrot(&layouts.sigma, params.d_c)?.matrix;
        let sigma_matrix = SparseMatrix::combine(&[(1.0 / dt, &mass_sigma), (1.0, &divrot)])?;
        let sigma_sys = eliminate_dofs(
            &LinearSystem {
                matrix: sigma_matrix,
                rhs: vec![0.0; layouts.sigma.n_dofs],
            },
            &layouts.sigma.constrained_dofs,
        )?;
        let sigma_lu = LuFactorization::new(&sigma_sys.matrix, "sigma")?;
        let mass_u = asm.assemble_mass(&layouts.u)?.matrix;
        let stiff_u = asm.assemble_stiffness(&layouts.u, 1.0)?.matrix;
        let coupling = asm
            .assemble_pressure_coupling(&layouts.u, &layouts.pi, params.rho)?
            .matrix;
        let coupling_t = coupling.transpose();
        Ok(Self {
            mesh,
            asm,
            params,
            dt,
            layouts,
            mass_p1,
            stiff_p1,
            mean_w,
            mass_sigma,
            sigma_lu,
            mass_u,
            stiff_u,
            coupling,
            coupling_t,
        })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn assembler(&self) -> &Assembler<'m> {
        &self.asm
    }

    pub fn layouts(&self) -> &Layouts {
        &self.layouts
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `G[i, j] = (π̄_j, ∇·ū_i)`.
    pub fn pressure_coupling(&self) -> &SparseMatrix {
        &self.coupling
    }

    /// Velocity–pressure matrix with velocity block `a_u`, off-diagonal blocks
    /// `−s G` and `−s Gᵀ` and Dirichlet rows eliminated. The pressure mean
    /// constraint is imposed by the solver.
    fn saddle_matrix(&self, a_u: &SparseMatrix, s: f64) -> Result<SparseMatrix> {
        let lu = &self.layouts.u;
        let nu = lu.n_dofs;
        let dim = nu + self.layouts.pi.n_dofs;
        let mut entries: Vec<(usize, usize, f64)> = a_u
            .triplets()
            .into_iter()
            .filter(|&(i, j, _)| !lu.is_constrained(i) && !lu.is_constrained(j))
            .collect();
        entries.extend(lu.constrained_dofs.iter().map(|&d| (d, d, 1.0)));
        for (i, j, v) in self.coupling.triplets() {
            if !lu.is_constrained(i) {
                entries.push((i, nu + j, -s * v));
                entries.push((nu + j, i, -s * v));
            }
        }
        SparseMatrix::from_triplets(dim, dim, &entries)
    }

    fn solve_saddle(
        &self,
        a_u: &SparseMatrix,
        s: f64,
        mut rhs_u: Vec<f64>,
        rhs_pi: Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>, SolveReport)> {
        let nu = self.layouts.u.n_dofs;
        self.layouts.u.apply_constraint_values(&mut rhs_u);
        let matrix = self.saddle_matrix(a_u, s)?;
        let mut rhs = rhs_u;
        rhs.extend(rhs_pi);
        let (mut x, _, report) = solve_mean_constrained(
            &matrix,
            &rhs,
            nu,
            &self.mean_w,
            MeanKernel::Constant,
            "stokes",
        )?;
        let pi = x.split_off(nu);
        self.layouts.u.apply_constraint_values(&mut x);
        Ok((x, pi, report))
    }

    fn solve_mean_free(
        &self,
        matrix: &SparseMatrix,
        rhs: &[f64],
        kernel: MeanKernel,
        what: &str,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let (x, _, report) = solve_mean_constrained(matrix, rhs, 0, &self.mean_w, kernel, what)?;
        Ok((x, report))
    }

    /// Discrete initial state from analytic data.
    pub fn init_state(&self, data: &dyn InitialData, mode: InitMode) -> Result<State> {
        let area = self.mesh.domain_area();
        let alpha = self.asm.integrate_analytic(&|x| data.eta(x)) / area;
        let l = &self.layouts;
        let mesh = self.mesh;
        let (n, c, sigma, u, pi) = match mode {
            InitMode::Nodal => {
                let mut n = l.n.interpolate_scalar(mesh, |x| data.eta(x));
                let shift = self.asm.integral(&l.n, &n)? / area;
                n.iter_mut().for_each(|v| *v -= shift);
                let c = l.c.interpolate_scalar(mesh, |x| data.c(x));
                let sigma = l.sigma.interpolate_vector(mesh, |x| data.sigma(x));
                let u = l.u.interpolate_vector(mesh, |x| data.u(x));
                let mut pi =
                    l.pi.interpolate_scalar(mesh, |x| data.pressure(x).unwrap_or(0.0));
                let shift = self.asm.integral(&l.pi, &pi)? / area;
                pi.iter_mut().for_each(|v| *v -= shift);
                (n, c, sigma, u, pi)
            }
            InitMode::Elliptic => {
                let rhs_n = self
                    .asm
                    .assemble_gradient_load(&l.n, &|x| data.grad_eta(x))?;
                let (n, _) = self.solve_mean_free(
                    &self.stiff_p1,
                    &rhs_n,
                    MeanKernel::Constant,
                    "n projection",
                )?;

                let k_plus_m = self.stiff_p1.add(1.0, &self.mass_p1, 1.0)?;
                let mut rhs_c = self.asm.assemble_gradient_load(&l.c, &|x| data.grad_c(x))?;
                let load_c = self
                    .asm
                    .assemble_scalar_load(&l.c, &FieldFn::Analytic(&|x| data.c(x)))?;
                rhs_c.iter_mut().zip(&load_c).for_each(|(a, b)| *a += b);
                let (c, _) = LuFactorization::new(&k_plus_m, "c projection")?.solve(&rhs_c)?;

                let divrot = self.asm.assemble_divrot(&l.sigma, 1.0)?.matrix;
                let ps = divrot.add(1.0, &self.mass_sigma, 1.0)?;
                let mut rhs_s = self.asm.assemble_divrot_load(
                    &l.sigma,
                    &|x| {
                        let j = data.jac_sigma(x);
                        j[0][0] + j[1][1]
                    },
                    &|x| {
                        let j = data.jac_sigma(x);
                        j[1][0] - j[0][1]
                    },
                )?;
                let load_s = self
                    .asm
                    .assemble_vector_load(&l.sigma, &VectorFieldFn::Analytic(&|x| data.sigma(x)))?;
                rhs_s.iter_mut().zip(&load_s).for_each(|(a, b)| *a += b);
                let sys = eliminate_dofs(
                    &LinearSystem {
                        matrix: ps,
                        rhs: rhs_s,
                    },
                    &l.sigma.constrained_dofs,
                )?;
                let (sigma, _) =
                    LuFactorization::new(&sys.matrix, "sigma projection")?.solve(&sys.rhs)?;

                let d_u = self.params.d_u;
                let a_u = self.stiff_u.scaled(d_u);
                let mut rhs_u = self.asm.assemble_jacobian_load(&l.u, &|x| data.jac_u(x))?;
                rhs_u.iter_mut().for_each(|v| *v *= d_u);
                if data.pressure([0.0, 0.0]).is_some() {
                    let p0 = |x: [f64; 2]| data.pressure(x).unwrap_or(0.0);
                    let load_p = self
                        .asm
                        .assemble_divergence_load(&l.u, &FieldFn::Analytic(&p0))?;
                    rhs_u.iter_mut().zip(&load_p).for_each(|(a, b)| *a -= b);
                }
                let div_u0 = |x: [f64; 2]| {
                    let j = data.jac_u(x);
                    j[0][0] + j[1][1]
                };
                let rhs_pi: Vec<f64> = self
                    .asm
                    .assemble_scalar_load(&l.pi, &FieldFn::Analytic(&div_u0))?
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                let (u, pi, _) = self.solve_saddle(&a_u, 1.0, rhs_u, rhs_pi)?;
                (n, c, sigma, u, pi)
            }
        };
        Ok(State {
            m: 0,
            t: 0.0,
            alpha,
            n,
            c,
            sigma,
            u,
            pi,
        })
    }

    /// Advance one level.
    pub fn step(
        &self,
        prev: &State,
        forcing: Option<&dyn Forcing>,
    ) -> Result<(State, StepReports)> {
        self.check_state(prev)?;
        let l = &self.layouts;
        let p = &self.params;
        let dt = self.dt;
        let t = prev.t + dt;
        let alpha = prev.alpha;
        let n_prev = FieldFn::Discrete {
            layout: &l.n,
            coeffs: &prev.n,
        };
        let c_prev = FieldFn::Discrete {
            layout: &l.c,
            coeffs: &prev.c,
        };
        let sigma_prev = VectorFieldFn::Discrete {
            layout: &l.sigma,
            coeffs: &prev.sigma,
        };
        let u_prev = VectorFieldFn::Discrete {
            layout: &l.u,
            coeffs: &prev.u,
        };

        let transport = self.asm.assemble_skew_a(&l.c, &u_prev)?.matrix;

        let solve_n = || -> Result<(Vec<f64>, SolveReport)> {
            let matrix = SparseMatrix::combine(&[
                (1.0 / dt, &self.mass_p1),
                (p.d_n, &self.stiff_p1),
                (1.0, &transport),
            ])?;
            let mut rhs = self.mass_p1.matvec(&prev.n);
            rhs.iter_mut().for_each(|v| *v /= dt);
            let chemo = self
                .asm
                .assemble_chemo_rhs(&l.n, &n_prev, &sigma_prev, p.chi, alpha)?;
            add_into(&mut rhs, &chemo);
            if let Some(f) = forcing {
                let g = |x: [f64; 2]| f.g_n(x, t);
                add_into(
                    &mut rhs,
                    &self
                        .asm
                        .assemble_scalar_load(&l.n, &FieldFn::Analytic(&g))?,
                );
            }
            self.solve_mean_free(&matrix, &rhs, MeanKernel::Regular, "n")
        };

        let solve_sigma = || -> Result<(Vec<f64>, SolveReport)> {
            let mut rhs = self.mass_sigma.matvec(&prev.sigma);
            rhs.iter_mut().for_each(|v| *v /= dt);
            let coupling = self.asm.assemble_sigma_rhs(
                &l.sigma,
                &u_prev,
                &sigma_prev,
                &n_prev,
                &c_prev,
                p.gamma,
                alpha,
            )?;
            add_into(&mut rhs, &coupling);
            if let Some(f) = forcing {
                let g = |x: [f64; 2]| -f.g_c(x, t);
                let load = self
                    .asm
                    .assemble_divergence_load(&l.sigma, &FieldFn::Analytic(&g))?;
                add_into(&mut rhs, &load);
            }
            l.sigma.apply_constraint_values(&mut rhs);
            let (mut x, report) = self.sigma_lu.solve(&rhs)?;
            l.sigma.apply_constraint_values(&mut x);
            Ok((x, report))
        };

        let solve_c = || -> Result<(Vec<f64>, SolveReport)> {
            let matrix = SparseMatrix::combine(&[
                (1.0 / dt, &self.mass_p1),
                (p.d_c, &self.stiff_p1),
                (1.0, &transport),
            ])?;
            let mut rhs = self.mass_p1.matvec(&prev.c);
            rhs.iter_mut().for_each(|v| *v /= dt);
            let cons = self
                .asm
                .assemble_consumption_rhs(&l.c, &n_prev, &c_prev, p.gamma, alpha)?;
            add_into(&mut rhs, &cons);
            if let Some(f) = forcing {
                let g = |x: [f64; 2]| f.g_c(x, t);
                add_into(
                    &mut rhs,
                    &self
                        .asm
                        .assemble_scalar_load(&l.c, &FieldFn::Analytic(&g))?,
                );
            }
            LuFactorization::new(&matrix, "c")?.solve(&rhs)
        };

        let solve_stokes = || -> Result<(Vec<f64>, Vec<f64>, SolveReport)> {
            let b = self.asm.assemble_skew_b(&l.u, &u_prev)?.matrix;
            let a_u = SparseMatrix::combine(&[
                (1.0 / dt, &self.mass_u),
                (p.d_u / p.rho, &self.stiff_u),
                (1.0, &b),
            ])?;
            let mut rhs = self.mass_u.matvec(&prev.u);
            rhs.iter_mut().for_each(|v| *v /= dt);
            let buoy = self.asm.assemble_buoyancy_rhs(
                &l.u,
                &n_prev,
                &VectorFieldFn::Constant(p.grad_phi),
                p.rho,
                alpha,
            )?;
            add_into(&mut rhs, &buoy);
            if let Some(f) = forcing {
                let g = |x: [f64; 2]| f.g_u(x, t);
                let load = self
                    .asm
                    .assemble_vector_load(&l.u, &VectorFieldFn::Analytic(&g))?;
                add_into(&mut rhs, &load);
            }
            self.solve_saddle(&a_u, 1.0 / p.rho, rhs, vec![0.0; l.pi.n_dofs])
        };

        let (rn, rs, rc, ru) = std::thread::scope(|s| {
            let hn = s.spawn(solve_n);
            let hs = s.spawn(solve_sigma);
            let hc = s.spawn(solve_c);
            let ru = solve_stokes();
            (join(hn), join(hs), join(hc), ru)
        });
        let (n, rep_n) = rn?;
        let (sigma, rep_s) = rs?;
        let (c, rep_c) = rc?;
        let (u, pi, rep_u) = ru?;

        let alpha = match forcing {
            Some(f) => {
                let area = self.mesh.domain_area();
                alpha + dt * self.asm.integrate_analytic(&|x| f.g_n(x, t)) / area
            }
            None => alpha,
        };
        Ok((
            State {
                m: prev.m + 1,
                t,
                alpha,
                n,
                c,
                sigma,
                u,
                pi,
            },
            StepReports {
                n: rep_n,
                sigma: rep_s,
                c: rep_c,
                stokes: rep_u,
            },
        ))
    }

    fn check_state(&self, s: &State) -> Result<()> {
        let l = &self.layouts;
        for (len, layout) in [
            (s.n.len(), &l.n),
            (s.c.len(), &l.c),
            (s.sigma.len(), &l.sigma),
            (s.u.len(), &l.u),
            (s.pi.len(), &l.pi),
        ] {
            if len != layout.n_dofs {
                return Err(Error::DimensionMismatch {
                    expected: layout.n_dofs,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// `∫ (n_h + α)`, exact for P1.
    pub fn mass_of_eta(&self, state: &State) -> f64 {
        let n_int: f64 = self.mean_w.iter().zip(&state.n).map(|(w, v)| w * v).sum();
        n_int + state.alpha * self.mesh.domain_area()
    }

    /// `(π̄_j, ∇·u_h)` for every pressure basis function.
    pub fn divergence_residuals(&self, u: &[f64]) -> Vec<f64> {
        self.coupling_t.matvec(u)
    }

    pub fn diagnostics(&self, state: &State, reports: Option<StepReports>) -> StepDiagnostics {
        let l = &self.layouts;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let n_integral = dot(&self.mean_w, &state.n);
        let pi_integral = dot(&self.mean_w, &state.pi);
        let div_residual = self
            .divergence_residuals(&state.u)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let nodal_norm = |layout: &DofLayout, coeffs: &[f64]| {
            let x = layout.nodal_values(coeffs, 0);
            let y = layout.nodal_values(coeffs, 1);
            FieldRange::of(x.iter().zip(y).map(|(a, b)| a.hypot(*b)))
        };
        StepDiagnostics {
            m: state.m,
            t: state.t,
            mass: self.mass_of_eta(state),
            n_integral,
            pi_integral,
            div_residual,
            eta: FieldRange::of(state.n.iter().map(|v| v + state.alpha)),
            c: FieldRange::of(state.c.iter().copied()),
            sigma_norm: nodal_norm(&l.sigma, &state.sigma),
            u_norm: nodal_norm(&l.u, &state.u),
            pi: FieldRange::of(state.pi.iter().copied()),
            reports,
        }
    }

    /// Advance `n_steps` levels from `init`, calling `observe` on every level
    /// including the initial one. Returns the final state.
    pub fn run<F>(
        &self,
        init: State,
        n_steps: usize,
        forcing: Option<&dyn Forcing>,
        mut observe: F,
    ) -> Result<State>
    where
        F: FnMut(&State, &StepDiagnostics) -> Result<()>,
    {
        observe(&init, &self.diagnostics(&init, None))?;
        let mut state = init;
        for _ in 0..n_steps {
            let (next, reports) = self.step(&state, forcing)?;
            observe(&next, &self.diagnostics(&next, Some(reports)))?;
            state = next;
        }
        Ok(state)
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn join<T>(h: std::thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    h.join().unwrap_or_else(|_| {
        Err(Error::Solver {
            what: "step".into(),
            detail: "subsystem worker panicked".into(),
        })
    })
}

/// Relative residual of a computed solution; exposed for checks.
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    norm2(&r) / norm2(b).max(f64::MIN_POSITIVE)
}
