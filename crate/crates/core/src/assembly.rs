//! Bilinear/trilinear forms and right-hand sides of the time-stepping scheme.
//!
//! Local matrices are computed per triangle and scattered as triplets; the
//! CSR conversion sums duplicates, so the result does not depend on the order
//! elements are visited in beyond floating-point reassociation.
//!
//! Vector layouts are treated component-wise: mass, stiffness and transport
//! forms are block diagonal with one identical scalar block per component.

use crate::mesh::{ElementGeometry, Mesh};
use crate::quadrature::{triangle_rule, TriangleRule};
use crate::spaces::{eval_basis_into, BasisValue, DofLayout, SpaceKind};
use crate::sparse::{norm2, LuFactorization, SolveReport, SparseMatrix, RESIDUAL_TOLERANCE};
use crate::{Error, Result};

/// Scalar field evaluable at quadrature points.
#[derive(Clone, Copy)]
pub enum FieldFn<'a> {
    Discrete {
        layout: &'a DofLayout,
        coeffs: &'a [f64],
    },
    Analytic(&'a (dyn Fn([f64; 2]) -> f64 + Sync)),
    Constant(f64),
}

/// Vector field evaluable at quadrature points.
#[derive(Clone, Copy)]
pub enum VectorFieldFn<'a> {
    Discrete {
        layout: &'a DofLayout,
        coeffs: &'a [f64],
    },
    Analytic(&'a (dyn Fn([f64; 2]) -> [f64; 2] + Sync)),
    Constant([f64; 2]),
}

impl FieldFn<'_> {
    pub fn eval(&self, elem: usize, geom: &ElementGeometry, bary: [f64; 3], x: [f64; 2]) -> f64 {
        match self {
            FieldFn::Discrete { layout, coeffs } => layout.eval_scalar(coeffs, elem, geom, bary).0,
            FieldFn::Analytic(f) => f(x),
            FieldFn::Constant(c) => *c,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FieldFn::Discrete { coeffs, .. } => coeffs.iter().all(|&c| c == 0.0),
            FieldFn::Constant(c) => *c == 0.0,
            FieldFn::Analytic(_) => false,
        }
    }
}

impl VectorFieldFn<'_> {
    pub fn eval(
        &self,
        elem: usize,
        geom: &ElementGeometry,
        bary: [f64; 3],
        x: [f64; 2],
    ) -> [f64; 2] {
        match self {
            VectorFieldFn::Discrete { layout, coeffs } => {
                layout.eval_vector(coeffs, elem, geom, bary).0
            }
            VectorFieldFn::Analytic(f) => f(x),
            VectorFieldFn::Constant(c) => *c,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VectorFieldFn::Discrete { coeffs, .. } => coeffs.iter().all(|&c| c == 0.0),
            VectorFieldFn::Constant(c) => c[0] == 0.0 && c[1] == 0.0,
            VectorFieldFn::Analytic(_) => false,
        }
    }
}

/// An assembled matrix together with the spaces and scaling it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledForm {
    pub matrix: SparseMatrix,
    pub test: SpaceKind,
    pub trial: SpaceKind,
    pub coeff: f64,
}

/// Matrix plus right-hand side, before or after constraints are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Element loop driver holding per-mesh geometry and quadrature rules.
#[derive(Debug, Clone)]
pub struct Assembler<'m> {
    mesh: &'m Mesh,
    geoms: Vec<ElementGeometry>,
    /// Rule for transport terms, couplings and forcing.
    rule: TriangleRule,
    /// Exact rule for products of P1 functions.
    rule_p1: TriangleRule,
    /// Exact rule for products of MINI functions.
    rule_mini: TriangleRule,
}

impl<'m> Assembler<'m> {
    /// Assembler using the degree-8 rule for all non-polynomial-exact terms.
    pub fn new(mesh: &'m Mesh) -> Result<Self> {
        Self::with_degree(mesh, 8)
    }

    pub fn with_degree(mesh: &'m Mesh, degree: usize) -> Result<Self> {
        Ok(Self {
            mesh,
            geoms: mesh.geometries()?,
            rule: triangle_rule(degree)?,
            rule_p1: triangle_rule(2)?,
            rule_mini: triangle_rule(8)?,
        })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn geometries(&self) -> &[ElementGeometry] {
        &self.geoms
    }

    pub fn rule(&self) -> &TriangleRule {
        &self.rule
    }

    fn exact_rule(&self, kind: SpaceKind) -> &TriangleRule {
        if kind.has_bubble() {
            &self.rule_mini
        } else {
            &self.rule_p1
        }
    }

    fn check_mesh(&self, layout: &DofLayout) -> Result<()> {
        if layout.n_nodes != self.mesh.n_nodes() || layout.n_triangles != self.mesh.n_triangles() {
            return Err(Error::DimensionMismatch {
                expected: self.mesh.n_nodes(),
                actual: layout.n_nodes,
            });
        }
        Ok(())
    }

    /// Scatter a component-wise block-diagonal form given its scalar local
    /// matrix builder `local(elem, geom, out)`.
    fn blockdiag<F>(&self, layout: &DofLayout, mut local: F) -> Result<SparseMatrix>
    where
        F: FnMut(usize, &ElementGeometry, &mut [f64]),
    {
        self.check_mesh(layout)?;
        let nloc = layout.kind.n_local_scalar();
        let ncomp = layout.n_components();
        let mut ke = vec![0.0; nloc * nloc];
        let mut entries = Vec::with_capacity(layout.n_triangles * ncomp * nloc * nloc);
        for (e, geom) in self.geoms.iter().enumerate() {
            ke.iter_mut().for_each(|v| *v = 0.0);
            local(e, geom, &mut ke);
            let dofs = layout.elem_dofs(e);
            for k in 0..ncomp {
                let d = &dofs[k * nloc..(k + 1) * nloc];
                for a in 0..nloc {
                    for b in 0..nloc {
                        entries.push((d[a], d[b], ke[a * nloc + b]));
                    }
                }
            }
        }
        SparseMatrix::from_triplets(layout.n_dofs, layout.n_dofs, &entries)
    }

    /// `(φ_j, φ_i)`.
    pub fn assemble_mass(&self, layout: &DofLayout) -> Result<AssembledForm> {
        let rule = self.exact_rule(layout.kind);
        let nloc = layout.kind.n_local_scalar();
        let mut basis = Vec::with_capacity(4);
        let matrix = self.blockdiag(layout, |_, geom, ke| {
            for (p, w) in rule.iter() {
                eval_basis_into(layout.kind, geom, p, &mut basis);
                let wa = w * geom.area;
                for a in 0..nloc {
                    for b in 0..nloc {
                        ke[a * nloc + b] += wa * basis[a].value * basis[b].value;
                    }
                }
            }
        })?;
        Ok(AssembledForm {
            matrix,
            test: layout.kind,
            trial: layout.kind,
            coeff: 1.0,
        })
    }

    /// `coeff (∇φ_j, ∇φ_i)`.
    pub fn assemble_stiffness(&self, layout: &DofLayout, coeff: f64) -> Result<AssembledForm> {
        let rule = self.exact_rule(layout.kind);
        let nloc = layout.kind.n_local_scalar();
        let mut basis = Vec::with_capacity(4);
        let matrix = self.blockdiag(layout, |_, geom, ke| {
            for (p, w) in rule.iter() {
                eval_basis_into(layout.kind, geom, p, &mut basis);
                let wa = coeff * w * geom.area;
                for a in 0..nloc {
                    for b in 0..nloc {
                        ke[a * nloc + b] += wa * dot(basis[a].gradient, basis[b].gradient);
                    }
                }
            }
        })?;
        Ok(AssembledForm {
            matrix,
            test: layout.kind,
            trial: layout.kind,
            coeff,
        })
    }

    /// `coeff [(∇·σ_j, ∇·σ_i) + (rot σ_j, rot σ_i)]` with `rot σ = ∂x σ₂ − ∂y σ₁`.
    pub fn assemble_divrot(&self, layout: &DofLayout, coeff: f64) -> Result<AssembledForm> {
        if layout.kind != SpaceKind::VectorP1Sigma {
            return Err(Error::InvalidArgument(
                "div-rot form requires the vector P1 layout".into(),
            ));
        }
        self.check_mesh(layout)?;
        let mut entries = Vec::with_capacity(36 * layout.n_triangles);
        for (e, geom) in self.geoms.iter().enumerate() {
            let g = &geom.grad_bary;
            // local dof (k, a): div contribution ∂_k λ_a; rot contribution
            // −∂y λ_a for k = 0 and ∂x λ_a for k = 1.
            let mut div = [0.0; 6];
            let mut rot = [0.0; 6];
            for a in 0..3 {
                div[a] = g[a][0];
                div[3 + a] = g[a][1];
                rot[a] = -g[a][1];
                rot[3 + a] = g[a][0];
            }
            let dofs = layout.elem_dofs(e);
            for i in 0..6 {
                for j in 0..6 {
                    let v = coeff * geom.area * (div[i] * div[j] + rot[i] * rot[j]);
                    entries.push((dofs[i], dofs[j], v));
                }
            }
        }
        Ok(AssembledForm {
            matrix: SparseMatrix::from_triplets(layout.n_dofs, layout.n_dofs, &entries)?,
            test: layout.kind,
            trial: layout.kind,
            coeff,
        })
    }

    /// Skew-symmetric transport `½[((v·∇)φ_j, φ_i) − ((v·∇)φ_i, φ_j)]`,
    /// component-wise for vector layouts.
    fn skew(&self, layout: &DofLayout, velocity: &VectorFieldFn<'_>) -> Result<AssembledForm> {
        let nloc = layout.kind.n_local_scalar();
        let mut basis = Vec::with_capacity(4);
        let mut conv = vec![0.0; nloc * nloc];
        let zero = velocity.is_zero();
        let matrix = self.blockdiag(layout, |e, geom, ke| {
            if zero {
                return;
            }
            conv.iter_mut().for_each(|v| *v = 0.0);
            for (p, w) in self.rule.iter() {
                eval_basis_into(layout.kind, geom, p, &mut basis);
                let v = velocity.eval(e, geom, p, geom.map(p));
                let wa = w * geom.area;
                for a in 0..nloc {
                    for b in 0..nloc {
                        // test a, trial b
                        conv[a * nloc + b] += wa * dot(v, basis[b].gradient) * basis[a].value;
                    }
                }
            }
            for a in 0..nloc {
                for b in 0..nloc {
                    ke[a * nloc + b] = 0.5 * (conv[a * nloc + b] - conv[b * nloc + a]);
                }
            }
        })?;
        Ok(AssembledForm {
            matrix,
            test: layout.kind,
            trial: layout.kind,
            coeff: 1.0,
        })
    }

    /// Scalar transport form `A(v; w₁, w₂)` on a P1 layout.
    pub fn assemble_skew_a(
        &self,
        layout: &DofLayout,
        velocity: &VectorFieldFn<'_>,
    ) -> Result<AssembledForm> {
        if layout.n_components() != 1 {
            return Err(Error::InvalidArgument(
                "scalar transport form requires a scalar layout".into(),
            ));
        }
        self.skew(layout, velocity)
    }

    /// Vector transport form `B(v; v₂, v₃)` on the MINI layout.
    pub fn assemble_skew_b(
        &self,
        layout: &DofLayout,
        velocity: &VectorFieldFn<'_>,
    ) -> Result<AssembledForm> {
        if layout.kind != SpaceKind::VelocityMini {
            return Err(Error::InvalidArgument(
                "vector transport form requires the MINI layout".into(),
            ));
        }
        self.skew(layout, velocity)
    }

    /// `G[i, j] = (π̄_j, ∇·ū_i)` with velocity rows and pressure columns.
    pub fn assemble_pressure_coupling(
        &self,
        layout_u: &DofLayout,
        layout_pi: &DofLayout,
        rho: f64,
    ) -> Result<AssembledForm> {
        if layout_u.kind != SpaceKind::VelocityMini || layout_pi.kind != SpaceKind::PressureP1 {
            return Err(Error::InvalidArgument(
                "pressure coupling requires MINI velocity and P1 pressure layouts".into(),
            ));
        }
        self.check_mesh(layout_u)?;
        self.check_mesh(layout_pi)?;
        let mut basis = Vec::with_capacity(4);
        let mut entries = Vec::with_capacity(24 * layout_u.n_triangles);
        for (e, geom) in self.geoms.iter().enumerate() {
            let mut ge = [[0.0; 3]; 8];
            for (p, w) in self.rule_mini.iter() {
                eval_basis_into(SpaceKind::VelocityMini, geom, p, &mut basis);
                let wa = w * geom.area;
                for k in 0..2 {
                    for a in 0..4 {
                        for (j, &lj) in p.iter().enumerate() {
                            ge[k * 4 + a][j] += wa * basis[a].gradient[k] * lj;
                        }
                    }
                }
            }
            let du = layout_u.elem_dofs(e);
            let dp = layout_pi.elem_dofs(e);
            for i in 0..8 {
                for j in 0..3 {
                    entries.push((du[i], dp[j], ge[i][j]));
                }
            }
        }
        Ok(AssembledForm {
            matrix: SparseMatrix::from_triplets(layout_u.n_dofs, layout_pi.n_dofs, &entries)?,
            test: SpaceKind::VelocityMini,
            trial: SpaceKind::PressureP1,
            coeff: 1.0 / rho,
        })
    }

    /// Load vector `Σ_k (f_k, φ_{k,a})`; `f(elem, geom, bary, x, out)` writes
    /// one value per component.
    pub fn load<F>(&self, layout: &DofLayout, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &ElementGeometry, [f64; 3], [f64; 2], &mut [f64; 2]),
    {
        self.check_mesh(layout)?;
        let nloc = layout.kind.n_local_scalar();
        let ncomp = layout.n_components();
        let mut out = vec![0.0; layout.n_dofs];
        let mut basis = Vec::with_capacity(4);
        for (e, geom) in self.geoms.iter().enumerate() {
            let dofs = layout.elem_dofs(e);
            for (p, w) in self.rule.iter() {
                eval_basis_into(layout.kind, geom, p, &mut basis);
                let mut val = [0.0; 2];
                f(e, geom, p, geom.map(p), &mut val);
                let wa = w * geom.area;
                for k in 0..ncomp {
                    for a in 0..nloc {
                        out[dofs[k * nloc + a]] += wa * val[k] * basis[a].value;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Load vector against test-function gradients. `f` returns a 2×2 array
    /// `T` and dof `(k, a)` receives `Σ_j (T[k][j], ∂_j φ_a)`; scalar layouts
    /// use row 0 only.
    pub fn load_gradient<F>(&self, layout: &DofLayout, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &ElementGeometry, [f64; 3], [f64; 2]) -> [[f64; 2]; 2],
    {
        self.check_mesh(layout)?;
        let nloc = layout.kind.n_local_scalar();
        let ncomp = layout.n_components();
        let mut out = vec![0.0; layout.n_dofs];
        let mut basis: Vec<BasisValue> = Vec::with_capacity(4);
        for (e, geom) in self.geoms.iter().enumerate() {
            let dofs = layout.elem_dofs(e);
            for (p, w) in self.rule.iter() {
                eval_basis_into(layout.kind, geom, p, &mut basis);
                let t = f(e, geom, p, geom.map(p));
                let wa = w * geom.area;
                for k in 0..ncomp {
                    for a in 0..nloc {
                        out[dofs[k * nloc + a]] += wa * dot(t[k], basis[a].gradient);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `χ ((n + α₀) σ, ∇n̄)`.
    pub fn assemble_chemo_rhs(
        &self,
        layout_n: &DofLayout,
        n_prev: &FieldFn<'_>,
        sigma_prev: &VectorFieldFn<'_>,
        chi: f64,
        alpha0: f64,
    ) -> Result<Vec<f64>> {
        if layout_n.n_components() != 1 {
            return Err(Error::InvalidArgument(
                "chemotaxis right-hand side requires a scalar layout".into(),
            ));
        }
        self.load_gradient(layout_n, |e, g, p, x| {
            let eta = n_prev.eval(e, g, p, x) + alpha0;
            let s = sigma_prev.eval(e, g, p, x);
            [[chi * eta * s[0], chi * eta * s[1]], [0.0; 2]]
        })
    }

    /// `(u·σ + γ (n + α₀) c, ∇·σ̄)`.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble_sigma_rhs(
        &self,
        layout_sigma: &DofLayout,
        u_prev: &VectorFieldFn<'_>,
        sigma_prev: &VectorFieldFn<'_>,
        n_prev: &FieldFn<'_>,
        c_prev: &FieldFn<'_>,
        gamma: f64,
        alpha0: f64,
    ) -> Result<Vec<f64>> {
        if layout_sigma.kind != SpaceKind::VectorP1Sigma {
            return Err(Error::InvalidArgument(
                "sigma right-hand side requires the vector P1 layout".into(),
            ));
        }
        self.load_gradient(layout_sigma, |e, g, p, x| {
            let u = u_prev.eval(e, g, p, x);
            let s = sigma_prev.eval(e, g, p, x);
            let eta = n_prev.eval(e, g, p, x) + alpha0;
            let v = dot(u, s) + gamma * eta * c_prev.eval(e, g, p, x);
            [[v, 0.0], [0.0, v]]
        })
    }

    /// `(g, ∇·σ̄)` for a scalar function `g`.
    pub fn assemble_divergence_load(
        &self,
        layout_sigma: &DofLayout,
        g: &FieldFn<'_>,
    ) -> Result<Vec<f64>> {
        if layout_sigma.n_components() != 2 {
            return Err(Error::InvalidArgument(
                "divergence load requires a vector layout".into(),
            ));
        }
        self.load_gradient(layout_sigma, |e, geom, p, x| {
            let v = g.eval(e, geom, p, x);
            [[v, 0.0], [0.0, v]]
        })
    }

    /// `−γ ((n + α₀) c, c̄)`.
    pub fn assemble_consumption_rhs(
        &self,
        layout_c: &DofLayout,
        n_prev: &FieldFn<'_>,
        c_prev: &FieldFn<'_>,
        gamma: f64,
        alpha0: f64,
    ) -> Result<Vec<f64>> {
        self.load(layout_c, |e, g, p, x, out| {
            out[0] = -gamma * (n_prev.eval(e, g, p, x) + alpha0) * c_prev.eval(e, g, p, x);
        })
    }

    /// `(1/ρ) ((n + α₀) ∇φ, ū)`.
    pub fn assemble_buoyancy_rhs(
        &self,
        layout_u: &DofLayout,
        n_prev: &FieldFn<'_>,
        grad_phi: &VectorFieldFn<'_>,
        rho: f64,
        alpha0: f64,
    ) -> Result<Vec<f64>> {
        if layout_u.kind != SpaceKind::VelocityMini {
            return Err(Error::InvalidArgument(
                "buoyancy right-hand side requires the MINI layout".into(),
            ));
        }
        if grad_phi.is_zero() {
            return Ok(vec![0.0; layout_u.n_dofs]);
        }
        self.load(layout_u, |e, g, p, x, out| {
            let eta = n_prev.eval(e, g, p, x) + alpha0;
            let gp = grad_phi.eval(e, g, p, x);
            out[0] = eta * gp[0] / rho;
            out[1] = eta * gp[1] / rho;
        })
    }

    /// `(f, φ_i)` for a scalar function.
    pub fn assemble_scalar_load(&self, layout: &DofLayout, f: &FieldFn<'_>) -> Result<Vec<f64>> {
        self.load(layout, |e, g, p, x, out| out[0] = f.eval(e, g, p, x))
    }

    /// `(f, φ)` for a vector function on a vector layout.
    pub fn assemble_vector_load(
        &self,
        layout: &DofLayout,
        f: &VectorFieldFn<'_>,
    ) -> Result<Vec<f64>> {
        self.load(layout, |e, g, p, x, out| *out = f.eval(e, g, p, x))
    }

    /// `(∇f, ∇φ_i)` for an analytic gradient on a scalar layout.
    pub fn assemble_gradient_load(
        &self,
        layout: &DofLayout,
        grad: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync),
    ) -> Result<Vec<f64>> {
        if layout.n_components() != 1 {
            return Err(Error::InvalidArgument(
                "gradient load requires a scalar layout".into(),
            ));
        }
        self.load_gradient(layout, |_, _, _, x| [grad(x), [0.0; 2]])
    }

    /// `Σ_k (∇f_k, ∇φ_{k,a})` for an analytic Jacobian `J[k][j] = ∂_j f_k`
    /// on a vector layout.
    pub fn assemble_jacobian_load(
        &self,
        layout: &DofLayout,
        jac: &(dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Sync),
    ) -> Result<Vec<f64>> {
        if layout.n_components() != 2 {
            return Err(Error::InvalidArgument(
                "Jacobian load requires a vector layout".into(),
            ));
        }
        self.load_gradient(layout, |_, _, _, x| jac(x))
    }

    /// `(d, ∇·σ̄) + (r, rot σ̄)` for analytic divergence `d` and rotation `r`.
    pub fn assemble_divrot_load(
        &self,
        layout_sigma: &DofLayout,
        div: &(dyn Fn([f64; 2]) -> f64 + Sync),
        rot: &(dyn Fn([f64; 2]) -> f64 + Sync),
    ) -> Result<Vec<f64>> {
        if layout_sigma.kind != SpaceKind::VectorP1Sigma {
            return Err(Error::InvalidArgument(
                "div-rot load requires the vector P1 layout".into(),
            ));
        }
        self.load_gradient(layout_sigma, |_, _, _, x| {
            let (d, r) = (div(x), rot(x));
            [[d, -r], [r, d]]
        })
    }

    /// `∫ φ_j` for each scalar dof; the mean-constraint row.
    pub fn mean_weights(&self, layout: &DofLayout) -> Result<Vec<f64>> {
        self.check_mesh(layout)?;
        if layout.n_components() != 1 {
            return Err(Error::InvalidArgument(
                "mean constraint is only defined for scalar layouts".into(),
            ));
        }
        let mut w = vec![0.0; layout.n_dofs];
        for (e, geom) in self.geoms.iter().enumerate() {
            for &d in layout.elem_dofs(e) {
                w[d] += geom.area / 3.0;
            }
        }
        Ok(w)
    }

    /// `∫_Ω f_h` of a discrete scalar field (exact for P1).
    pub fn integral(&self, layout: &DofLayout, coeffs: &[f64]) -> Result<f64> {
        Ok(self
            .mean_weights(layout)?
            .iter()
            .zip(coeffs)
            .map(|(w, c)| w * c)
            .sum())
    }

    /// Per-element integral of an analytic function with the assembler's rule.
    pub fn integrate_analytic(&self, f: &dyn Fn([f64; 2]) -> f64) -> f64 {
        self.geoms
            .iter()
            .map(|g| crate::quadrature::integrate(&self.rule, g, |_, x| f(x)))
            .sum()
    }

    /// Apply the constraint protocol of `layout` to a square system.
    pub fn apply_constraints(
        &self,
        system: &LinearSystem,
        layout: &DofLayout,
    ) -> Result<LinearSystem> {
        let weights = if layout.mean_constraint {
            Some(self.mean_weights(layout)?)
        } else {
            None
        };
        apply_constraints(system, layout, weights.as_deref())
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Replace rows and columns of `dofs` by the identity with zero right-hand
/// side (homogeneous symmetric elimination).
pub fn eliminate_dofs(system: &LinearSystem, dofs: &[usize]) -> Result<LinearSystem> {
    let n = system.matrix.nrows();
    if system.matrix.ncols() != n || system.rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: system.rhs.len(),
        });
    }
    let mut mask = vec![false; n];
    for &d in dofs {
        if d >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: d + 1,
            });
        }
        mask[d] = true;
    }
    let mut entries: Vec<(usize, usize, f64)> = system
        .matrix
        .triplets()
        .into_iter()
        .filter(|&(i, j, _)| !mask[i] && !mask[j])
        .collect();
    entries.extend(dofs.iter().map(|&d| (d, d, 1.0)));
    let mut rhs = system.rhs.clone();
    for &d in dofs {
        rhs[d] = 0.0;
    }
    Ok(LinearSystem {
        matrix: SparseMatrix::from_triplets(n, n, &entries)?,
        rhs,
    })
}

/// Append a multiplier row/column `[wᵀ 0]` at index `offset..` covering the
/// dofs `offset..offset + w.len()`.
pub fn append_mean_constraint(
    system: &LinearSystem,
    offset: usize,
    weights: &[f64],
) -> Result<LinearSystem> {
    let n = system.matrix.nrows();
    if offset + weights.len() > n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: offset + weights.len(),
        });
    }
    let mut entries = system.matrix.triplets();
    for (j, &w) in weights.iter().enumerate() {
        entries.push((n, offset + j, w));
        entries.push((offset + j, n, w));
    }
    let mut rhs = system.rhs.clone();
    rhs.push(0.0);
    Ok(LinearSystem {
        matrix: SparseMatrix::from_triplets(n + 1, n + 1, &entries)?,
        rhs,
    })
}

/// How the block carrying a mean constraint behaves without it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKernel {
    /// The matrix is invertible on its own.
    Regular,
    /// The matrix is singular with kernel (left and right) spanned by the
    /// indicator of the constrained block.
    Constant,
}

/// Solve the system obtained by [`append_mean_constraint`] without forming
/// the dense multiplier row. Returns the solution (without the multiplier),
/// the multiplier and a report measured against the bordered system.
pub fn solve_mean_constrained(
    matrix: &SparseMatrix,
    rhs: &[f64],
    offset: usize,
    weights: &[f64],
    kernel: MeanKernel,
    what: &str,
) -> Result<(Vec<f64>, f64, SolveReport)> {
    let n = matrix.nrows();
    if offset + weights.len() > n || rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: (offset + weights.len()).max(rhs.len()),
        });
    }
    let block = offset..offset + weights.len();
    let wsum: f64 = weights.iter().sum();
    let mut w = vec![0.0; n];
    w[block.clone()].copy_from_slice(weights);
    let start = std::time::Instant::now();
    let (mut x, lambda, factor_time) = match kernel {
        MeanKernel::Regular => {
            let lu = LuFactorization::new(matrix, what)?;
            let (x1, r1) = lu.solve(rhs)?;
            let (x2, _) = lu.solve(&w)?;
            let lambda = vdot(weights, &x1[block.clone()]) / vdot(weights, &x2[block.clone()]);
            let x = x1.iter().zip(&x2).map(|(a, b)| a - lambda * b).collect();
            (x, lambda, r1.factor_time)
        }
        MeanKernel::Constant => {
            let lambda = rhs[block.clone()].iter().sum::<f64>() / wsum;
            let mut b: Vec<f64> = rhs.iter().zip(&w).map(|(r, wi)| r - lambda * wi).collect();
            let pin = offset;
            let entries: Vec<(usize, usize, f64)> = matrix
                .triplets()
                .into_iter()
                .filter(|&(i, j, _)| i != pin && j != pin)
                .chain(std::iter::once((pin, pin, 1.0)))
                .collect();
            b[pin] = 0.0;
            let pinned = SparseMatrix::from_triplets(n, n, &entries)?;
            let (x, r) = LuFactorization::new(&pinned, what)?.solve(&b)?;
            (x, lambda, r.factor_time)
        }
    };
    if kernel == MeanKernel::Constant {
        let shift = vdot(weights, &x[block.clone()]) / wsum;
        x[block.clone()].iter_mut().for_each(|v| *v -= shift);
    }
    let ax = matrix.matvec(&x);
    let r2: f64 = ax
        .iter()
        .zip(rhs)
        .zip(&w)
        .map(|((a, b), wi)| (b - a - lambda * wi).powi(2))
        .sum::<f64>()
        + vdot(weights, &x[block]).powi(2);
    let wn = norm2(weights);
    let fro = (matrix.frobenius_norm().powi(2) + 2.0 * wn * wn).sqrt();
    let xn = (norm2(&x).powi(2) + lambda * lambda).sqrt();
    let report = SolveReport {
        residual_norm: r2.sqrt(),
        tolerance: RESIDUAL_TOLERANCE * (fro * xn + norm2(rhs)),
        factor_time,
        solve_time: start.elapsed().saturating_sub(factor_time),
    };
    if !report.within_tolerance() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Solver {
            what: what.to_string(),
            detail: format!(
                "residual {:.3e} exceeds tolerance {:.3e}",
                report.residual_norm, report.tolerance
            ),
        });
    }
    Ok((x, lambda, report))
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constrained dofs become identity rows/columns; when `weights` is given a
/// mean multiplier is appended. Idempotent: a system that already carries the
/// multiplier only has its eliminated rows re-applied.
pub fn apply_constraints(
    system: &LinearSystem,
    layout: &DofLayout,
    weights: Option<&[f64]>,
) -> Result<LinearSystem> {
    let n = system.matrix.nrows();
    let already = layout.mean_constraint && n == layout.system_dim();
    if n != layout.n_dofs && !already {
        return Err(Error::DimensionMismatch {
            expected: layout.n_dofs,
            actual: n,
        });
    }
    let out = eliminate_dofs(system, &layout.constrained_dofs)?;
    match (layout.mean_constraint, already, weights) {
        (true, false, Some(w)) => append_mean_constraint(&out, 0, w),
        (true, false, None) => Err(Error::InvalidArgument(
            "mean-constrained layout requires multiplier weights".into(),
        )),
        _ => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;
    use crate::spaces::build_layout;

    fn unit_triangle_mesh() -> Mesh {
        // The lower triangle of the 1x1 mesh is the reference triangle.
        let mut m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        m.triangles = vec![[0, 1, 2]];
        m
    }

    #[test]
    fn reference_mass_and_stiffness() {
        let m = unit_triangle_mesh();
        let asm = Assembler::new(&m).unwrap();
        let l = build_layout(&m, SpaceKind::ScalarP1);
        let mass = asm.assemble_mass(&l).unwrap().matrix;
        let a = 0.5;
        let expect = |i: usize, j: usize| if i == j { a / 6.0 } else { a / 12.0 };
        let idx = [0, 1, 2];
        for (ii, &i) in idx.iter().enumerate() {
            for (jj, &j) in idx.iter().enumerate() {
                assert!((mass.get(i, j) - expect(ii, jj)).abs() < 1e-16);
            }
        }
        let k = asm.assemble_stiffness(&l, 1.0).unwrap().matrix;
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for (ii, &i) in idx.iter().enumerate() {
            for (jj, &j) in idx.iter().enumerate() {
                assert!((k.get(i, j) - expect[ii][jj]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_total_and_stiffness_kernel() {
        let m = build_rect_mesh(2.0, 1.0, 6, 5).unwrap();
        let asm = Assembler::new(&m).unwrap();
        let l = build_layout(&m, SpaceKind::ScalarP1);
        let mass = asm.assemble_mass(&l).unwrap().matrix;
        let total: f64 = mass.values().iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let k = asm.assemble_stiffness(&l, 3.0).unwrap().matrix;
        let r = k.matvec(&vec![1.7; l.n_dofs]);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert!(k.asymmetry() < 1e-14);
        assert!(mass.asymmetry() < 1e-16);
    }

    #[test]
    fn zero_velocity_gives_zero_transport() {
        let m = build_rect_mesh(1.0, 1.0, 3, 3).unwrap();
        let asm = Assembler::new(&m).unwrap();
        let l = build_layout(&m, SpaceKind::ScalarP1);
        let a = asm
            .assemble_skew_a(&l, &VectorFieldFn::Constant([0.0, 0.0]))
            .unwrap();
        assert!(a.matrix.values().iter().all(|&v| v == 0.0));
        let lu = build_layout(&m, SpaceKind::VelocityMini);
        let zero = vec![0.0; lu.n_dofs];
        let b = asm
            .assemble_skew_b(
                &lu,
                &VectorFieldFn::Discrete {
                    layout: &lu,
                    coeffs: &zero,
                },
            )
            .unwrap();
        assert!(b.matrix.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divrot_quadratic_forms() {
        let m = build_rect_mesh(2.0, 1.0, 4, 3).unwrap();
        let asm = Assembler::new(&m).unwrap();
        // unconstrained copy so boundary values are kept
        let l = build_layout(&m, SpaceKind::VectorP1Sigma);
        let d = asm.assemble_divrot(&l, 0.7).unwrap().matrix;
        let raw = |f: &dyn Fn([f64; 2]) -> [f64; 2]| {
            let mut out = vec![0.0; l.n_dofs];
            for (n, &p) in m.nodes.iter().enumerate() {
                let v = f(p);
                out[n] = v[0];
                out[l.component_stride + n] = v[1];
            }
            out
        };
        let c = raw(&|_| [1.0, -2.0]);
        assert!(d.matvec(&c).iter().all(|v| v.abs() < 1e-13));
        let s = raw(&|p| [p[0], p[1]]);
        assert!((d.bilinear(&s, &s) - 4.0 * 0.7 * 2.0).abs() < 1e-12);
        let s = raw(&|p| [-p[1], p[0]]);
        assert!((d.bilinear(&s, &s) - 4.0 * 0.7 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn constraint_protocol() {
        let m = build_rect_mesh(1.0, 1.0, 2, 2).unwrap();
        let asm = Assembler::new(&m).unwrap();
        let l = build_layout(&m, SpaceKind::VectorP1Sigma);
        let mass = asm.assemble_mass(&l).unwrap().matrix;
        let sys = LinearSystem {
            matrix: mass,
            rhs: vec![1.0; l.n_dofs],
        };
        let once = asm.apply_constraints(&sys, &l).unwrap();
        let k = l.constrained_dofs[0];
        for (j, v) in once.matrix.row(k) {
            assert_eq!((j, v), (k, 1.0));
        }
        for i in 0..l.n_dofs {
            if i != k {
                assert_eq!(once.matrix.get(i, k), 0.0);
            }
        }
        assert_eq!(once.rhs[k], 0.0);
        let twice = asm.apply_constraints(&once, &l).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn mean_constraint_is_idempotent() {
        let m = build_rect_mesh(1.0, 1.0, 3, 3).unwrap();
        let asm = Assembler::new(&m).unwrap();
        let l = build_layout(&m, SpaceKind::PressureP1);
        let sys = LinearSystem {
            matrix: asm.assemble_stiffness(&l, 1.0).unwrap().matrix,
            rhs: vec![0.5; l.n_dofs],
        };
        let once = asm.apply_constraints(&sys, &l).unwrap();
        assert_eq!(once.matrix.nrows(), l.system_dim());
        let twice = asm.apply_constraints(&once, &l).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn discrete_field_reproduces_vertex_values() {
        let m = build_rect_mesh(1.0, 1.0, 2, 3).unwrap();
        let asm = Assembler::new(&m).unwrap();
        let l = build_layout(&m, SpaceKind::ScalarP1);
        let coeffs: Vec<f64> = (0..l.n_dofs).map(|i| (i as f64).sin()).collect();
        let f = FieldFn::Discrete {
            layout: &l,
            coeffs: &coeffs,
        };
        for (e, g) in asm.geometries().iter().enumerate() {
            for (k, &node) in m.triangles[e].iter().enumerate() {
                let mut bary = [0.0; 3];
                bary[k] = 1.0;
                let v = f.eval(e, g, bary, m.nodes[node]);
                assert!((v - coeffs[node]).abs() < 1e-15);
            }
        }
    }
}
