//! Degree-of-freedom layouts and local basis functions.
//!
//! Five discrete spaces are built from four layout kinds:
//!
//! | unknown | kind              | constraints                          |
//! |---------|-------------------|--------------------------------------|
//! | `n`     | `ScalarP1`        | zero mean (Lagrange multiplier)      |
//! | `c`     | `ScalarP1`        | none                                 |
//! | `σ`     | `VectorP1Sigma`   | normal component zero on `∂Ω`        |
//! | `u`     | `VelocityMini`    | both components zero on `∂Ω`         |
//! | `π`     | `PressureP1`      | zero mean (Lagrange multiplier)      |
//!
//! Vector layouts are component-major: the global index of component `k` of
//! scalar dof `s` is `k * component_stride + s`. MINI scalar dofs are the
//! mesh nodes followed by one bubble per triangle.

use crate::mesh::{ElementGeometry, Mesh, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    ScalarP1,
    VectorP1Sigma,
    VelocityMini,
    PressureP1,
}

impl SpaceKind {
    pub fn n_components(self) -> usize {
        match self {
            SpaceKind::ScalarP1 | SpaceKind::PressureP1 => 1,
            SpaceKind::VectorP1Sigma | SpaceKind::VelocityMini => 2,
        }
    }

    /// Scalar shape functions per element and component.
    pub fn n_local_scalar(self) -> usize {
        match self {
            SpaceKind::VelocityMini => 4,
            _ => 3,
        }
    }

    pub fn has_bubble(self) -> bool {
        self == SpaceKind::VelocityMini
    }
}

/// Value and physical gradient of one local shape function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisValue {
    pub value: f64,
    pub gradient: [f64; 2],
}

/// Scalar shape functions of `kind` at barycentric point `bary`: the three
/// vertex functions, followed by the cubic bubble for the MINI space.
pub fn eval_basis(kind: SpaceKind, geom: &ElementGeometry, bary: [f64; 3]) -> Vec<BasisValue> {
    let mut out = Vec::with_capacity(4);
    eval_basis_into(kind, geom, bary, &mut out);
    out
}

pub(crate) fn eval_basis_into(
    kind: SpaceKind,
    geom: &ElementGeometry,
    bary: [f64; 3],
    out: &mut Vec<BasisValue>,
) {
    out.clear();
    let g = &geom.grad_bary;
    for i in 0..3 {
        out.push(BasisValue {
            value: bary[i],
            gradient: g[i],
        });
    }
    if kind.has_bubble() {
        let [l1, l2, l3] = bary;
        let (a, b, c) = (l2 * l3, l1 * l3, l1 * l2);
        out.push(BasisValue {
            value: 27.0 * l1 * l2 * l3,
            gradient: [
                27.0 * (a * g[0][0] + b * g[1][0] + c * g[2][0]),
                27.0 * (a * g[0][1] + b * g[1][1] + c * g[2][1]),
            ],
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    pub kind: SpaceKind,
    pub n_dofs: usize,
    pub n_nodes: usize,
    pub n_triangles: usize,
    /// Scalar dofs per component.
    pub component_stride: usize,
    /// Dofs per element over all components.
    pub dofs_per_elem: usize,
    local_to_global: Vec<usize>,
    /// Dofs pinned to zero, sorted.
    pub constrained_dofs: Vec<usize>,
    constrained_mask: Vec<bool>,
    /// Adds one multiplier row/column enforcing `∫ f = 0`.
    pub mean_constraint: bool,
}

/// Layout of `kind` on `mesh`. Only the pressure space carries a mean
/// constraint by default; use [`DofLayout::with_mean_constraint`] for `n`.
pub fn build_layout(mesh: &Mesh, kind: SpaceKind) -> DofLayout {
    let n_nodes = mesh.n_nodes();
    let n_triangles = mesh.n_triangles();
    let component_stride = if kind.has_bubble() {
        n_nodes + n_triangles
    } else {
        n_nodes
    };
    let ncomp = kind.n_components();
    let nloc = kind.n_local_scalar();
    let dofs_per_elem = ncomp * nloc;

    let mut local_to_global = Vec::with_capacity(dofs_per_elem * n_triangles);
    for (e, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..ncomp {
            let off = k * component_stride;
            local_to_global.extend(tri.iter().map(|&v| off + v));
            if kind.has_bubble() {
                local_to_global.push(off + n_nodes + e);
            }
        }
    }

    let mut constrained_dofs = Vec::new();
    match kind {
        SpaceKind::ScalarP1 | SpaceKind::PressureP1 => {}
        SpaceKind::VelocityMini => {
            for n in mesh.classify_boundary().all {
                constrained_dofs.push(n);
                constrained_dofs.push(component_stride + n);
            }
        }
        SpaceKind::VectorP1Sigma => {
            let b = mesh.classify_boundary();
            for &n in &b.corners {
                constrained_dofs.push(n);
                constrained_dofs.push(component_stride + n);
            }
            for side in Side::ALL {
                // The normal of each side is axis-aligned.
                let comp = match side {
                    Side::Left | Side::Right => 0,
                    Side::Bottom | Side::Top => 1,
                };
                constrained_dofs.extend(b.side(side).iter().map(|&n| comp * component_stride + n));
            }
        }
    }
    constrained_dofs.sort_unstable();
    constrained_dofs.dedup();
    let n_dofs = ncomp * component_stride;
    let mut constrained_mask = vec![false; n_dofs];
    for &d in &constrained_dofs {
        constrained_mask[d] = true;
    }

    DofLayout {
        kind,
        n_dofs,
        n_nodes,
        n_triangles,
        component_stride,
        dofs_per_elem,
        local_to_global,
        constrained_dofs,
        constrained_mask,
        mean_constraint: kind == SpaceKind::PressureP1,
    }
}

impl DofLayout {
    pub fn with_mean_constraint(mut self, on: bool) -> Self {
        self.mean_constraint = on;
        self
    }

    /// Size of the linear system including the mean multiplier.
    pub fn system_dim(&self) -> usize {
        self.n_dofs + usize::from(self.mean_constraint)
    }

    pub fn n_components(&self) -> usize {
        self.kind.n_components()
    }

    /// Global dofs of element `elem`, component-major.
    pub fn elem_dofs(&self, elem: usize) -> &[usize] {
        &self.local_to_global[elem * self.dofs_per_elem..(elem + 1) * self.dofs_per_elem]
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained_mask[dof]
    }

    /// Zero every constrained coefficient.
    pub fn apply_constraint_values(&self, coeffs: &mut [f64]) {
        for &d in &self.constrained_dofs {
            coeffs[d] = 0.0;
        }
    }

    /// Value and gradient of a scalar field at `bary` in element `elem`.
    pub fn eval_scalar(
        &self,
        coeffs: &[f64],
        elem: usize,
        geom: &ElementGeometry,
        bary: [f64; 3],
    ) -> (f64, [f64; 2]) {
        debug_assert_eq!(self.n_components(), 1);
        let dofs = self.elem_dofs(elem);
        let g = &geom.grad_bary;
        let mut v = 0.0;
        let mut grad = [0.0; 2];
        for i in 0..3 {
            let c = coeffs[dofs[i]];
            v += c * bary[i];
            grad[0] += c * g[i][0];
            grad[1] += c * g[i][1];
        }
        (v, grad)
    }

    /// Value and Jacobian `J[i][j] = ∂vᵢ/∂xⱼ` of a vector field.
    pub fn eval_vector(
        &self,
        coeffs: &[f64],
        elem: usize,
        geom: &ElementGeometry,
        bary: [f64; 3],
    ) -> ([f64; 2], [[f64; 2]; 2]) {
        debug_assert_eq!(self.n_components(), 2);
        let mut basis = Vec::with_capacity(4);
        eval_basis_into(self.kind, geom, bary, &mut basis);
        self.eval_vector_with(coeffs, elem, &basis)
    }

    pub(crate) fn eval_vector_with(
        &self,
        coeffs: &[f64],
        elem: usize,
        basis: &[BasisValue],
    ) -> ([f64; 2], [[f64; 2]; 2]) {
        let dofs = self.elem_dofs(elem);
        let nloc = basis.len();
        let mut v = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            for (a, b) in basis.iter().enumerate() {
                let c = coeffs[dofs[k * nloc + a]];
                v[k] += c * b.value;
                jac[k][0] += c * b.gradient[0];
                jac[k][1] += c * b.gradient[1];
            }
        }
        (v, jac)
    }

    /// Vertex interpolation of a scalar function; constrained dofs are zeroed.
    pub fn interpolate_scalar(&self, mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        debug_assert_eq!(self.n_components(), 1);
        let mut out: Vec<f64> = mesh.nodes.iter().map(|&p| f(p)).collect();
        self.apply_constraint_values(&mut out);
        out
    }

    /// Vertex interpolation of a vector function. Bubble coefficients are zero
    /// and constrained dofs are zeroed.
    pub fn interpolate_vector(&self, mesh: &Mesh, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        debug_assert_eq!(self.n_components(), 2);
        let mut out = vec![0.0; self.n_dofs];
        for (n, &p) in mesh.nodes.iter().enumerate() {
            let v = f(p);
            out[n] = v[0];
            out[self.component_stride + n] = v[1];
        }
        self.apply_constraint_values(&mut out);
        out
    }

    /// Vertex values of component `comp` (bubbles dropped).
    pub fn nodal_values<'a>(&self, coeffs: &'a [f64], comp: usize) -> &'a [f64] {
        let off = comp * self.component_stride;
        &coeffs[off..off + self.n_nodes]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rect_mesh;

    #[test]
    fn mini_layout_on_smallest_mesh() {
        let m = build_rect_mesh(1.0, 1.0, 1, 1).unwrap();
        let l = build_layout(&m, SpaceKind::VelocityMini);
        assert_eq!(l.n_dofs, 12);
        assert_eq!(l.constrained_dofs.len(), 8);
        // bubbles are never constrained
        for e in 0..2 {
            assert!(!l.is_constrained(m.n_nodes() + e));
            assert!(!l.is_constrained(l.component_stride + m.n_nodes() + e));
        }
        assert!(!l.mean_constraint);
    }

    #[test]
    fn sigma_layout_constraints() {
        let m = build_rect_mesh(1.0, 1.0, 2, 2).unwrap();
        let l = build_layout(&m, SpaceKind::VectorP1Sigma);
        assert_eq!(l.n_dofs, 18);
        assert_eq!(l.constrained_dofs.len(), 12);
        // node 3 = (0, 0.5) on the left side: x-component pinned only
        assert!(l.is_constrained(3));
        assert!(!l.is_constrained(9 + 3));
        // node 1 = (0.5, 0) on the bottom: y-component pinned only
        assert!(!l.is_constrained(1));
        assert!(l.is_constrained(9 + 1));
        // centre node free
        assert!(!l.is_constrained(4) && !l.is_constrained(13));
    }

    #[test]
    fn mean_constraint_flags() {
        let m = build_rect_mesh(2.0, 1.0, 3, 2).unwrap();
        let p = build_layout(&m, SpaceKind::PressureP1);
        assert!(p.mean_constraint);
        assert_eq!(p.system_dim(), m.n_nodes() + 1);
        let c = build_layout(&m, SpaceKind::ScalarP1);
        assert!(!c.mean_constraint);
        let n = c.clone().with_mean_constraint(true);
        assert_eq!(n.n_dofs, m.n_nodes());
        assert_eq!(n.system_dim(), m.n_nodes() + 1);
    }

    #[test]
    fn basis_values() {
        let g = ElementGeometry::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let t = 1.0 / 3.0;
        let b = eval_basis(SpaceKind::VelocityMini, &g, [t, t, t]);
        assert_eq!(b.len(), 4);
        for v in &b[..3] {
            assert!((v.value - t).abs() < 1e-16);
        }
        assert!((b[3].value - 1.0).abs() < 1e-15);
        // the bubble has a maximum at the centroid
        assert!(b[3].gradient[0].abs() < 1e-14 && b[3].gradient[1].abs() < 1e-14);
        let b = eval_basis(SpaceKind::VelocityMini, &g, [0.0, 0.3, 0.7]);
        assert_eq!(b[3].value, 0.0);
    }

    #[test]
    fn bubble_gradient_matches_finite_differences() {
        let g = ElementGeometry::from_vertices([[0.1, 0.2], [1.3, 0.1], [0.4, 0.9]]).unwrap();
        let bary = [0.2, 0.5, 0.3];
        let x = g.map(bary);
        let to_bary = |p: [f64; 2]| {
            let v = g.vertices;
            let l1 = g.grad_bary[1][0] * (p[0] - v[0][0]) + g.grad_bary[1][1] * (p[1] - v[0][1]);
            let l2 = g.grad_bary[2][0] * (p[0] - v[0][0]) + g.grad_bary[2][1] * (p[1] - v[0][1]);
            [1.0 - l1 - l2, l1, l2]
        };
        let bubble = |p: [f64; 2]| {
            let l = to_bary(p);
            27.0 * l[0] * l[1] * l[2]
        };
        let h = 1e-6;
        let fd = [
            (bubble([x[0] + h, x[1]]) - bubble([x[0] - h, x[1]])) / (2.0 * h),
            (bubble([x[0], x[1] + h]) - bubble([x[0], x[1] - h])) / (2.0 * h),
        ];
        let b = eval_basis(SpaceKind::VelocityMini, &g, bary);
        assert!((b[3].gradient[0] - fd[0]).abs() < 1e-8);
        assert!((b[3].gradient[1] - fd[1]).abs() < 1e-8);
    }

    #[test]
    fn interpolation_respects_constraints() {
        let m = build_rect_mesh(1.0, 1.0, 4, 4).unwrap();
        let l = build_layout(&m, SpaceKind::VelocityMini);
        let u = l.interpolate_vector(&m, |_| [1.0, 2.0]);
        for &d in &l.constrained_dofs {
            assert_eq!(u[d], 0.0);
        }
        assert!(u[m.n_nodes()..l.component_stride].iter().all(|&v| v == 0.0));
    }
}
