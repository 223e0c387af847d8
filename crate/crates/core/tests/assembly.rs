use approx::assert_relative_eq;
use chemoflow_core::assembly::{
    append_mean_constraint, solve_mean_constrained, Assembler, FieldFn, LinearSystem, MeanKernel,
    VectorFieldFn,
};
use chemoflow_core::mesh::build_rect_mesh;
use chemoflow_core::spaces::{build_layout, eval_basis, SpaceKind};
use chemoflow_core::sparse::{LuFactorization, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense(a: &SparseMatrix) -> DMatrix<f64> {
    let d = a.to_dense();
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| d[i][j])
}

fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Vec<f64> {
    dense(a)
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("dense oracle is nonsingular")
        .as_slice()
        .to_vec()
}

/// `C[a][b] = ∫ (v·∇φ_b) φ_a` built straight from the basis, for comparison
/// with the skew form.
fn plain_convection(
    asm: &Assembler<'_>,
    kind: SpaceKind,
    v: &dyn Fn([f64; 2]) -> [f64; 2],
) -> DMatrix<f64> {
    let mesh = asm.mesh();
    let layout = build_layout(mesh, kind);
    let n = layout.n_dofs;
    let mut c = DMatrix::zeros(n, n);
    let nloc = kind.n_local_scalar();
    for (e, geom) in asm.geometries().iter().enumerate() {
        let dofs = layout.elem_dofs(e);
        for (p, w) in asm.rule().iter() {
            let x = geom.map(p);
            let vel = v(x);
            let basis = eval_basis(kind, geom, p);
            for comp in 0..kind.n_components() {
                for a in 0..nloc {
                    for b in 0..nloc {
                        let adv = vel[0] * basis[b].gradient[0] + vel[1] * basis[b].gradient[1];
                        c[(dofs[comp * nloc + a], dofs[comp * nloc + b])] +=
                            w * geom.area * adv * basis[a].value;
                    }
                }
            }
        }
    }
    c
}

#[test]
fn mass_matches_dense_oracle_and_is_spd() {
    let mesh = build_rect_mesh(1.0, 1.0, 3, 3).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    for kind in [SpaceKind::ScalarP1, SpaceKind::VelocityMini] {
        let l = build_layout(&mesh, kind);
        let m = dense(&asm.assemble_mass(&l).unwrap().matrix);
        assert_relative_eq!(m.clone(), m.transpose(), epsilon = 1e-15);
        assert!(m.clone().cholesky().is_some());
        if kind == SpaceKind::ScalarP1 {
            assert_relative_eq!(m.sum(), 1.0, epsilon = 1e-14);
        }
    }
}

#[test]
fn stiffness_reproduces_linear_energy() {
    let mesh = build_rect_mesh(2.0, 1.0, 4, 3).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    let l = build_layout(&mesh, SpaceKind::ScalarP1);
    let k = asm.assemble_stiffness(&l, 1.0).unwrap().matrix;
    let x: Vec<f64> = mesh.nodes.iter().map(|p| 3.0 * p[0] - p[1]).collect();
    // ∫|∇(3x − y)|² = 10 |Ω|
    assert_relative_eq!(k.bilinear(&x, &x), 20.0, epsilon = 1e-12);
    for r in k.row_sums() {
        assert!(r.abs() < 1e-12);
    }
}

#[test]
fn load_of_quadratic_is_exact() {
    let mesh = build_rect_mesh(1.0, 1.0, 5, 5).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    let l = build_layout(&mesh, SpaceKind::ScalarP1);
    let f = |x: [f64; 2]| x[0] * x[0] * x[1];
    let load = asm
        .assemble_scalar_load(&l, &FieldFn::Analytic(&f))
        .unwrap();
    // partition of unity: Σ_a ∫ f φ_a = ∫ f = 1/6
    assert_relative_eq!(load.iter().sum::<f64>(), 1.0 / 6.0, epsilon = 1e-14);
    let xs: Vec<f64> = mesh.nodes.iter().map(|p| p[1]).collect();
    let first: f64 = load.iter().zip(&xs).map(|(a, b)| a * b).sum();
    assert_relative_eq!(first, 1.0 / 9.0, epsilon = 1e-14);
}

#[test]
fn constant_fields_reduce_rhs_to_loads() {
    let mesh = build_rect_mesh(1.0, 1.0, 4, 4).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    let lp = build_layout(&mesh, SpaceKind::ScalarP1);
    let ls = build_layout(&mesh, SpaceKind::VectorP1Sigma);
    let lu = build_layout(&mesh, SpaceKind::VelocityMini);
    let mass = asm.assemble_mass(&lp).unwrap().matrix;
    let ones = vec![1.0; lp.n_dofs];
    // (γ(n + α) c, c̄) with n = 0, α = 2, c = 3
    let cons = asm
        .assemble_consumption_rhs(
            &lp,
            &FieldFn::Constant(0.0),
            &FieldFn::Constant(3.0),
            4.0,
            2.0,
        )
        .unwrap();
    let expected = mass.matvec(&ones);
    for (a, b) in cons.iter().zip(&expected) {
        assert_relative_eq!(*a, -24.0 * b, epsilon = 1e-13);
    }
    // Σ_a x_a ∇φ_a = e₁, so pairing with nodal x picks χ (n + α) σ₁ |Ω|
    let chemo = asm
        .assemble_chemo_rhs(
            &lp,
            &FieldFn::Constant(0.5),
            &VectorFieldFn::Constant([2.0, -1.0]),
            8.0,
            1.0,
        )
        .unwrap();
    let xs: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
    let paired: f64 = chemo.iter().zip(&xs).map(|(a, b)| a * b).sum();
    assert_relative_eq!(paired, 24.0, epsilon = 1e-12);
    assert!(chemo.iter().sum::<f64>().abs() < 1e-12);
    let buoy = asm
        .assemble_buoyancy_rhs(
            &lu,
            &FieldFn::Constant(0.0),
            &VectorFieldFn::Constant([0.0, -2.0]),
            1.0,
            1.5,
        )
        .unwrap();
    // vertex functions of the second component sum to one
    let e2: Vec<f64> = (0..lu.n_dofs)
        .map(|i| {
            let s = i.checked_sub(lu.component_stride);
            if s.is_some_and(|s| s < lu.n_nodes) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = buoy.iter().zip(&e2).map(|(a, b)| a * b).sum();
    assert_relative_eq!(total, -3.0, epsilon = 1e-12);
    let div = asm
        .assemble_divergence_load(&ls, &FieldFn::Constant(1.0))
        .unwrap();
    let sx: Vec<f64> = mesh
        .nodes
        .iter()
        .map(|p| p[0])
        .chain(mesh.nodes.iter().map(|_| 0.0))
        .collect();
    let d: f64 = div.iter().zip(&sx).map(|(a, b)| a * b).sum();
    assert_relative_eq!(d, 1.0, epsilon = 1e-13);
}

#[test]
fn skew_form_equals_plain_convection_for_solenoidal_field() {
    let mesh = build_rect_mesh(1.0, 1.0, 6, 6).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    // curl of ψ = x(1 − x)y(1 − y): tangential on ∂Ω, divergence free, and
    // cubic so every integrand stays within the rule's degree
    let v = |x: [f64; 2]| {
        let [a, b] = x;
        [
            a * (1.0 - a) * (1.0 - 2.0 * b),
            -(1.0 - 2.0 * a) * b * (1.0 - b),
        ]
    };
    let field = VectorFieldFn::Analytic(&v);
    for kind in [SpaceKind::ScalarP1, SpaceKind::VelocityMini] {
        let l = build_layout(&mesh, kind);
        let n = if kind == SpaceKind::ScalarP1 {
            asm.assemble_skew_a(&l, &field).unwrap().matrix
        } else {
            asm.assemble_skew_b(&l, &field).unwrap().matrix
        };
        let c = plain_convection(&asm, kind, &v);
        let diff = (dense(&n) - &c).norm() / c.norm();
        assert!(diff < 1e-12, "{kind:?}: {diff:e}");
    }
}

#[test]
fn pressure_coupling_integrates_divergence() {
    let mesh = build_rect_mesh(2.0, 1.0, 4, 2).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    let lu = build_layout(&mesh, SpaceKind::VelocityMini);
    let lp = build_layout(&mesh, SpaceKind::PressureP1);
    let g = asm
        .assemble_pressure_coupling(&lu, &lp, 1.0)
        .unwrap()
        .matrix;
    let mut u = vec![0.0; lu.n_dofs];
    for (i, p) in mesh.nodes.iter().enumerate() {
        u[i] = p[0];
    }
    let ones = vec![1.0; lp.n_dofs];
    // ∫ ∇·(x, 0) = |Ω|
    assert_relative_eq!(g.bilinear(&u, &ones), 2.0, epsilon = 1e-13);
}

#[test]
fn mean_constrained_solves_match_bordered_dense_oracle() {
    let mesh = build_rect_mesh(1.0, 1.0, 4, 4).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    let l = build_layout(&mesh, SpaceKind::ScalarP1);
    let m = asm.assemble_mass(&l).unwrap().matrix;
    let k = asm.assemble_stiffness(&l, 1.0).unwrap().matrix;
    let w = asm.mean_weights(&l).unwrap();
    let b: Vec<f64> = (0..l.n_dofs).map(|i| (i as f64 * 0.7).sin()).collect();
    let balanced: Vec<f64> = {
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        b.iter().map(|v| v - mean).collect()
    };
    for (a, rhs, kernel) in [
        (m.add(10.0, &k, 1.0).unwrap(), &b, MeanKernel::Regular),
        (k.clone(), &balanced, MeanKernel::Constant),
    ] {
        let (x, _, report) = solve_mean_constrained(&a, rhs, 0, &w, kernel, "test").unwrap();
        assert!(report.within_tolerance());
        let bordered = append_mean_constraint(
            &LinearSystem {
                matrix: a.clone(),
                rhs: rhs.clone(),
            },
            0,
            &w,
        )
        .unwrap();
        let oracle = dense_solve(&bordered.matrix, &bordered.rhs);
        for (p, q) in x.iter().zip(&oracle) {
            assert_relative_eq!(*p, *q, epsilon = 1e-10);
        }
        assert!(asm.integral(&l, &x).unwrap().abs() < 1e-13);
    }
}

#[test]
fn sparse_lu_matches_dense_oracle() {
    let entries = [
        (0, 0, 4.0),
        (0, 2, 1.0),
        (1, 1, 3.0),
        (1, 0, -1.0),
        (2, 2, 5.0),
        (2, 1, 2.0),
        (0, 0, 1.0),
        (3, 3, 1.0),
        (3, 0, 0.5),
    ];
    let a = SparseMatrix::from_triplets(4, 4, &entries).unwrap();
    assert_eq!(a.get(0, 0), 5.0);
    let b = [1.0, 2.0, 3.0, 4.0];
    let (x, report) = LuFactorization::new(&a, "t").unwrap().solve(&b).unwrap();
    assert!(report.within_tolerance());
    for (p, q) in x.iter().zip(dense_solve(&a, &b)) {
        assert_relative_eq!(*p, q, epsilon = 1e-14);
    }
    let y = dense(&a) * DVector::from_column_slice(&x);
    assert_relative_eq!(y.as_slice(), &b[..], epsilon = 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn transport_forms_are_skew(
        coeffs in prop::collection::vec(-2.0f64..2.0, 2 * (16 + 18)),
        x in prop::collection::vec(-1.0f64..1.0, 2 * (16 + 18)),
    ) {
        let mesh = build_rect_mesh(1.0, 1.0, 3, 3).unwrap();
        let asm = Assembler::new(&mesh).unwrap();
        let lu = build_layout(&mesh, SpaceKind::VelocityMini);
        let lp = build_layout(&mesh, SpaceKind::ScalarP1);
        let v = VectorFieldFn::Discrete { layout: &lu, coeffs: &coeffs };
        let b = asm.assemble_skew_b(&lu, &v).unwrap().matrix;
        let a = asm.assemble_skew_a(&lp, &v).unwrap().matrix;
        let xn: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!(b.bilinear(&x, &x).abs() <= 1e-12 * b.frobenius_norm() * xn);
        let xp = &x[..lp.n_dofs];
        let xpn: f64 = xp.iter().map(|v| v * v).sum();
        prop_assert!(a.bilinear(xp, xp).abs() <= 1e-12 * a.frobenius_norm() * xpn);
    }

    #[test]
    fn mass_is_positive(x in prop::collection::vec(-1.0f64..1.0, 15), kx in 1usize..5) {
        let mesh = build_rect_mesh(1.5, 1.0, kx, 2).unwrap();
        let asm = Assembler::new(&mesh).unwrap();
        let l = build_layout(&mesh, SpaceKind::ScalarP1);
        let m = asm.assemble_mass(&l).unwrap().matrix;
        let x = &x[..l.n_dofs];
        prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
        prop_assert!(m.bilinear(x, x) > 0.0);
    }

    #[test]
    fn assembly_is_order_independent(seed in any::<u64>()) {
        let mesh = build_rect_mesh(1.0, 1.0, 2, 2).unwrap();
        let asm = Assembler::new(&mesh).unwrap();
        let l = build_layout(&mesh, SpaceKind::ScalarP1);
        let k = asm.assemble_stiffness(&l, 1.0).unwrap().matrix;
        let mut t = k.triplets();
        let mut s = seed;
        for i in (1..t.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            t.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled = SparseMatrix::from_triplets(k.nrows(), k.ncols(), &t).unwrap();
        let d = dense(&k) - dense(&shuffled);
        prop_assert!(d.amax() <= 1e-15);
    }
}
