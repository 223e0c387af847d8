use approx::assert_relative_eq;
use chemoflow_core::assembly::Assembler;
use chemoflow_core::manufactured::{observed_orders, scalar_error, ExactSolution};
use chemoflow_core::mesh::build_rect_mesh;
use chemoflow_core::scheme::{InitMode, InitialData, ModelParams, Scheme};
use chemoflow_core::spaces::{build_layout, SpaceKind};
use proptest::prelude::*;

mod common;

use common::{d1, lap, random_points, Oracle};

#[test]
fn forcing_matches_finite_difference_residuals() {
    for params in [ModelParams::unit(), ModelParams::drop_experiment()] {
        let ex = ExactSolution::new(params);
        let o = Oracle { ex };
        let scale = if params == ModelParams::unit() {
            1.0
        } else {
            10.0
        };
        for p in random_points(100, 11) {
            let x = [p[0], p[1]];
            assert!(
                (ex.g_n(x, p[2]) - o.g_n(p)).abs() < 1e-6 * scale,
                "g_n at {p:?}"
            );
            assert!(
                (ex.g_c(x, p[2]) - o.g_c(p)).abs() < 1e-6 * scale,
                "g_c at {p:?}"
            );
            let gu = ex.g_u(x, p[2]);
            for (i, g) in gu.iter().enumerate() {
                assert!((g - o.g_u(p, i)).abs() < 1e-6 * scale, "g_u at {p:?}");
            }
        }
    }
}

#[test]
fn sigma_forcing_is_gradient_of_chemical_forcing() {
    let ex = ExactSolution::default();
    for p in random_points(100, 5) {
        let gc = |q: [f64; 3]| ex.g_c([q[0], q[1]], q[2]);
        let gs = ex.g_sigma([p[0], p[1]], p[2]);
        for (i, g) in gs.iter().enumerate() {
            assert!((g - d1(&gc, p, i)).abs() < 1e-6, "{p:?}");
        }
    }
}

#[test]
fn exact_fields_are_consistent() {
    let ex = ExactSolution::default();
    for p in random_points(100, 3) {
        let (x, t) = ([p[0], p[1]], p[2]);
        assert!(ex.div_u(x, t).abs() <= 1e-12);
        let o = Oracle { ex };
        let s = ex.sigma(x, t);
        for (i, s) in s.iter().enumerate() {
            assert!((s - d1(&|q| o.c(q), p, i)).abs() < 1e-8);
            assert!((ex.grad_eta(x, t)[i] - d1(&|q| o.eta(q), p, i)).abs() < 1e-8);
        }
        assert!((ex.lap_u(x, t)[0] - lap(&|q| o.u(q, 0), p)).abs() < 1e-5);
    }
}

#[test]
fn linear_error_field_norms() {
    let mesh = build_rect_mesh(1.0, 1.0, 4, 4).unwrap();
    let asm = Assembler::new(&mesh).unwrap();
    let l = build_layout(&mesh, SpaceKind::ScalarP1);
    let zero = vec![0.0; l.n_dofs];
    let (l2, semi) = scalar_error(&asm, &l, &zero, &|x| (x[0], [1.0, 0.0]));
    assert_relative_eq!(l2, 1.0 / 3f64.sqrt(), epsilon = 1e-14);
    assert_relative_eq!(semi, 1.0, epsilon = 1e-14);
    let nodal: Vec<f64> = mesh.nodes.iter().map(|p| 2.0 * p[0] + p[1]).collect();
    let (l2, semi) = scalar_error(&asm, &l, &nodal, &|x| (2.0 * x[0] + x[1], [2.0, 1.0]));
    assert!(l2 < 1e-14 && semi < 1e-13);
}

struct Uniform;

impl InitialData for Uniform {
    fn eta(&self, _: [f64; 2]) -> f64 {
        2.0
    }
    fn c(&self, _: [f64; 2]) -> f64 {
        3.0
    }
    fn u(&self, _: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }
}

#[test]
fn projection_of_constant_chemical_is_exact() {
    let mesh = build_rect_mesh(1.0, 1.0, 7, 5).unwrap();
    let scheme = Scheme::new(&mesh, ModelParams::unit(), 1e-3).unwrap();
    let s = scheme.init_state(&Uniform, InitMode::Elliptic).unwrap();
    assert!(s.c.iter().all(|v| (v - 3.0).abs() <= 3e-13));
    assert!(s.n.iter().all(|v| v.abs() <= 1e-13));
    assert_relative_eq!(s.alpha, 2.0, epsilon = 1e-14);
}

#[test]
fn stokes_projection_is_divergence_orthogonal() {
    let mesh = build_rect_mesh(1.0, 1.0, 12, 12).unwrap();
    let scheme = Scheme::new(&mesh, ModelParams::unit(), 2e-4).unwrap();
    let s = scheme
        .init_state(&ExactSolution::default(), InitMode::Elliptic)
        .unwrap();
    let div = scheme.divergence_residuals(&s.u);
    assert!(div.iter().all(|v| v.abs() <= 1e-10));
    assert!(
        scheme
            .assembler()
            .integral(&scheme.layouts().pi, &s.pi)
            .unwrap()
            .abs()
            < 1e-13
    );
}

#[test]
fn elliptic_and_nodal_initial_chemical_agree_to_second_order() {
    let ex = ExactSolution::default();
    let mut diffs = Vec::new();
    let ks = [10, 20, 40];
    for k in ks {
        let mesh = build_rect_mesh(1.0, 1.0, k, k).unwrap();
        let scheme = Scheme::new(&mesh, ModelParams::unit(), 2e-4).unwrap();
        let a = scheme.init_state(&ex, InitMode::Elliptic).unwrap();
        let b = scheme.init_state(&ex, InitMode::Nodal).unwrap();
        let l = &scheme.layouts().c;
        let d: Vec<f64> = a.c.iter().zip(&b.c).map(|(p, q)| p - q).collect();
        let (l2, _) = scalar_error(scheme.assembler(), l, &d, &|_| (0.0, [0.0, 0.0]));
        diffs.push(l2);
    }
    let h: Vec<f64> = ks.iter().map(|&k| 1.0 / k as f64).collect();
    for o in observed_orders(&diffs, &h) {
        assert!(o.unwrap() >= 1.9, "{diffs:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn error_norms_vanish_only_on_identical_fields(
        coeffs in prop::collection::vec(-1.0f64..1.0, 9),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let mesh = build_rect_mesh(1.0, 1.0, 2, 2).unwrap();
        let asm = Assembler::new(&mesh).unwrap();
        let l = build_layout(&mesh, SpaceKind::ScalarP1);
        let f = |x: [f64; 2]| (a * x[0] + b * x[1], [a, b]);
        let (l2, semi) = scalar_error(&asm, &l, &coeffs, &f);
        prop_assert!(l2 >= 0.0 && semi >= 0.0);
        let exact: Vec<f64> = mesh.nodes.iter().map(|p| f(*p).0).collect();
        let gap = coeffs.iter().zip(&exact).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if gap > 1e-6 {
            prop_assert!(l2 > 0.0);
        }
    }

    #[test]
    fn observed_order_of_power_law(p in 0.5f64..3.0, c in 1e-3f64..10.0) {
        let h: [f64; 3] = [0.1, 0.05, 1.0 / 30.0];
        let e: Vec<f64> = h.iter().map(|h| c * h.powf(p)).collect();
        for o in observed_orders(&e, &h) {
            prop_assert!((o.unwrap() - p).abs() < 1e-9);
        }
    }
}
