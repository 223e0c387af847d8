//! Invariant suite behind the `check` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{Assembler, VectorFieldFn};
use crate::io::config::DropInitialData;
use crate::mesh::build_rect_mesh;
use crate::scheme::{InitMode, ModelParams, Scheme};
use crate::spaces::{build_layout, SpaceKind};
use crate::sparse::norm2;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value.is_finite() && value <= tolerance,
            value,
            tolerance,
        }
    }
}

/// Largest `|xᵀNx| / (‖N‖_F ‖x‖²)` over random velocity fields and vectors
/// for both transport forms on a `k × k` mesh.
pub fn skew_symmetry(k: usize, n_fields: usize, n_vectors: usize, seed: u64) -> Result<f64> {
    let mesh = build_rect_mesh(1.0, 1.0, k, k)?;
    let asm = Assembler::new(&mesh)?;
    let lu = build_layout(&mesh, SpaceKind::VelocityMini);
    let lp = build_layout(&mesh, SpaceKind::ScalarP1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_fields {
        let mut coeffs: Vec<f64> = (0..lu.n_dofs)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        lu.apply_constraint_values(&mut coeffs);
        let v = VectorFieldFn::Discrete {
            layout: &lu,
            coeffs: &coeffs,
        };
        for n in [
            asm.assemble_skew_a(&lp, &v)?.matrix,
            asm.assemble_skew_b(&lu, &v)?.matrix,
        ] {
            let fro = n.frobenius_norm();
            for _ in 0..n_vectors {
                let x: Vec<f64> = (0..n.nrows())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let nx = norm2(&x);
                worst = worst.max(n.bilinear(&x, &x).abs() / (fro * nx * nx));
            }
        }
    }
    Ok(worst)
}

/// Short drop-experiment run checking mass, zero means, constraints and
/// discrete incompressibility.
pub fn drop_run_checks(kx: usize, ky: usize, dt: f64, n_steps: usize) -> Result<Vec<CheckOutcome>> {
    let mesh = build_rect_mesh(2.0, 1.0, kx, ky)?;
    let scheme = Scheme::new(&mesh, ModelParams::drop_experiment(), dt)?;
    let init = scheme.init_state(&DropInitialData, InitMode::Elliptic)?;
    let mass0 = scheme.mass_of_eta(&init);
    let l = scheme.layouts();
    let mut drift: f64 = 0.0;
    let mut n_mean: f64 = 0.0;
    let mut pi_mean: f64 = 0.0;
    let mut div: f64 = 0.0;
    let mut pinned: f64 = 0.0;
    let mut residual: f64 = 0.0;
    scheme.run(init, n_steps, None, |s, d| {
        drift = drift.max((d.mass - mass0).abs() / mass0.abs());
        let area = mesh.domain_area();
        let scale = |v: &[f64]| v.iter().fold(1.0_f64, |m, x| m.max(x.abs())) * area;
        n_mean = n_mean.max(d.n_integral.abs() / scale(&s.n));
        pi_mean = pi_mean.max(d.pi_integral.abs() / scale(&s.pi));
        let umax = s.u.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        div = div.max(d.div_residual / (umax * mesh.h));
        for &i in &l.sigma.constrained_dofs {
            pinned = pinned.max(s.sigma[i].abs());
        }
        for &i in &l.u.constrained_dofs {
            pinned = pinned.max(s.u[i].abs());
        }
        if let Some(r) = &d.reports {
            residual = residual.max(r.max_relative_residual());
        }
        Ok(())
    })?;
    Ok(vec![
        CheckOutcome::new("mass conservation (relative drift)", drift, 1e-10),
        CheckOutcome::new("zero mean of n (relative)", n_mean, 1e-11),
        CheckOutcome::new("zero mean of pressure (relative)", pi_mean, 1e-11),
        CheckOutcome::new("discrete incompressibility (relative)", div, 1e-9),
        CheckOutcome::new("constrained dofs stay zero", pinned, 0.0),
        CheckOutcome::new(
            "solve residuals (relative)",
            residual,
            crate::sparse::RESIDUAL_TOLERANCE,
        ),
    ])
}

/// The full suite run by `chemoflow check`.
pub fn run_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = vec![CheckOutcome::new(
        "skew-symmetry of transport forms",
        skew_symmetry(10, 5, 20, 7)?,
        1e-12,
    )];
    out.extend(drop_run_checks(20, 10, 1e-5, 10)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_forms_are_skew() {
        assert!(skew_symmetry(3, 2, 5, 1).unwrap() < 1e-12);
    }

    #[test]
    fn short_drop_run_passes() {
        for c in drop_run_checks(8, 4, 1e-5, 3).unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}
