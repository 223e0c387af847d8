//! Finite-difference residual oracle for the manufactured forcing.

#![allow(dead_code)]

use chemoflow_core::manufactured::ExactSolution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;

/// Fourth-order central difference of `f` along `dir` (0 = x, 1 = y, 2 = t).
pub fn d1(f: &dyn Fn([f64; 3]) -> f64, p: [f64; 3], dir: usize) -> f64 {
    let at = |s: f64| {
        let mut q = p;
        q[dir] += s * H;
        f(q)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * H)
}

pub fn d2(f: &dyn Fn([f64; 3]) -> f64, p: [f64; 3], dir: usize) -> f64 {
    let at = |s: f64| {
        let mut q = p;
        q[dir] += s * H;
        f(q)
    };
    (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * H * H)
}

pub fn lap(f: &dyn Fn([f64; 3]) -> f64, p: [f64; 3]) -> f64 {
    d2(f, p, 0) + d2(f, p, 1)
}

pub struct Oracle {
    pub ex: ExactSolution,
}

impl Oracle {
    pub fn eta(&self, p: [f64; 3]) -> f64 {
        self.ex.eta([p[0], p[1]], p[2])
    }
    pub fn c(&self, p: [f64; 3]) -> f64 {
        self.ex.c([p[0], p[1]], p[2])
    }
    pub fn u(&self, p: [f64; 3], i: usize) -> f64 {
        self.ex.u([p[0], p[1]], p[2])[i]
    }
    pub fn pi(&self, p: [f64; 3]) -> f64 {
        self.ex.pi([p[0], p[1]], p[2])
    }

    pub fn g_n(&self, p: [f64; 3]) -> f64 {
        let pr = &self.ex.params;
        let eta = |q| self.eta(q);
        let flux = |i: usize| move |q: [f64; 3]| self.eta(q) * d1(&|r| self.c(r), q, i);
        d1(&eta, p, 2) + self.u(p, 0) * d1(&eta, p, 0) + self.u(p, 1) * d1(&eta, p, 1)
            - pr.d_n * lap(&eta, p)
            + pr.chi * (d1(&flux(0), p, 0) + d1(&flux(1), p, 1))
    }

    pub fn g_c(&self, p: [f64; 3]) -> f64 {
        let pr = &self.ex.params;
        let c = |q| self.c(q);
        d1(&c, p, 2) + self.u(p, 0) * d1(&c, p, 0) + self.u(p, 1) * d1(&c, p, 1)
            - pr.d_c * lap(&c, p)
            + pr.gamma * self.eta(p) * self.c(p)
    }

    pub fn g_u(&self, p: [f64; 3], i: usize) -> f64 {
        let pr = &self.ex.params;
        let ui = |q| self.u(q, i);
        d1(&ui, p, 2) + self.u(p, 0) * d1(&ui, p, 0) + self.u(p, 1) * d1(&ui, p, 1)
            - pr.d_u / pr.rho * lap(&ui, p)
            + d1(&|q| self.pi(q), p, i) / pr.rho
            - self.eta(p) * pr.grad_phi[i] / pr.rho
    }
}

pub fn random_points(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..0.01),
            ]
        })
        .collect()
}
