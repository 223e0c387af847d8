//! Symmetric quadrature rules on triangles.
//!
//! Rules are stored as symmetry orbits of barycentric points. Weights are
//! normalized to sum to one, so `∫_K f ≈ |K| Σ wᵢ f(pᵢ)`.

#![allow(clippy::excessive_precision)]

use crate::mesh::ElementGeometry;
use crate::{Error, Result};

/// Highest supported exactness degree.
pub const MAX_DEGREE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    /// Polynomial degree integrated exactly.
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Orbit {
    /// Centroid.
    S3(f64),
    /// `(a, a, 1 − 2a)` and permutations, weight per point.
    S21(f64, f64),
    /// `(a, b, 1 − a − b)` and permutations, weight per point.
    S111(f64, f64, f64),
}

// Orbit parameters refined to full double precision against the moment
// equations of the reference triangle.
const DEG1: &[Orbit] = &[Orbit::S3(1.0)];

const DEG2: &[Orbit] = &[Orbit::S21(1.0 / 6.0, 1.0 / 3.0)];

const DEG4: &[Orbit] = &[
    Orbit::S21(0.445_948_490_915_964_886_32, 0.223_381_589_678_011_465_7),
    Orbit::S21(0.091_576_213_509_770_743_46, 0.109_951_743_655_321_867_64),
];

const DEG5: &[Orbit] = &[
    Orbit::S3(0.225),
    Orbit::S21(0.470_142_064_105_115_089_77, 0.132_394_152_788_506_180_74),
    Orbit::S21(0.101_286_507_323_456_338_8, 0.125_939_180_544_827_152_6),
];

const DEG6: &[Orbit] = &[
    Orbit::S21(0.249_286_745_170_910_421_29, 0.116_786_275_726_379_366_03),
    Orbit::S21(0.063_089_014_491_502_228_34, 0.050_844_906_370_206_816_921),
    Orbit::S111(
        0.053_145_049_844_816_947_353,
        0.310_352_451_033_784_405_42,
        0.082_851_075_618_373_575_194,
    ),
];

const DEG8: &[Orbit] = &[
    Orbit::S3(0.144_315_607_677_787_168_25),
    Orbit::S21(0.459_292_588_292_723_156_03, 0.095_091_634_267_284_624_794),
    Orbit::S21(0.170_569_307_751_760_206_62, 0.103_217_370_534_718_250_28),
    Orbit::S21(0.050_547_228_317_030_975_458, 0.032_458_497_623_198_080_311),
    Orbit::S111(
        0.008_394_777_409_957_605_337_2,
        0.263_112_829_634_638_113_42,
        0.027_230_314_174_434_994_265,
    ),
];

/// Smallest tabulated rule exact to at least `degree`.
pub fn triangle_rule(degree: usize) -> Result<TriangleRule> {
    let (actual, orbits) = match degree {
        1 => (1, DEG1),
        2 => (2, DEG2),
        3 | 4 => (4, DEG4),
        5 => (5, DEG5),
        6 => (6, DEG6),
        7 | 8 => (8, DEG8),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "quadrature degree {degree} not supported (1..={MAX_DEGREE})"
            )))
        }
    };
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for orbit in orbits {
        match *orbit {
            Orbit::S3(w) => {
                let t = 1.0 / 3.0;
                points.push([t, t, t]);
                weights.push(w);
            }
            Orbit::S21(a, w) => {
                let b = 1.0 - 2.0 * a;
                for p in [[a, a, b], [a, b, a], [b, a, a]] {
                    points.push(p);
                    weights.push(w);
                }
            }
            Orbit::S111(a, b, w) => {
                let c = 1.0 - a - b;
                for p in [
                    [a, b, c],
                    [a, c, b],
                    [b, a, c],
                    [b, c, a],
                    [c, a, b],
                    [c, b, a],
                ] {
                    points.push(p);
                    weights.push(w);
                }
            }
        }
    }
    Ok(TriangleRule {
        degree: actual,
        points,
        weights,
    })
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Iterate `(barycentric point, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = ([f64; 3], f64)> + '_ {
        self.points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

/// Area-weighted quadrature sum of `f(bary, x)` over one triangle.
pub fn integrate<F>(rule: &TriangleRule, geom: &ElementGeometry, f: F) -> f64
where
    F: Fn([f64; 3], [f64; 2]) -> f64,
{
    geom.area * rule.iter().map(|(p, w)| w * f(p, geom.map(p))).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> ElementGeometry {
        ElementGeometry::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap()
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn unsupported_degrees() {
        assert!(triangle_rule(0).is_err());
        assert!(triangle_rule(9).is_err());
    }

    #[test]
    fn rule_invariants() {
        for d in 1..=MAX_DEGREE {
            let r = triangle_rule(d).unwrap();
            assert!(r.degree >= d);
            let wsum: f64 = r.weights.iter().sum();
            assert!((wsum - 1.0).abs() < 1e-14, "degree {d}: {wsum}");
            for p in &r.points {
                assert!(p.iter().all(|&l| (0.0..=1.0).contains(&l)));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
            assert!(r.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn constant_and_linear() {
        let g = reference();
        let r = triangle_rule(1).unwrap();
        assert!((integrate(&r, &g, |_, _| 1.0) - 0.5).abs() < 1e-15);
        assert!((integrate(&r, &g, |_, _| 3.5) - 1.75).abs() < 1e-15);
        assert!((integrate(&r, &g, |l, _| l[0]) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn bubble_products() {
        let g = reference();
        for d in 3..=MAX_DEGREE {
            let r = triangle_rule(d).unwrap();
            let v = integrate(&r, &g, |l, _| l[0] * l[1] * l[2]);
            assert!((v - 1.0 / 120.0).abs() < 1e-15, "degree {d}");
            let v = integrate(&r, &g, |l, _| 27.0 * l[0] * l[1] * l[2]);
            assert!((v - 0.225).abs() < 1e-15, "degree {d}");
        }
        let r = triangle_rule(4).unwrap();
        assert!((integrate(&r, &g, |_, x| x[0].powi(4)) - 1.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn barycentric_factorial_formula() {
        // ∫ λ₁^a λ₂^b λ₃^c = a! b! c! 2|K| / (a + b + c + 2)!
        let g = ElementGeometry::from_vertices([[0.3, -0.2], [1.7, 0.4], [0.1, 1.1]]).unwrap();
        for d in 1..=MAX_DEGREE {
            let r = triangle_rule(d).unwrap();
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let c = d as u32 - a - b;
                    let exact = factorial(a) * factorial(b) * factorial(c) * 2.0 * g.area
                        / factorial(a + b + c + 2);
                    let q = integrate(&r, &g, |l, _| {
                        l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32)
                    });
                    assert!((q - exact).abs() <= 1e-13 * exact, "d={d} ({a},{b},{c})");
                }
            }
        }
    }
}
