//! Point sets on the unit sphere: Lebedev quadrature rules and a Fibonacci
//! spiral covering.

use crate::types::Direction;

/// A quadrature rule on the unit sphere; weights sum to 1, so
/// `4π · Σ w_i f(x_i)` approximates the surface integral of `f`.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

impl SphereRule {
    pub fn directions(&self) -> Vec<Direction> {
        self.points
            .iter()
            .map(|&p| Direction::from_cartesian(p).expect("unit vector"))
            .collect()
    }
}

/// Lebedev rules with 6, 14, 26, 38 or 50 points (degrees 3, 5, 7, 9, 11).
pub fn lebedev(n_points: usize) -> Option<SphereRule> {
    let mut pts = Vec::new();
    let mut w = Vec::new();
    let degree = match n_points {
        6 => {
            push(&mut pts, &mut w, a1(), 1.0 / 6.0);
            3
        }
        14 => {
            push(&mut pts, &mut w, a1(), 1.0 / 15.0);
            push(&mut pts, &mut w, a3(), 3.0 / 40.0);
            5
        }
        26 => {
            push(&mut pts, &mut w, a1(), 1.0 / 21.0);
            push(&mut pts, &mut w, a2(), 4.0 / 105.0);
            push(&mut pts, &mut w, a3(), 9.0 / 280.0);
            7
        }
        38 => {
            push(&mut pts, &mut w, a1(), 1.0 / 105.0);
            push(&mut pts, &mut w, a3(), 9.0 / 280.0);
            push(
                &mut pts,
                &mut w,
                c1(0.459_700_843_380_983_1, 0.888_073_833_977_115_3),
                1.0 / 35.0,
            );
            9
        }
        50 => {
            push(&mut pts, &mut w, a1(), 4.0 / 315.0);
            push(&mut pts, &mut w, a2(), 64.0 / 2835.0);
            push(&mut pts, &mut w, a3(), 27.0 / 1280.0);
            let l = 1.0 / 11f64.sqrt();
            push(&mut pts, &mut w, bk(l, 3.0 * l), 14641.0 / 725_760.0);
            11
        }
        _ => return None,
    };
    Some(SphereRule {
        points: pts,
        weights: w,
        degree,
    })
}

/// Point counts accepted by [`lebedev`].
pub const LEBEDEV_SIZES: [usize; 5] = [6, 14, 26, 38, 50];

fn push(pts: &mut Vec<[f64; 3]>, w: &mut Vec<f64>, orbit: Vec<[f64; 3]>, weight: f64) {
    w.extend(std::iter::repeat_n(weight, orbit.len()));
    pts.extend(orbit);
}

fn a1() -> Vec<[f64; 3]> {
    let mut v = Vec::with_capacity(6);
    for axis in 0..3 {
        for s in [1.0, -1.0] {
            let mut p = [0.0; 3];
            p[axis] = s;
            v.push(p);
        }
    }
    v
}

fn a2() -> Vec<[f64; 3]> {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = Vec::with_capacity(12);
    for zero in 0..3 {
        for s1 in [a, -a] {
            for s2 in [a, -a] {
                let mut p = [0.0; 3];
                let (i, j) = match zero {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                p[i] = s1;
                p[j] = s2;
                v.push(p);
            }
        }
    }
    v
}

fn a3() -> Vec<[f64; 3]> {
    let b = 1.0 / 3f64.sqrt();
    let mut v = Vec::with_capacity(8);
    for sx in [b, -b] {
        for sy in [b, -b] {
            for sz in [b, -b] {
                v.push([sx, sy, sz]);
            }
        }
    }
    v
}

/// Orbit of `(±l, ±l, ±m)` under coordinate permutation: 24 points.
fn bk(l: f64, m: f64) -> Vec<[f64; 3]> {
    let mut v = Vec::with_capacity(24);
    for odd in 0..3 {
        for s0 in [1.0, -1.0] {
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    let mut p = [l, l, l];
                    p[odd] = m;
                    v.push([p[0] * s0, p[1] * s1, p[2] * s2]);
                }
            }
        }
    }
    v
}

/// Orbit of `(±p, ±q, 0)` under coordinate permutation: 24 points.
fn c1(p: f64, q: f64) -> Vec<[f64; 3]> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
    let mut v = Vec::with_capacity(24);
    for perm in PERMS {
        for s0 in [1.0, -1.0] {
            for s1 in [1.0, -1.0] {
                let base = [p * s0, q * s1, 0.0];
                let mut out = [0.0; 3];
                for k in 0..3 {
                    out[perm[k]] = base[k];
                }
                v.push(out);
            }
        }
    }
    v
}

/// `n` quasi-uniform directions on a golden-angle spiral, index 0 nearest
/// the north pole.
pub fn fibonacci_directions(n: usize) -> Vec<Direction> {
    let golden_deg = 180.0 * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let el = z.clamp(-1.0, 1.0).asin().to_degrees();
            Direction::new(i as f64 * golden_deg, el).expect("valid spiral point")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{angle_between, DIRECTION_EPS_RAD};

    fn double_factorial(n: i64) -> f64 {
        if n <= 0 {
            1.0
        } else {
            n as f64 * double_factorial(n - 2)
        }
    }

    /// Mean of x^a y^b z^c over the unit sphere.
    fn monomial_mean(a: u32, b: u32, c: u32) -> f64 {
        if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
            return 0.0;
        }
        double_factorial(a as i64 - 1) * double_factorial(b as i64 - 1) * double_factorial(c as i64 - 1)
            / double_factorial((a + b + c) as i64 + 1)
    }

    #[test]
    fn lebedev_rules_integrate_monomials_exactly() {
        for n in LEBEDEV_SIZES {
            let rule = lebedev(n).unwrap();
            assert_eq!(rule.points.len(), n);
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for p in &rule.points {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                assert!((r - 1.0).abs() < 1e-14, "n={n} point {p:?}");
            }
            for a in 0..=rule.degree as u32 {
                for b in 0..=rule.degree as u32 - a {
                    for c in 0..=rule.degree as u32 - a - b {
                        let q: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                            .sum();
                        assert!(
                            (q - monomial_mean(a, b, c)).abs() < 1e-13,
                            "n={n} monomial ({a},{b},{c}): {q}"
                        );
                    }
                }
            }
        }
        assert!(lebedev(7).is_none());
    }

    #[test]
    fn spiral_points_are_distinct() {
        let dirs = fibonacci_directions(64);
        let xyz: Vec<_> = dirs.iter().map(Direction::to_cartesian).collect();
        for i in 0..xyz.len() {
            for j in i + 1..xyz.len() {
                assert!(angle_between(&xyz[i], &xyz[j]) > DIRECTION_EPS_RAD);
            }
        }
    }
}
