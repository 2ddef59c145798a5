//! Spherical Delaunay triangulation and barycentric interpolation.
//!
//! For points on the unit sphere the Delaunay triangulation is the convex
//! hull of the points. Facets are found by exhaustive plane tests, so
//! co-circular vertex groups (common on symmetric measurement grids) are
//! merged into one polygon and fan-triangulated instead of producing
//! overlapping triangles.

use std::collections::HashSet;

use ndarray::{Array3, ArrayView3, Axis};

use super::interp::{distance_weighted, InverseDistanceSquared};
use super::{check_measured, BaselineError};
use crate::types::{angle_between, cross, dot, Direction, DIRECTION_EPS_RAD};

const PLANE_EPS: f64 = 1e-10;
const INSIDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SphericalTriangulation {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

/// Where a target landed and the normalized weights of the three vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub vertices: [usize; 3],
    pub weights: [f64; 3],
    /// `false` when the target is outside every triangle cone and the
    /// weights were clamped and renormalized.
    pub inside: bool,
}

impl SphericalTriangulation {
    /// Returns `None` when no facet faces away from the origin, e.g. fewer
    /// than three points or all points on one great circle.
    pub fn new(points: &[[f64; 3]]) -> Option<Self> {
        let n = points.len();
        if n < 3 {
            return None;
        }
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let mut triangles = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (pi, pj, pk) = (points[i], points[j], points[k]);
                    let mut normal = cross(&sub(&pj, &pi), &sub(&pk, &pi));
                    let len = dot(&normal, &normal).sqrt();
                    if len < 1e-12 {
                        continue;
                    }
                    normal = scale(&normal, 1.0 / len);
                    let offset = dot(&normal, &pi);
                    let mut above = false;
                    let mut below = false;
                    let mut coplanar = vec![i, j, k];
                    for (l, p) in points.iter().enumerate() {
                        if l == i || l == j || l == k {
                            continue;
                        }
                        let s = dot(&normal, p) - offset;
                        if s > PLANE_EPS {
                            above = true;
                        } else if s < -PLANE_EPS {
                            below = true;
                        } else {
                            coplanar.push(l);
                        }
                        if above && below {
                            break;
                        }
                    }
                    if above && below {
                        continue;
                    }
                    // Outward normal: points on the other side, or away from
                    // the origin when everything is coplanar.
                    let (normal, offset) = if above || (!below && offset < 0.0) {
                        (scale(&normal, -1.0), -offset)
                    } else {
                        (normal, offset)
                    };
                    // Facets whose plane does not separate them from the
                    // origin face inward and are not part of the spherical
                    // triangulation.
                    if offset <= PLANE_EPS {
                        continue;
                    }
                    coplanar.sort_unstable();
                    if !seen.insert(coplanar.clone()) {
                        continue;
                    }
                    triangulate_facet(points, &coplanar, &normal, &mut triangles);
                }
            }
        }
        if triangles.is_empty() {
            return None;
        }
        Some(Self {
            vertices: points.to_vec(),
            triangles,
        })
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Coefficients `b` with `t = Σ b_i v_i`.
    fn cone_coords(&self, tri: &[usize; 3], t: &[f64; 3]) -> [f64; 3] {
        let [a, b, c] = tri.map(|v| self.vertices[v]);
        let det = dot(&a, &cross(&b, &c));
        [
            dot(t, &cross(&b, &c)) / det,
            dot(t, &cross(&c, &a)) / det,
            dot(t, &cross(&a, &b)) / det,
        ]
    }

    /// Normalized spherical barycentric coordinates of `t`: the planar
    /// barycentric coordinates of its gnomonic projection onto the
    /// containing triangle.
    pub fn locate(&self, t: &[f64; 3]) -> Location {
        for (ti, tri) in self.triangles.iter().enumerate() {
            let b = self.cone_coords(tri, t);
            let sum: f64 = b.iter().sum();
            if sum > 0.0 && b.iter().all(|&x| x >= -INSIDE_EPS * sum) {
                if let Some(k) = tri.iter().position(|&v| angle_between(t, &self.vertices[v]) <= DIRECTION_EPS_RAD) {
                    let mut weights = [0.0; 3];
                    weights[k] = 1.0;
                    return Location {
                        triangle: ti,
                        vertices: *tri,
                        weights,
                        inside: true,
                    };
                }
                let clamped = b.map(|x| x.max(0.0));
                let total: f64 = clamped.iter().sum();
                return Location {
                    triangle: ti,
                    vertices: *tri,
                    weights: clamped.map(|x| x / total),
                    inside: true,
                };
            }
        }
        self.locate_exterior(t)
    }

    fn locate_exterior(&self, t: &[f64; 3]) -> Location {
        let (ti, tri) = self
            .triangles
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                let ca = dot(t, &self.centroid(a));
                let cb = dot(t, &self.centroid(b));
                ca.partial_cmp(&cb).expect("finite")
            })
            .expect("non-empty triangulation");
        let b = self.cone_coords(tri, t).map(|x| x.max(0.0));
        let total: f64 = b.iter().sum();
        let weights = if total > 0.0 {
            b.map(|x| x / total)
        } else {
            let mut w = [0.0; 3];
            let nearest = (0..3)
                .max_by(|&i, &j| {
                    dot(t, &self.vertices[tri[i]])
                        .partial_cmp(&dot(t, &self.vertices[tri[j]]))
                        .expect("finite")
                })
                .expect("three vertices");
            w[nearest] = 1.0;
            w
        };
        Location {
            triangle: ti,
            vertices: *tri,
            weights,
            inside: false,
        }
    }

    fn centroid(&self, tri: &[usize; 3]) -> [f64; 3] {
        let s = tri.iter().fold([0.0; 3], |acc, &v| add(&acc, &self.vertices[v]));
        scale(&s, 1.0 / dot(&s, &s).sqrt())
    }
}

fn triangulate_facet(points: &[[f64; 3]], idx: &[usize], normal: &[f64; 3], out: &mut Vec<[usize; 3]>) {
    let orient = |tri: [usize; 3]| {
        let n = cross(
            &sub(&points[tri[1]], &points[tri[0]]),
            &sub(&points[tri[2]], &points[tri[0]]),
        );
        if dot(&n, normal) < 0.0 {
            [tri[0], tri[2], tri[1]]
        } else {
            tri
        }
    };
    if idx.len() == 3 {
        out.push(orient([idx[0], idx[1], idx[2]]));
        return;
    }
    let centre = scale(
        &idx.iter().fold([0.0; 3], |acc, &v| add(&acc, &points[v])),
        1.0 / idx.len() as f64,
    );
    let u = {
        let r = sub(&points[idx[0]], &centre);
        scale(&r, 1.0 / dot(&r, &r).sqrt())
    };
    let w = cross(normal, &u);
    let mut ring: Vec<(f64, usize)> = idx
        .iter()
        .map(|&v| {
            let r = sub(&points[v], &centre);
            (dot(&r, &w).atan2(dot(&r, &u)), v)
        })
        .collect();
    ring.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    for k in 1..ring.len() - 1 {
        out.push(orient([ring[0].1, ring[k].1, ring[k + 1].1]));
    }
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Why barycentric interpolation did not use a triangulation for some or all
/// targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarycentricFallback {
    /// Fewer than three measurements or all on one great circle; every
    /// target used inverse-distance weighting instead.
    DistanceWeighted,
}

#[derive(Debug, Clone)]
pub struct BarycentricResult {
    pub values: Array3<f64>,
    pub fallback: Option<BarycentricFallback>,
    /// Targets outside every triangle, interpolated with clamped weights of
    /// the nearest triangle.
    pub extrapolated: Vec<usize>,
}

pub fn barycentric(
    measured: ArrayView3<'_, f64>,
    directions: &[Direction],
    targets: &[Direction],
) -> Result<BarycentricResult, BaselineError> {
    check_measured(measured, directions)?;
    let pts: Vec<[f64; 3]> = directions.iter().map(Direction::to_cartesian).collect();
    let Some(tri) = SphericalTriangulation::new(&pts) else {
        let values = distance_weighted(measured, directions, targets, &InverseDistanceSquared::default())?;
        return Ok(BarycentricResult {
            values,
            fallback: Some(BarycentricFallback::DistanceWeighted),
            extrapolated: Vec::new(),
        });
    };
    let (_, ears, f) = measured.dim();
    let mut values = Array3::zeros((targets.len(), ears, f));
    let mut extrapolated = Vec::new();
    for (ti, t) in targets.iter().enumerate() {
        let loc = tri.locate(&t.to_cartesian());
        if !loc.inside {
            extrapolated.push(ti);
        }
        let mut row = values.index_axis_mut(Axis(0), ti);
        for (v, w) in loc.vertices.iter().zip(loc.weights) {
            if w > 0.0 {
                row.scaled_add(w, &measured.index_axis(Axis(0), *v));
            }
        }
    }
    Ok(BarycentricResult {
        values,
        fallback: None,
        extrapolated,
    })
}
