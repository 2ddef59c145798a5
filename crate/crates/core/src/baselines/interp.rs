//! Nearest-neighbor and distance-weighted interpolation over measured
//! directions.

use ndarray::{Array3, ArrayView3, Axis};

use super::{check_measured, BaselineError};
use crate::types::{angle_between, Direction};

/// A nonnegative spatial weight between a target and a measured direction.
pub trait WeightKernel {
    fn weight(&self, target: &Direction, measured: &Direction) -> f64;
}

impl<F: Fn(&Direction, &Direction) -> f64> WeightKernel for F {
    fn weight(&self, target: &Direction, measured: &Direction) -> f64 {
        self(target, measured)
    }
}

/// `w = 1 / (gcd + ε)²` with the great-circle distance in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDistanceSquared {
    pub eps_rad: f64,
}

impl Default for InverseDistanceSquared {
    fn default() -> Self {
        Self { eps_rad: 1e-6 }
    }
}

impl WeightKernel for InverseDistanceSquared {
    fn weight(&self, target: &Direction, measured: &Direction) -> f64 {
        let g = angle_between(&target.to_cartesian(), &measured.to_cartesian());
        1.0 / ((g + self.eps_rad) * (g + self.eps_rad))
    }
}

/// Each target copies the spectrum of its great-circle-nearest measurement;
/// ties go to the lowest measured index.
pub fn nearest_neighbor(
    measured: ArrayView3<'_, f64>,
    directions: &[Direction],
    targets: &[Direction],
) -> Result<Array3<f64>, BaselineError> {
    check_measured(measured, directions)?;
    let src: Vec<[f64; 3]> = directions.iter().map(Direction::to_cartesian).collect();
    let picks: Vec<usize> = targets
        .iter()
        .map(|t| {
            let tv = t.to_cartesian();
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, s) in src.iter().enumerate() {
                let d = angle_between(&tv, s);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(measured.select(Axis(0), &picks))
}

/// Weighted mean of the measured spectra, normalized by the weight sum.
pub fn distance_weighted<K: WeightKernel + ?Sized>(
    measured: ArrayView3<'_, f64>,
    directions: &[Direction],
    targets: &[Direction],
    kernel: &K,
) -> Result<Array3<f64>, BaselineError> {
    check_measured(measured, directions)?;
    let (_, ears, f) = measured.dim();
    let mut out = Array3::zeros((targets.len(), ears, f));
    for (ti, t) in targets.iter().enumerate() {
        let weights: Vec<f64> = directions.iter().map(|d| kernel.weight(t, d)).collect();
        if let Some(&bad) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(BaselineError::InvalidParameter(format!("kernel weight {bad}")));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(BaselineError::ZeroWeights { target: ti });
        }
        let mut row = out.index_axis_mut(Axis(0), ti);
        for (w, src) in weights.iter().zip(measured.axis_iter(Axis(0))) {
            if *w > 0.0 {
                row.scaled_add(w / total, &src);
            }
        }
    }
    Ok(out)
}
