//! Real spherical-harmonic decomposition with ridge-regularized least squares.
//!
//! Basis functions are orthonormal over the sphere and carry no
//! Condon–Shortley phase. Index `n = l² + l + m` for `-l <= m <= l`;
//! `m > 0` uses `cos(mφ)`, `m < 0` uses `sin(|m|φ)`, with φ the azimuth and
//! θ = 90° − elevation the polar angle.

use ndarray::{Array2, Array3, ArrayView3, Axis};

use super::BaselineError;
use crate::types::{Direction, EARS};

pub fn n_basis(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// `l_max = ⌊√M⌋ − 1`, floored at zero.
pub fn default_l_max(m: usize) -> usize {
    ((m as f64).sqrt().floor() as usize).saturating_sub(1)
}

pub const DEFAULT_LAMBDA: f64 = 1e-3;

/// All `(l_max+1)²` basis values at one direction.
pub fn sh_values(l_max: usize, dir: &Direction) -> Vec<f64> {
    let theta = (90.0 - dir.elevation_deg()).to_radians();
    let phi = dir.azimuth_deg().to_radians();
    let (s, x) = theta.sin_cos();
    let legendre = normalized_legendre(l_max, x, s);
    let mut out = vec![0.0; n_basis(l_max)];
    let sqrt2 = std::f64::consts::SQRT_2;
    for l in 0..=l_max {
        out[l * l + l] = legendre[lm_index(l, 0)];
        for m in 1..=l {
            let q = legendre[lm_index(l, m)] * sqrt2;
            let (sm, cm) = (m as f64 * phi).sin_cos();
            out[l * l + l + m] = q * cm;
            out[l * l + l - m] = q * sm;
        }
    }
    out
}

fn lm_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// `N_lm · P_l^m(x)` for `0 <= m <= l <= l_max`, where `N_lm` makes the
/// complex-free `m = 0` harmonic orthonormal. Built by the standard
/// three-term recurrence on normalized values, which stays bounded for
/// large `l`.
fn normalized_legendre(l_max: usize, x: f64, s: f64) -> Vec<f64> {
    let mut q = vec![0.0; lm_index(l_max, l_max) + 1];
    q[0] = 0.5 / std::f64::consts::PI.sqrt();
    for m in 1..=l_max {
        let prev = q[lm_index(m - 1, m - 1)];
        q[lm_index(m, m)] = prev * ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
    }
    for m in 0..l_max {
        q[lm_index(m + 1, m)] = x * ((2 * m + 3) as f64).sqrt() * q[lm_index(m, m)];
    }
    for m in 0..=l_max {
        for l in m + 2..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            q[lm_index(l, m)] = a * (x * q[lm_index(l - 1, m)] - b * q[lm_index(l - 2, m)]);
        }
    }
    q
}

/// Basis evaluated at a fixed list of directions: `n_dirs × n_basis`.
#[derive(Debug, Clone)]
pub struct ShBasis {
    l_max: usize,
    matrix: Array2<f64>,
}

impl ShBasis {
    pub fn new(l_max: usize, directions: &[Direction]) -> Self {
        let nb = n_basis(l_max);
        let mut matrix = Array2::zeros((directions.len(), nb));
        for (row, d) in directions.iter().enumerate() {
            for (col, v) in sh_values(l_max, d).into_iter().enumerate() {
                matrix[[row, col]] = v;
            }
        }
        Self { l_max, matrix }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn n_basis(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

/// Fitted coefficients `a[n, e, f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficients {
    pub l_max: usize,
    pub a: Array3<f64>,
}

/// Solves `(ΦᵀΦ + λI) a = Φᵀh` independently for every `(ear, bin)` column,
/// sharing one Cholesky factorization.
pub fn sh_fit(
    measured: ArrayView3<'_, f64>,
    directions: &[Direction],
    l_max: usize,
    lambda: f64,
) -> Result<ShCoefficients, BaselineError> {
    let (m, ears, f) = measured.dim();
    if m == 0 {
        return Err(BaselineError::NoMeasurements);
    }
    if ears != EARS || directions.len() != m {
        return Err(BaselineError::Shape(format!(
            "measured {:?} vs {} directions",
            measured.shape(),
            directions.len()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(BaselineError::InvalidParameter(format!("lambda = {lambda}")));
    }
    let nb = n_basis(l_max);
    if lambda == 0.0 && m < nb {
        return Err(BaselineError::RankDeficient { l_max, m });
    }
    let basis = ShBasis::new(l_max, directions);
    let phi = basis.matrix();
    let mut gram = phi.t().dot(phi);
    for i in 0..nb {
        gram[[i, i]] += lambda;
    }
    let chol = cholesky(&gram).ok_or(BaselineError::RankDeficient { l_max, m })?;

    let h = measured
        .to_owned()
        .into_shape_with_order((m, EARS * f))
        .expect("contiguous");
    let rhs = phi.t().dot(&h);
    let mut a = Array2::zeros((nb, EARS * f));
    for (col, mut out) in rhs.axis_iter(Axis(1)).zip(a.axis_iter_mut(Axis(1))) {
        let x = cholesky_solve(&chol, col.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| col.to_vec()));
        for (o, v) in out.iter_mut().zip(x) {
            *o = v;
        }
    }
    Ok(ShCoefficients {
        l_max,
        a: a.into_shape_with_order((nb, EARS, f)).expect("contiguous"),
    })
}

/// `Σ_n a_n(e,f) Φ_n(d)` at each target.
pub fn sh_eval(coeffs: &ShCoefficients, targets: &[Direction]) -> Array3<f64> {
    let (nb, ears, f) = coeffs.a.dim();
    let basis = ShBasis::new(coeffs.l_max, targets);
    debug_assert_eq!(basis.n_basis(), nb);
    let a = coeffs
        .a
        .view()
        .into_shape_with_order((nb, ears * f))
        .expect("contiguous");
    basis
        .matrix()
        .dot(&a)
        .into_shape_with_order((targets.len(), ears, f))
        .expect("contiguous")
}

/// Fit with the given order and regularization, then evaluate at the targets.
pub fn sh_interpolate(
    measured: ArrayView3<'_, f64>,
    directions: &[Direction],
    targets: &[Direction],
    l_max: usize,
    lambda: f64,
) -> Result<Array3<f64>, BaselineError> {
    Ok(sh_eval(&sh_fit(measured, directions, l_max, lambda)?, targets))
}

/// Lower-triangular factor of a symmetric positive-definite matrix, or `None`
/// when a pivot falls below a relative threshold.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-12;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > tol) {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Array2<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
    b
}
