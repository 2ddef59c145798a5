//! Classical upsampling methods that work on a single subject's measured
//! directions.

pub mod barycentric;
pub mod interp;
pub mod sh;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, ArrayView3};
use thiserror::Error;

pub use barycentric::{barycentric, BarycentricFallback, BarycentricResult, SphericalTriangulation};
pub use interp::{distance_weighted, nearest_neighbor, InverseDistanceSquared, WeightKernel};
pub use sh::{sh_eval, sh_fit, ShBasis, ShCoefficients};

use crate::types::{Direction, EARS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("at least one measured direction is required")]
    NoMeasurements,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("all kernel weights are zero for target {target}")]
    ZeroWeights { target: usize },
    #[error("spherical-harmonic system is rank deficient (l_max = {l_max}, M = {m}); lower l_max or use lambda > 0")]
    RankDeficient { l_max: usize, m: usize },
    #[error("unknown baseline method '{0}' (expected nearest, distw, barycentric or sh)")]
    UnknownMethod(String),
}

pub(crate) fn check_measured(measured: ArrayView3<'_, f64>, directions: &[Direction]) -> Result<(), BaselineError> {
    let (m, ears, _) = measured.dim();
    if m == 0 {
        return Err(BaselineError::NoMeasurements);
    }
    if ears != EARS || m != directions.len() {
        return Err(BaselineError::Shape(format!(
            "measured {:?} vs {} directions",
            measured.shape(),
            directions.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Nearest,
    DistanceWeighted,
    Barycentric,
    /// `l_max = None` selects `⌊√M⌋ − 1`.
    Sh { l_max: Option<usize>, lambda: f64 },
}

impl FromStr for Method {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(Method::Nearest),
            "distw" => Ok(Method::DistanceWeighted),
            "barycentric" => Ok(Method::Barycentric),
            "sh" => Ok(Method::Sh {
                l_max: None,
                lambda: sh::DEFAULT_LAMBDA,
            }),
            other => Err(BaselineError::UnknownMethod(other.to_string())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Nearest => f.write_str("nearest"),
            Method::DistanceWeighted => f.write_str("distw"),
            Method::Barycentric => f.write_str("barycentric"),
            Method::Sh { .. } => f.write_str("sh"),
        }
    }
}

/// Output of a baseline together with any per-method diagnostics.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub values: Array3<f64>,
    pub fallback: Option<BarycentricFallback>,
    pub extrapolated: usize,
}

pub fn predict(
    method: Method,
    measured: ArrayView3<'_, f64>,
    directions: &[Direction],
    targets: &[Direction],
) -> Result<Prediction, BaselineError> {
    let plain = |values| Prediction {
        values,
        fallback: None,
        extrapolated: 0,
    };
    match method {
        Method::Nearest => nearest_neighbor(measured, directions, targets).map(plain),
        Method::DistanceWeighted => {
            distance_weighted(measured, directions, targets, &InverseDistanceSquared::default()).map(plain)
        }
        Method::Barycentric => barycentric(measured, directions, targets).map(|r| Prediction {
            extrapolated: r.extrapolated.len(),
            values: r.values,
            fallback: r.fallback,
        }),
        Method::Sh { l_max, lambda } => {
            let l = l_max.unwrap_or_else(|| sh::default_l_max(directions.len()));
            sh::sh_interpolate(measured, directions, targets, l, lambda).map(plain)
        }
    }
}
