//! Directions, frequency grids, HRTF magnitude sets and sparse measurement
//! configurations.
//!
//! Coordinates follow an x-front / y-left / z-up convention: azimuth 0° with
//! elevation 0° points to +x, azimuth 90° points to +y (left), elevation 90°
//! points to +z. Ears are indexed 0 = left, 1 = right.

use std::f64::consts::PI;

use ndarray::{Array3, ArrayView3, Axis};
use thiserror::Error;

/// Number of ears carried by every HRTF tensor.
pub const EARS: usize = 2;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Two directions closer than this (radians) are treated as the same point.
pub const DIRECTION_EPS_RAD: f64 = 1e-9;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 48_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("elevation {0}° outside [-90, 90]")]
    Elevation(f64),
    #[error("non-finite angle (azimuth {azimuth}, elevation {elevation})")]
    NonFiniteAngle { azimuth: f64, elevation: f64 },
    #[error("frequency grid must be non-empty, positive and strictly increasing (offending index {0})")]
    FrequencyGrid(usize),
    #[error("log-magnitude must be positive-magnitude input, got {0}")]
    Domain(f64),
    #[error("tensor shape {got:?} does not match expected {expected:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite log-magnitude at (direction {direction}, ear {ear}, bin {bin})")]
    NonFinite { direction: usize, ear: usize, bin: usize },
    #[error("directions {0} and {1} coincide")]
    DuplicateDirection(usize, usize),
    #[error("measured count {m} must satisfy 1 <= M < D = {d}")]
    MeasuredCount { m: usize, d: usize },
    #[error("direction index {index} out of range for D = {d}")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("duplicate measured index {0}")]
    DuplicateIndex(usize),
}

/// A source direction on the unit sphere, in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl Direction {
    /// Azimuth is wrapped into `[0, 360)`; elevation must already lie in `[-90, 90]`.
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self, TypeError> {
        if !azimuth_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(TypeError::NonFiniteAngle {
                azimuth: azimuth_deg,
                elevation: elevation_deg,
            });
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(TypeError::Elevation(elevation_deg));
        }
        let mut az = azimuth_deg.rem_euclid(360.0);
        if az >= 360.0 {
            az = 0.0;
        }
        Ok(Self {
            azimuth_deg: az,
            elevation_deg,
        })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Inverse of [`direction_to_cartesian`]. The input need not be normalized.
    pub fn from_cartesian(v: [f64; 3]) -> Result<Self, TypeError> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / norm).clamp(-1.0, 1.0);
        let el = z.asin().to_degrees();
        let az = v[1].atan2(v[0]).to_degrees();
        Self::new(az, el)
    }

    pub fn to_cartesian(&self) -> [f64; 3] {
        direction_to_cartesian(self)
    }
}

pub fn direction_to_cartesian(d: &Direction) -> [f64; 3] {
    let az = d.azimuth_deg.to_radians();
    let el = d.elevation_deg.to_radians();
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    [ce * ca, ce * sa, se]
}

/// Great-circle distance in radians, in `[0, π]`.
pub fn great_circle_distance(a: &Direction, b: &Direction) -> f64 {
    let u = a.to_cartesian();
    let v = b.to_cartesian();
    angle_between(&u, &v)
}

/// Angle between two unit vectors. Uses atan2 of cross and dot so small
/// angles keep full precision.
pub(crate) fn angle_between(u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let c = cross(u, v);
    let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    let d = dot(u, v);
    s.atan2(d).clamp(0.0, PI)
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `20·log10(|h|)` in dB.
pub fn log_magnitude(h_linear: f64) -> Result<f64, TypeError> {
    if !(h_linear > 0.0) || !h_linear.is_finite() {
        return Err(TypeError::Domain(h_linear));
    }
    Ok(20.0 * h_linear.log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    frequencies_hz: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(frequencies_hz: Vec<f64>) -> Result<Self, TypeError> {
        if frequencies_hz.is_empty() {
            return Err(TypeError::FrequencyGrid(0));
        }
        for (i, &f) in frequencies_hz.iter().enumerate() {
            if !(f > 0.0) || !f.is_finite() {
                return Err(TypeError::FrequencyGrid(i));
            }
            if i > 0 && f <= frequencies_hz[i - 1] {
                return Err(TypeError::FrequencyGrid(i));
            }
        }
        Ok(Self { frequencies_hz })
    }

    /// FFT bins `first_bin .. first_bin + count`, spaced `sample_rate / fft_size`.
    pub fn from_fft_bins(
        sample_rate_hz: f64,
        fft_size: usize,
        first_bin: usize,
        count: usize,
    ) -> Result<Self, TypeError> {
        let spacing = sample_rate_hz / fft_size as f64;
        Self::new(
            (first_bin..first_bin + count)
                .map(|k| k as f64 * spacing)
                .collect(),
        )
    }

    pub fn frequencies_hz(&self) -> &[f64] {
        &self.frequencies_hz
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }
}

/// One subject's dense log-magnitude HRTFs, shaped `D × 2 × F` in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct HrtfSet {
    pub subject_id: String,
    /// Sample rate of the impulse responses the spectra came from.
    pub sample_rate_hz: f64,
    directions: Vec<Direction>,
    freq_grid: FrequencyGrid,
    logmag_db: Array3<f64>,
}

impl HrtfSet {
    pub fn new(
        subject_id: impl Into<String>,
        directions: Vec<Direction>,
        freq_grid: FrequencyGrid,
        logmag_db: Array3<f64>,
    ) -> Result<Self, TypeError> {
        let expected = vec![directions.len(), EARS, freq_grid.len()];
        if logmag_db.shape() != expected.as_slice() {
            return Err(TypeError::Shape {
                expected,
                got: logmag_db.shape().to_vec(),
            });
        }
        if let Some(((d, e, f), _)) = logmag_db.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(TypeError::NonFinite {
                direction: d,
                ear: e,
                bin: f,
            });
        }
        check_distinct(&directions)?;
        Ok(Self {
            subject_id: subject_id.into(),
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            directions,
            freq_grid,
            logmag_db,
        })
    }

    pub fn with_sample_rate(mut self, sample_rate_hz: f64) -> Self {
        self.sample_rate_hz = sample_rate_hz;
        self
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn freq_grid(&self) -> &FrequencyGrid {
        &self.freq_grid
    }

    pub fn logmag_db(&self) -> ArrayView3<'_, f64> {
        self.logmag_db.view()
    }

    pub fn n_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.freq_grid.len()
    }
}

fn check_distinct(directions: &[Direction]) -> Result<(), TypeError> {
    let xyz: Vec<[f64; 3]> = directions.iter().map(Direction::to_cartesian).collect();
    for i in 0..xyz.len() {
        for j in i + 1..xyz.len() {
            if angle_between(&xyz[i], &xyz[j]) <= DIRECTION_EPS_RAD {
                return Err(TypeError::DuplicateDirection(i, j));
            }
        }
    }
    Ok(())
}

/// Measured direction indices and their unmeasured complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseConfig {
    measured: Vec<usize>,
    unmeasured: Vec<usize>,
}

impl SparseConfig {
    /// Indices are sorted; duplicates and out-of-range entries are rejected.
    pub fn new(mut measured: Vec<usize>, n_directions: usize) -> Result<Self, TypeError> {
        if measured.is_empty() || measured.len() >= n_directions {
            return Err(TypeError::MeasuredCount {
                m: measured.len(),
                d: n_directions,
            });
        }
        measured.sort_unstable();
        for w in measured.windows(2) {
            if w[0] == w[1] {
                return Err(TypeError::DuplicateIndex(w[0]));
            }
        }
        if let Some(&bad) = measured.iter().find(|&&i| i >= n_directions) {
            return Err(TypeError::IndexOutOfRange {
                index: bad,
                d: n_directions,
            });
        }
        let mut is_measured = vec![false; n_directions];
        for &i in &measured {
            is_measured[i] = true;
        }
        let unmeasured = (0..n_directions).filter(|&i| !is_measured[i]).collect();
        Ok(Self {
            measured,
            unmeasured,
        })
    }

    pub fn measured(&self) -> &[usize] {
        &self.measured
    }

    pub fn unmeasured(&self) -> &[usize] {
        &self.unmeasured
    }

    pub fn m(&self) -> usize {
        self.measured.len()
    }

    pub fn n_directions(&self) -> usize {
        self.measured.len() + self.unmeasured.len()
    }
}

/// Splits the direction axis into the measured rows and the unmeasured rows.
pub fn split_set(
    set: &HrtfSet,
    cfg: &SparseConfig,
) -> Result<(Array3<f64>, Array3<f64>), TypeError> {
    split_rows(set.logmag_db(), cfg)
}

pub fn split_rows(
    logmag: ArrayView3<'_, f64>,
    cfg: &SparseConfig,
) -> Result<(Array3<f64>, Array3<f64>), TypeError> {
    let d = logmag.shape()[0];
    if cfg.n_directions() != d {
        let bad = cfg
            .measured()
            .iter()
            .chain(cfg.unmeasured())
            .copied()
            .max()
            .unwrap_or(0);
        return Err(TypeError::IndexOutOfRange { index: bad, d });
    }
    Ok((
        logmag.select(Axis(0), cfg.measured()),
        logmag.select(Axis(0), cfg.unmeasured()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::concatenate;
    use proptest::prelude::*;

    fn close3(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn cartesian_anchors() {
        assert!(close3(Direction::new(0.0, 0.0).unwrap().to_cartesian(), [1.0, 0.0, 0.0]));
        assert!(close3(Direction::new(90.0, 0.0).unwrap().to_cartesian(), [0.0, 1.0, 0.0]));
        assert!(close3(Direction::new(0.0, 90.0).unwrap().to_cartesian(), [0.0, 0.0, 1.0]));
    }

    #[test]
    fn azimuth_wraps_and_elevation_is_checked() {
        assert_eq!(Direction::new(-90.0, 0.0).unwrap().azimuth_deg(), 270.0);
        assert_eq!(Direction::new(720.0, 0.0).unwrap().azimuth_deg(), 0.0);
        assert_eq!(Direction::new(-1e-20, 0.0).unwrap().azimuth_deg(), 0.0);
        assert!(matches!(Direction::new(0.0, 90.5), Err(TypeError::Elevation(_))));
        assert!(Direction::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = Direction::new(0.0, 0.0).unwrap();
        let b = Direction::new(180.0, 0.0).unwrap();
        let c = Direction::new(90.0, 0.0).unwrap();
        assert_eq!(great_circle_distance(&a, &a), 0.0);
        assert!((great_circle_distance(&a, &b) - PI).abs() < 1e-15);
        assert!((great_circle_distance(&a, &c) - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_magnitude_examples() {
        assert_eq!(log_magnitude(1.0).unwrap(), 0.0);
        assert!((log_magnitude(10.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((log_magnitude(0.5).unwrap() + 6.0206).abs() < 1e-4);
        assert!(log_magnitude(0.0).is_err());
        assert!(log_magnitude(-1.0).is_err());
    }

    #[test]
    fn frequency_grid_from_fft() {
        let g = FrequencyGrid::from_fft_bins(48_000.0, 256, 1, 106).unwrap();
        assert_eq!(g.len(), 106);
        assert_eq!(g.frequencies_hz()[0], 187.5);
        assert_eq!(g.frequencies_hz()[105], 19_875.0);
        for w in g.frequencies_hz().windows(2) {
            assert_eq!(w[1] - w[0], 187.5);
        }
        assert!(FrequencyGrid::new(vec![100.0, 100.0]).is_err());
        assert!(FrequencyGrid::new(vec![0.0, 100.0]).is_err());
    }

    fn ring(n: usize) -> Vec<Direction> {
        (0..n)
            .map(|i| Direction::new(360.0 * i as f64 / n as f64, 0.0).unwrap())
            .collect()
    }

    fn numbered_set(d: usize, f: usize) -> HrtfSet {
        let grid = FrequencyGrid::new((1..=f).map(|k| k as f64 * 100.0).collect()).unwrap();
        let data = Array3::from_shape_fn((d, EARS, f), |(i, e, k)| (100 * i + 10 * e + k) as f64);
        HrtfSet::new("s", ring(d), grid, data).unwrap()
    }

    #[test]
    fn hrtf_set_validation() {
        let grid = FrequencyGrid::new(vec![1.0, 2.0]).unwrap();
        let mut data = Array3::zeros((2, 2, 2));
        assert!(HrtfSet::new("a", ring(2), grid.clone(), data.clone()).is_ok());
        data[[1, 0, 1]] = f64::NAN;
        assert!(matches!(
            HrtfSet::new("a", ring(2), grid.clone(), data),
            Err(TypeError::NonFinite { direction: 1, ear: 0, bin: 1 })
        ));
        let dup = vec![Direction::new(10.0, 5.0).unwrap(), Direction::new(370.0, 5.0).unwrap()];
        assert!(matches!(
            HrtfSet::new("a", dup, grid.clone(), Array3::zeros((2, 2, 2))),
            Err(TypeError::DuplicateDirection(0, 1))
        ));
        assert!(HrtfSet::new("a", ring(3), grid, Array3::zeros((2, 2, 2))).is_err());
    }

    #[test]
    fn split_examples() {
        let set = numbered_set(4, 3);
        let cfg = SparseConfig::new(vec![2, 0], 4).unwrap();
        assert_eq!(cfg.measured(), &[0, 2]);
        let (m, u) = split_set(&set, &cfg).unwrap();
        assert_eq!(m[[0, 0, 0]], 0.0);
        assert_eq!(m[[1, 0, 0]], 200.0);
        assert_eq!(u[[0, 0, 0]], 100.0);
        assert_eq!(u[[1, 1, 2]], 312.0);

        let cfg = SparseConfig::new(vec![0, 1, 3], 4).unwrap();
        let (_, u) = split_set(&set, &cfg).unwrap();
        assert_eq!(u.shape()[0], 1);

        assert!(matches!(
            SparseConfig::new(vec![], 4),
            Err(TypeError::MeasuredCount { m: 0, d: 4 })
        ));
        assert!(SparseConfig::new(vec![0, 1, 2, 3], 4).is_err());
        assert!(matches!(
            SparseConfig::new(vec![0, 9], 4),
            Err(TypeError::IndexOutOfRange { index: 9, .. })
        ));
        let other = SparseConfig::new(vec![0], 5).unwrap();
        assert!(split_set(&set, &other).is_err());
    }

    proptest! {
        #[test]
        fn split_then_unpermute_is_identity(mask in proptest::collection::vec(any::<bool>(), 6)) {
            let measured: Vec<usize> = (0..6).filter(|&i| mask[i]).collect();
            prop_assume!(!measured.is_empty() && measured.len() < 6);
            let set = numbered_set(6, 4);
            let cfg = SparseConfig::new(measured, 6).unwrap();
            let (m, u) = split_set(&set, &cfg).unwrap();
            let stacked = concatenate(Axis(0), &[m.view(), u.view()]).unwrap();
            let order: Vec<usize> = cfg.measured().iter().chain(cfg.unmeasured()).copied().collect();
            let mut restored = Array3::zeros(stacked.raw_dim());
            for (row, &orig) in order.iter().enumerate() {
                restored.index_axis_mut(Axis(0), orig).assign(&stacked.index_axis(Axis(0), row));
            }
            prop_assert_eq!(restored, set.logmag_db().to_owned());
        }

        #[test]
        fn cartesian_round_trip(az in 0.0f64..360.0, el in -89.0f64..89.0) {
            let d = Direction::new(az, el).unwrap();
            let v = d.to_cartesian();
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
            let back = Direction::from_cartesian(v).unwrap();
            let daz = (back.azimuth_deg() - az).abs();
            prop_assert!(daz.min(360.0 - daz) < 1e-9);
            prop_assert!((back.elevation_deg() - el).abs() < 1e-9);
        }

        #[test]
        fn distance_is_a_metric(
            a in (0.0f64..360.0, -90.0f64..90.0),
            b in (0.0f64..360.0, -90.0f64..90.0),
            c in (0.0f64..360.0, -90.0f64..90.0),
        ) {
            let a = Direction::new(a.0, a.1).unwrap();
            let b = Direction::new(b.0, b.1).unwrap();
            let c = Direction::new(c.0, c.1).unwrap();
            let ab = great_circle_distance(&a, &b);
            prop_assert!((0.0..=PI).contains(&ab));
            prop_assert_eq!(ab, great_circle_distance(&b, &a));
            prop_assert!(ab <= great_circle_distance(&a, &c) + great_circle_distance(&c, &b) + 1e-9);
        }
    }
}
