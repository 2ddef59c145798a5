//! The `HRTFSET1` container, deterministic synthetic subjects, sparse subset
//! selection and frequency–frequency correlation.
//!
//! # `HRTFSET1` layout
//!
//! All integers and floats are little-endian.
//!
//! | field            | type                                  |
//! |------------------|---------------------------------------|
//! | magic            | 8 bytes, `HRTFSET1`                   |
//! | subject id       | `u32` byte length, then UTF-8 bytes   |
//! | D                | `u32`                                 |
//! | F                | `u32`                                 |
//! | sample rate (Hz) | `f64`                                 |
//! | frequencies (Hz) | `F × f64`                             |
//! | directions       | `D × (f64 azimuth°, f64 elevation°)`  |
//! | payload (dB)     | `D·2·F × f32`, order (direction, ear, frequency) |
//!
//! Nothing may follow the payload.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::baselines::sh::{n_basis, sh_values};
use crate::sphere::fibonacci_directions;
use crate::types::{angle_between, Direction, FrequencyGrid, HrtfSet, SparseConfig, TypeError, EARS};

pub const MAGIC: &[u8; 8] = b"HRTFSET1";
pub const FILE_EXTENSION: &str = "hrtf";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad magic {0:?}, expected \"HRTFSET1\"")]
    BadMagic([u8; 8]),
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("{0} trailing bytes after payload; header counts do not match file length")]
    TrailingBytes(usize),
    #[error("non-finite value at payload index {0}")]
    NonFinite(usize),
    #[error("subject id is not valid UTF-8")]
    Utf8,
    #[error("invalid set: {0}")]
    Invalid(#[from] TypeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("frequency grids of {0} and {1} differ")]
    GridMismatch(String, String),
    #[error("zero variance at frequency bins {0:?}; correlation undefined")]
    ZeroVariance(Vec<usize>),
    #[error("need at least 2 samples per frequency, got {0}")]
    TooFewSamples(usize),
    #[error("{path}:{line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },
    #[error("no {ext} files in {0}", ext = FILE_EXTENSION)]
    EmptyDataset(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes a set; log-magnitudes are stored as `f32`.
pub fn encode_set(set: &HrtfSet) -> Vec<u8> {
    let d = set.n_directions();
    let f = set.n_freqs();
    let id = set.subject_id.as_bytes();
    let mut out = Vec::with_capacity(8 + 4 + id.len() + 16 + 8 * f + 16 * d + 4 * d * EARS * f);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    out.extend_from_slice(&set.sample_rate_hz.to_le_bytes());
    for hz in set.freq_grid().frequencies_hz() {
        out.extend_from_slice(&hz.to_le_bytes());
    }
    for dir in set.directions() {
        out.extend_from_slice(&dir.azimuth_deg().to_le_bytes());
        out.extend_from_slice(&dir.elevation_deg().to_le_bytes());
    }
    for v in set.logmag_db().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.buf.len() - self.pos,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_set(bytes: &[u8]) -> Result<HrtfSet, DataError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
    if &magic != MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let id_len = r.u32()? as usize;
    let id = std::str::from_utf8(r.take(id_len)?).map_err(|_| DataError::Utf8)?.to_string();
    let d = r.u32()? as usize;
    let f = r.u32()? as usize;
    let sample_rate = r.f64()?;
    let freqs = (0..f).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let mut dirs = Vec::with_capacity(d);
    for _ in 0..d {
        let az = r.f64()?;
        let el = r.f64()?;
        dirs.push(Direction::new(az, el)?);
    }
    let n = d * EARS * f;
    let raw = r.take(n * 4)?;
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    let mut payload = Vec::with_capacity(n);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(DataError::NonFinite(i));
        }
        payload.push(v as f64);
    }
    let logmag = Array3::from_shape_vec((d, EARS, f), payload).expect("length checked");
    Ok(HrtfSet::new(id, dirs, FrequencyGrid::new(freqs)?, logmag)?.with_sample_rate(sample_rate))
}

pub fn write_set(set: &HrtfSet, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, encode_set(set)).map_err(io_err(path))
}

pub fn read_set(path: impl AsRef<Path>) -> Result<HrtfSet, DataError> {
    let path = path.as_ref();
    decode_set(&fs::read(path).map_err(io_err(path))?)
}

/// Parameters of the synthetic subject generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_subjects: u32,
    pub n_directions: u32,
    pub n_freqs: u32,
    pub sh_order: u32,
    pub notch_count: u32,
}

impl SyntheticSpec {
    pub fn new(seed: u64, n_subjects: u32, n_directions: u32, n_freqs: u32) -> Self {
        Self {
            seed,
            n_subjects,
            n_directions,
            n_freqs,
            sh_order: 3,
            notch_count: 2,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.n_subjects < 1 {
            return Err(DataError::Spec("n_subjects must be >= 1".into()));
        }
        if self.n_directions < 8 {
            return Err(DataError::Spec("D must be >= 8".into()));
        }
        if self.n_freqs < 8 {
            return Err(DataError::Spec("F must be >= 8".into()));
        }
        if self.sh_order > 12 {
            return Err(DataError::Spec("sh_order must be <= 12".into()));
        }
        Ok(())
    }
}

const SYNTH_MIN_DB: f64 = -60.0;
const SYNTH_MAX_DB: f64 = 20.0;
const NOTCH_WIDTH_BINS: f64 = 1.5;

/// Deterministic synthetic subjects on a Fibonacci direction grid and the
/// FFT bins `1..=F` of a 256-point transform at 48 kHz.
///
/// Per subject and ear the log-magnitude is
/// `base(f) + field(d)·envelope(f) − Σ notches(d, f)`, where `field` is a
/// random real-SH expansion of order `sh_order` (coefficients Gaussian,
/// scaled by `1/(1+l²)`), `envelope` is a smooth positive gain, and each
/// notch is a Gaussian dip of about 15 dB whose centre bin moves linearly
/// with elevation. The right ear mirrors the left-ear field in azimuth
/// plus an independent perturbation. Values are clamped to [−60, 20] dB and
/// rounded to `f32` so the sets survive a file round-trip unchanged.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<HrtfSet>, DataError> {
    spec.validate()?;
    let dirs = fibonacci_directions(spec.n_directions as usize);
    let grid = FrequencyGrid::from_fft_bins(48_000.0, 256, 1, spec.n_freqs as usize)?;
    let order = spec.sh_order as usize;
    let basis: Vec<Vec<f64>> = dirs.iter().map(|d| sh_values(order, d)).collect();
    (0..spec.n_subjects)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(s as u64);
            let data = synth_subject(&mut rng, spec, &dirs, &basis);
            HrtfSet::new(format!("synth_{:03}", s), dirs.clone(), grid.clone(), data).map_err(DataError::from)
        })
        .collect()
}

fn synth_subject(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, dirs: &[Direction], basis: &[Vec<f64>]) -> Array3<f64> {
    let d = dirs.len();
    let f = spec.n_freqs as usize;
    let order = spec.sh_order as usize;
    let nb = n_basis(order);
    let mut gauss = || -> f64 { rng.sample(StandardNormal) };

    // Spatial fields: left ear, right ear = azimuth mirror + perturbation.
    let decay = |n: usize| {
        let l = (n as f64).sqrt().floor();
        1.0 / (1.0 + l * l)
    };
    let mut left: Vec<f64> = (0..nb).map(|n| 20.0 * decay(n) * gauss()).collect();
    if order >= 1 {
        // Head shadow: +6 dB on the left side (y = 1) for the left ear.
        left[1] += 6.0 / (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
    }
    let right: Vec<f64> = (0..nb)
        .map(|n| {
            let l = (n as f64).sqrt().floor() as i64;
            let m = n as i64 - l * l - l;
            let mirrored = if m < 0 { -left[n] } else { left[n] };
            mirrored + 6.0 * decay(n) * gauss()
        })
        .collect();

    let level = -10.0 + 2.0 * gauss();
    let tilt = -6.0 + gauss();
    let ripple_amp = 3.0 + gauss().abs();
    let ripple_freq = 0.8 + 0.4 * gauss().abs();
    let ripple_phase = std::f64::consts::TAU * gauss();
    let envelopes: Vec<(f64, f64)> = (0..EARS).map(|_| (0.6 + 0.4 * gauss().abs(), std::f64::consts::TAU * gauss())).collect();
    let notches: Vec<(f64, f64, f64)> = (0..spec.notch_count)
        .map(|j| {
            let centre = 0.35 + 0.4 * (j as f64 + 0.5) / spec.notch_count as f64 + 0.05 * gauss();
            let slope = 0.12 + 0.03 * gauss();
            let depth = 15.0 + 1.5 * gauss();
            (centre, slope, depth)
        })
        .collect();

    let mut out = Array3::zeros((d, EARS, f));
    for (di, dir) in dirs.iter().enumerate() {
        let y = &basis[di];
        for (e, coeffs) in [&left, &right].into_iter().enumerate() {
            let field: f64 = coeffs.iter().zip(y).map(|(c, b)| c * b).sum();
            let (env_freq, env_phase) = envelopes[e];
            for k in 0..f {
                let u = k as f64 / (f - 1) as f64;
                let base = level + tilt * u + ripple_amp * (std::f64::consts::PI * ripple_freq * u + ripple_phase).sin();
                let envelope = 1.0 + 0.3 * (std::f64::consts::TAU * env_freq * u + env_phase).sin();
                let mut v = base + field * envelope;
                for &(centre, slope, depth) in &notches {
                    let c = (centre + slope * dir.elevation_deg() / 90.0) * (f - 1) as f64;
                    let z = (k as f64 - c) / NOTCH_WIDTH_BINS;
                    v -= depth * (-0.5 * z * z).exp();
                }
                out[[di, e, k]] = (v.clamp(SYNTH_MIN_DB, SYNTH_MAX_DB) as f32) as f64;
            }
        }
    }
    out
}

/// How measured directions are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SubsetStrategy {
    Explicit(Vec<usize>),
    /// Greedy max-min great-circle distance starting from index 0.
    FarthestPoint { m: usize },
}

pub fn select_sparse_subset(directions: &[Direction], strategy: &SubsetStrategy) -> Result<SparseConfig, DataError> {
    let d = directions.len();
    match strategy {
        SubsetStrategy::Explicit(list) => Ok(SparseConfig::new(list.clone(), d)?),
        SubsetStrategy::FarthestPoint { m } => {
            let m = *m;
            if m == 0 || m >= d {
                return Err(TypeError::MeasuredCount { m, d }.into());
            }
            Ok(SparseConfig::new(farthest_point_order(directions, m), d)?)
        }
    }
}

/// Selection order of greedy farthest-point sampling; ties resolve to the
/// lowest index.
pub fn farthest_point_order(directions: &[Direction], m: usize) -> Vec<usize> {
    let xyz: Vec<[f64; 3]> = directions.iter().map(Direction::to_cartesian).collect();
    let mut chosen = vec![0usize];
    let mut min_dist: Vec<f64> = xyz.iter().map(|p| angle_between(p, &xyz[0])).collect();
    min_dist[0] = f64::NEG_INFINITY;
    while chosen.len() < m.min(xyz.len()) {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &dist) in min_dist.iter().enumerate() {
            if dist > best_d {
                best_d = dist;
                best = i;
            }
        }
        chosen.push(best);
        min_dist[best] = f64::NEG_INFINITY;
        for (i, p) in xyz.iter().enumerate() {
            if min_dist[i] > f64::NEG_INFINITY {
                min_dist[i] = min_dist[i].min(angle_between(p, &xyz[best]));
            }
        }
    }
    chosen
}

/// Pearson correlation between frequency bins, pooling every
/// `(subject, direction, ear)` spectrum as one sample.
pub fn frequency_correlation(sets: &[HrtfSet]) -> Result<Array2<f64>, DataError> {
    let first = sets.first().ok_or(DataError::TooFewSamples(0))?;
    for s in sets {
        if s.freq_grid() != first.freq_grid() {
            return Err(DataError::GridMismatch(first.subject_id.clone(), s.subject_id.clone()));
        }
    }
    let f = first.n_freqs();
    let n: usize = sets.iter().map(|s| s.n_directions() * EARS).sum();
    if n < 2 {
        return Err(DataError::TooFewSamples(n));
    }
    let mut samples = Array2::zeros((n, f));
    let mut row = 0;
    for s in sets {
        for spectrum in s.logmag_db().rows() {
            samples.row_mut(row).assign(&spectrum);
            row += 1;
        }
    }
    let mean = samples.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centred = &samples - &mean;
    let cov = centred.t().dot(&centred);
    let zero: Vec<usize> = (0..f).filter(|&i| !(cov[[i, i]] > 0.0)).collect();
    if !zero.is_empty() {
        return Err(DataError::ZeroVariance(zero));
    }
    let sd: Vec<f64> = (0..f).map(|i| cov[[i, i]].sqrt()).collect();
    Ok(Array2::from_shape_fn((f, f), |(i, j)| {
        if i == j {
            1.0
        } else {
            (cov[[i, j]] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    }))
}

/// Header row of frequencies, then one row per bin; 9 significant digits.
pub fn correlation_csv(freqs_hz: &[f64], corr: &Array2<f64>) -> String {
    let fmt = |v: &f64| crate::format::sig(*v, 9);
    let mut out = freqs_hz.iter().map(fmt).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in corr.rows() {
        out.push_str(&row.iter().map(fmt).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Writes one file per subject plus a manifest; returns the file paths.
pub fn write_dataset(dir: impl AsRef<Path>, sets: &[HrtfSet], header: &[(String, String)]) -> Result<Vec<PathBuf>, DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut paths = Vec::with_capacity(sets.len());
    let mut manifest = String::from("# HRTFSET1 dataset manifest\n");
    for (k, v) in header {
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    for set in sets {
        let name = format!("{}.{}", set.subject_id, FILE_EXTENSION);
        let path = dir.join(&name);
        write_set(set, &path)?;
        manifest.push_str(&format!("file = {name}\n"));
        paths.push(path);
    }
    let mpath = dir.join(MANIFEST);
    let mut fh = fs::File::create(&mpath).map_err(io_err(&mpath))?;
    fh.write_all(manifest.as_bytes()).map_err(io_err(&mpath))?;
    Ok(paths)
}

/// Loads the files named in `manifest.txt`, or every `*.hrtf` file sorted
/// by name when there is no manifest. A path to a single file loads that file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<HrtfSet>, DataError> {
    let path = path.as_ref();
    if path.is_file() {
        return Ok(vec![read_set(path)?]);
    }
    let manifest = path.join(MANIFEST);
    let files: Vec<PathBuf> = if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        let mut files = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(DataError::Manifest {
                    path: manifest.clone(),
                    line: i + 1,
                    msg: "expected key = value".into(),
                });
            };
            if k.trim() == "file" {
                files.push(path.join(v.trim()));
            }
        }
        files
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == FILE_EXTENSION))
            .collect();
        files.sort();
        files
    };
    if files.is_empty() {
        return Err(DataError::EmptyDataset(path.to_path_buf()));
    }
    files.iter().map(read_set).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::lsd_per_direction;
    use crate::types::great_circle_distance;
    use ndarray::Axis;
    use proptest::prelude::*;

    fn tiny_set() -> HrtfSet {
        let dirs = vec![Direction::new(0.0, 0.0).unwrap(), Direction::new(90.0, 30.0).unwrap()];
        let grid = FrequencyGrid::new(vec![100.0, 200.0, 300.0]).unwrap();
        let data = Array3::from_shape_fn((2, 2, 3), |(d, e, f)| -((d * 6 + e * 3 + f) as f64) * 0.75);
        HrtfSet::new("tiny", dirs, grid, data).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.hrtf");
        let set = tiny_set();
        write_set(&set, &p).unwrap();
        let back = read_set(&p).unwrap();
        assert_eq!(back, set);
        assert_eq!(encode_set(&back), fs::read(&p).unwrap());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = encode_set(&tiny_set());
        let mut bad = good.clone();
        bad[7] = b'0';
        assert!(matches!(decode_set(&bad), Err(DataError::BadMagic(m)) if &m == b"HRTFSET0"));
        assert!(matches!(decode_set(&good[..good.len() - 4]), Err(DataError::Truncated { .. })));
        let mut long = good.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode_set(&long), Err(DataError::TrailingBytes(4))));
        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_set(&nan), Err(DataError::NonFinite(11))));
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let spec = SyntheticSpec::new(1, 3, 32, 16);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_ne!(a[0].logmag_db(), a[1].logmag_db());
        for s in &a {
            assert!(s.logmag_db().iter().all(|v| (-60.0..=20.0).contains(v)));
            assert_eq!(decode_set(&encode_set(s)).unwrap(), *s);
        }
        let other = generate_synthetic(&SyntheticSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a[0], other[0]);
    }

    #[test]
    fn degenerate_synthetic_is_direction_independent() {
        let spec = SyntheticSpec {
            sh_order: 0,
            notch_count: 0,
            ..SyntheticSpec::new(5, 2, 16, 8)
        };
        for s in generate_synthetic(&spec).unwrap() {
            let h = s.logmag_db();
            for d in 1..16 {
                let lsd = lsd_per_direction(
                    h.slice(ndarray::s![0..1, .., ..]),
                    h.slice(ndarray::s![d..d + 1, .., ..]),
                )
                .unwrap();
                assert!(lsd.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn synthetic_spec_bounds() {
        assert!(generate_synthetic(&SyntheticSpec::new(1, 0, 16, 8)).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(1, 1, 7, 8)).is_err());
        assert!(generate_synthetic(&SyntheticSpec::new(1, 1, 8, 7)).is_err());
    }

    #[test]
    fn subset_selection() {
        let dirs = fibonacci_directions(30);
        let cfg = select_sparse_subset(&dirs, &SubsetStrategy::Explicit(vec![0, 5, 9])).unwrap();
        assert_eq!(cfg.measured(), &[0, 5, 9]);
        assert!(select_sparse_subset(&dirs, &SubsetStrategy::Explicit(vec![0, 5, 5])).is_err());
        assert!(select_sparse_subset(&dirs, &SubsetStrategy::FarthestPoint { m: 30 }).is_err());
        assert!(select_sparse_subset(&dirs, &SubsetStrategy::FarthestPoint { m: 0 }).is_err());

        let cfg = select_sparse_subset(&dirs, &SubsetStrategy::FarthestPoint { m: 2 }).unwrap();
        let dist: Vec<f64> = dirs.iter().map(|d| great_circle_distance(d, &dirs[0])).collect();
        let max = dist.iter().cloned().fold(0.0, f64::max);
        let argmax = dist.iter().position(|&v| v == max).unwrap();
        assert_eq!(cfg.measured(), &[0, argmax]);

        let cfg = select_sparse_subset(&dirs, &SubsetStrategy::FarthestPoint { m: 29 }).unwrap();
        assert_eq!(cfg.unmeasured().len(), 1);
    }

    #[test]
    fn farthest_point_is_greedy_max_min() {
        let dirs = fibonacci_directions(50);
        let order = farthest_point_order(&dirs, 8);
        for step in 1..order.len() {
            let chosen = &order[..step];
            let score = |i: usize| {
                chosen
                    .iter()
                    .map(|&c| great_circle_distance(&dirs[i], &dirs[c]))
                    .fold(f64::INFINITY, f64::min)
            };
            let best = (0..50).filter(|i| !chosen.contains(i)).map(score).fold(0.0, f64::max);
            assert_eq!(score(order[step]), best);
        }
    }

    /// Naive two-pass Pearson, one pair at a time.
    fn naive_corr(sets: &[HrtfSet]) -> Array2<f64> {
        let f = sets[0].n_freqs();
        let samples: Vec<Vec<f64>> = sets
            .iter()
            .flat_map(|s| {
                let h = s.logmag_db().to_owned();
                let mut v = Vec::new();
                for d in 0..s.n_directions() {
                    for e in 0..2 {
                        v.push((0..f).map(|k| h[[d, e, k]]).collect::<Vec<f64>>());
                    }
                }
                v
            })
            .collect();
        let n = samples.len() as f64;
        Array2::from_shape_fn((f, f), |(i, j)| {
            let mi = samples.iter().map(|s| s[i]).sum::<f64>() / n;
            let mj = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            let mut sij = 0.0;
            let mut sii = 0.0;
            let mut sjj = 0.0;
            for s in &samples {
                sij += (s[i] - mi) * (s[j] - mj);
                sii += (s[i] - mi) * (s[i] - mi);
                sjj += (s[j] - mj) * (s[j] - mj);
            }
            sij / (sii * sjj).sqrt()
        })
    }

    #[test]
    fn correlation_matches_naive_oracle() {
        let sets = generate_synthetic(&SyntheticSpec::new(1, 4, 64, 32)).unwrap();
        let c = frequency_correlation(&sets).unwrap();
        let oracle = naive_corr(&sets);
        for i in 0..32 {
            assert_eq!(c[[i, i]], 1.0);
            for j in 0..32 {
                assert!((c[[i, j]] - oracle[[i, j]]).abs() < 1e-10);
                assert_eq!(c[[i, j]], c[[j, i]]);
                assert!((-1.0..=1.0).contains(&c[[i, j]]));
            }
        }
        let csv = correlation_csv(sets[0].freq_grid().frequencies_hz(), &c);
        assert_eq!(csv.lines().count(), 33);
        assert!(csv.starts_with("187.5,375,562.5"));
    }

    fn from_rows(rows: Vec<Vec<f64>>) -> HrtfSet {
        let d = rows.len() / 2;
        let f = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        HrtfSet::new(
            "x",
            fibonacci_directions(d),
            FrequencyGrid::new((1..=f).map(|k| k as f64).collect()).unwrap(),
            Array3::from_shape_vec((d, 2, f), flat).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn correlation_examples() {
        let flat = from_rows((0..8).map(|s| vec![s as f64 * 1.5 - 3.0; 4]).collect());
        let c = frequency_correlation(&[flat]).unwrap();
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let anti = from_rows((0..8).map(|s| vec![s as f64, -(s as f64), (s * s) as f64]).collect());
        let c = frequency_correlation(&[anti]).unwrap();
        assert!((c[[0, 1]] + 1.0).abs() < 1e-12);

        let constant_bin = from_rows((0..8).map(|s| vec![s as f64, 2.0, 1.0]).collect());
        assert!(matches!(frequency_correlation(&[constant_bin]), Err(DataError::ZeroVariance(v)) if v == vec![1, 2]));

        let a = tiny_set();
        let b = HrtfSet::new(
            "b",
            a.directions().to_vec(),
            FrequencyGrid::new(vec![1.0, 2.0, 3.0]).unwrap(),
            a.logmag_db().to_owned(),
        )
        .unwrap();
        assert!(matches!(frequency_correlation(&[a, b]), Err(DataError::GridMismatch(..))));
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sets = generate_synthetic(&SyntheticSpec::new(3, 2, 16, 8)).unwrap();
        let paths = write_dataset(dir.path(), &sets, &[("seed".into(), "3".into())]).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(load_dataset(dir.path()).unwrap(), sets);
        assert_eq!(load_dataset(&paths[1]).unwrap(), vec![sets[1].clone()]);
        fs::remove_file(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), sets);
    }

    proptest! {
        #[test]
        fn correlation_ignores_a_global_shift(c in -30.0f64..30.0) {
            let sets = generate_synthetic(&SyntheticSpec::new(2, 2, 16, 8)).unwrap();
            let base = frequency_correlation(&sets).unwrap();
            let shifted: Vec<HrtfSet> = sets
                .iter()
                .map(|s| {
                    HrtfSet::new(s.subject_id.clone(), s.directions().to_vec(), s.freq_grid().clone(), s.logmag_db().mapv(|v| v + c)).unwrap()
                })
                .collect();
            let moved = frequency_correlation(&shifted).unwrap();
            for (a, b) in base.iter().zip(moved.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn any_payload_round_trips(values in proptest::collection::vec(-100.0f32..50.0, 12)) {
            let set = tiny_set();
            let data = Array3::from_shape_vec((2, 2, 3), values.iter().map(|&v| v as f64).collect()).unwrap();
            let set = HrtfSet::new("p", set.directions().to_vec(), set.freq_grid().clone(), data).unwrap();
            let bytes = encode_set(&set);
            let back = decode_set(&bytes).unwrap();
            prop_assert_eq!(encode_set(&back), bytes);
            prop_assert_eq!(back.logmag_db().index_axis(Axis(0), 1).to_owned(), set.logmag_db().index_axis(Axis(0), 1).to_owned());
        }
    }
}
