//! Log-spectral distortion and interaural level difference metrics.
//!
//! Every aggregate here is meant to be computed on the unmeasured directions
//! only; [`evaluate_unmeasured`] does the row selection for dense tensors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, ArrayView3, Axis};
use thiserror::Error;

use crate::types::{SparseConfig, LEFT, RIGHT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("prediction shape {pred:?} does not match ground truth {truth:?}")]
    Shape { pred: Vec<usize>, truth: Vec<usize> },
    #[error("no unmeasured directions to evaluate")]
    Empty,
}

fn check(pred: &ArrayView3<'_, f64>, truth: &ArrayView3<'_, f64>) -> Result<(), MetricsError> {
    if pred.shape() != truth.shape() || pred.shape()[1] != 2 {
        return Err(MetricsError::Shape {
            pred: pred.shape().to_vec(),
            truth: truth.shape().to_vec(),
        });
    }
    Ok(())
}

/// RMS dB error over frequency for every `(direction, ear)`: shape `U × 2`.
pub fn lsd_per_direction(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>) -> Result<Array2<f64>, MetricsError> {
    check(&pred, &truth)?;
    let (u, ears, f) = pred.dim();
    let mut out = Array2::zeros((u, ears));
    for d in 0..u {
        for e in 0..ears {
            let mut acc = 0.0;
            for k in 0..f {
                let diff = pred[[d, e, k]] - truth[[d, e, k]];
                acc += diff * diff;
            }
            out[[d, e]] = (acc / f as f64).sqrt();
        }
    }
    Ok(out)
}

/// Mean of the per-direction LSD over both ears and all rows.
pub fn mean_lsd(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>) -> Result<f64, MetricsError> {
    let per = lsd_per_direction(pred, truth)?;
    if per.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(per.sum() / per.len() as f64)
}

/// RMS over `(direction, ear)` at each frequency bin.
pub fn lsd_per_frequency(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>) -> Result<Array1<f64>, MetricsError> {
    check(&pred, &truth)?;
    let (u, ears, f) = pred.dim();
    if u == 0 {
        return Err(MetricsError::Empty);
    }
    let mut out = Array1::zeros(f);
    for k in 0..f {
        let mut acc = 0.0;
        for d in 0..u {
            for e in 0..ears {
                let diff = pred[[d, e, k]] - truth[[d, e, k]];
                acc += diff * diff;
            }
        }
        out[k] = (acc / (u * ears) as f64).sqrt();
    }
    Ok(out)
}

/// Broadband ILD in dB for one direction's `2 × F` log-magnitudes:
/// `10·log10(E_left / E_right)` with `E = Σ_f 10^(H/10)`.
pub fn broadband_ild(slice: ArrayView2<'_, f64>) -> f64 {
    // Energies are summed relative to the joint peak so large negative or
    // positive dB values neither underflow nor overflow.
    let peak = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let energy = |ear: usize| -> f64 {
        slice
            .index_axis(Axis(0), ear)
            .iter()
            .map(|&h| 10f64.powf((h - peak) / 10.0))
            .sum()
    };
    10.0 * (energy(LEFT) / energy(RIGHT)).log10()
}

/// Mean absolute ILD difference over all rows.
pub fn ild_error(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>) -> Result<f64, MetricsError> {
    check(&pred, &truth)?;
    let u = pred.shape()[0];
    if u == 0 {
        return Err(MetricsError::Empty);
    }
    let total: f64 = (0..u)
        .map(|d| (broadband_ild(truth.index_axis(Axis(0), d)) - broadband_ild(pred.index_axis(Axis(0), d))).abs())
        .sum();
    Ok(total / u as f64)
}

/// Metrics for one subject under one sparse configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub subject_id: String,
    pub m: usize,
    pub mean_lsd_db: f64,
    pub ild_error_db: f64,
    pub per_frequency_lsd_db: Array1<f64>,
    pub per_direction_lsd_db: Array2<f64>,
}

/// Computes every metric on unmeasured rows `U × 2 × F`.
pub fn report(
    subject_id: &str,
    m: usize,
    pred_u: ArrayView3<'_, f64>,
    truth_u: ArrayView3<'_, f64>,
) -> Result<MetricsReport, MetricsError> {
    let per_direction = lsd_per_direction(pred_u, truth_u)?;
    if per_direction.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(MetricsReport {
        subject_id: subject_id.to_string(),
        m,
        mean_lsd_db: per_direction.sum() / per_direction.len() as f64,
        ild_error_db: ild_error(pred_u, truth_u)?,
        per_frequency_lsd_db: lsd_per_frequency(pred_u, truth_u)?,
        per_direction_lsd_db: per_direction,
    })
}

/// Selects the unmeasured rows of dense `D × 2 × F` tensors and reports on them.
pub fn evaluate_unmeasured(
    subject_id: &str,
    pred_dense: ArrayView3<'_, f64>,
    truth_dense: ArrayView3<'_, f64>,
    cfg: &SparseConfig,
) -> Result<MetricsReport, MetricsError> {
    check(&pred_dense, &truth_dense)?;
    if pred_dense.shape()[0] != cfg.n_directions() {
        return Err(MetricsError::Shape {
            pred: pred_dense.shape().to_vec(),
            truth: vec![cfg.n_directions(), 2, pred_dense.shape()[2]],
        });
    }
    let idx = cfg.unmeasured();
    report(
        subject_id,
        cfg.m(),
        pred_dense.select(Axis(0), idx).view(),
        truth_dense.select(Axis(0), idx).view(),
    )
}

/// Subject-averaged numbers for one row label and sparse count.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n_subjects: usize,
    pub mean_lsd_db: f64,
    pub ild_error_db: f64,
    pub per_frequency_lsd_db: Array1<f64>,
}

/// Unweighted mean over subjects.
pub fn aggregate(reports: &[MetricsReport]) -> Option<Aggregate> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let mut per_f = Array1::zeros(first.per_frequency_lsd_db.len());
    for r in reports {
        per_f += &r.per_frequency_lsd_db;
    }
    Some(Aggregate {
        n_subjects: reports.len(),
        mean_lsd_db: reports.iter().map(|r| r.mean_lsd_db).sum::<f64>() / n,
        ild_error_db: reports.iter().map(|r| r.ild_error_db).sum::<f64>() / n,
        per_frequency_lsd_db: per_f / n,
    })
}

/// Reports grouped by row label (method or model variant), laid out with one
/// ILD/LSD column pair per sparse count.
#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    rows: Vec<(String, Vec<MetricsReport>)>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: &str, report: MetricsReport) {
        match self.rows.iter_mut().find(|(l, _)| l == label) {
            Some((_, v)) => v.push(report),
            None => self.rows.push((label.to_string(), vec![report])),
        }
    }

    pub fn extend(&mut self, label: &str, reports: impl IntoIterator<Item = MetricsReport>) {
        for r in reports {
            self.push(label, r);
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(l, _)| l.as_str())
    }

    /// Aggregate for a label at a given sparse count.
    pub fn aggregate(&self, label: &str, m: usize) -> Option<Aggregate> {
        let (_, reports) = self.rows.iter().find(|(l, _)| l == label)?;
        let matching: Vec<MetricsReport> = reports.iter().filter(|r| r.m == m).cloned().collect();
        aggregate(&matching)
    }

    fn sparse_counts(&self) -> Vec<usize> {
        let mut ms: Vec<usize> = self.rows.iter().flat_map(|(_, r)| r.iter().map(|x| x.m)).collect();
        ms.sort_unstable();
        ms.dedup();
        ms
    }

    /// One line per subject per configuration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,subject_id,m,ild_error_db,mean_lsd_db\n");
        for (label, reports) in &self.rows {
            for r in reports {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    label,
                    r.subject_id,
                    r.m,
                    crate::format::sig(r.ild_error_db, 9),
                    crate::format::sig(r.mean_lsd_db, 9)
                );
            }
        }
        out
    }

    /// Per-frequency LSD aggregated over subjects, one column per label/M.
    pub fn per_frequency_csv(&self, freqs_hz: &[f64]) -> String {
        let mut cols = Vec::new();
        for label in self.labels() {
            for m in self.sparse_counts() {
                if let Some(a) = self.aggregate(label, m) {
                    cols.push((format!("{label}_M{m}"), a.per_frequency_lsd_db));
                }
            }
        }
        let mut out = String::from("frequency_hz");
        for (name, _) in &cols {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (k, f) in freqs_hz.iter().enumerate() {
            out.push_str(&crate::format::sig(*f, 9));
            for (_, v) in &cols {
                out.push(',');
                out.push_str(&v.get(k).map(|x| crate::format::sig(*x, 9)).unwrap_or_default());
            }
            out.push('\n');
        }
        out
    }

    /// Markdown table: a row per label, an `ILD [dB] | LSD [dB]` pair per M.
    /// Values are averaged unrounded and rounded only for display.
    pub fn to_markdown(&self) -> String {
        let ms = self.sparse_counts();
        let mut out = String::from("| Method |");
        for m in &ms {
            let _ = write!(out, " M={m} ILD [dB] | M={m} LSD [dB] |");
        }
        out.push_str("\n|---|");
        for _ in &ms {
            out.push_str("---:|---:|");
        }
        out.push('\n');
        for (label, _) in &self.rows {
            let _ = write!(out, "| {label} |");
            for &m in &ms {
                match self.aggregate(label, m) {
                    Some(a) => {
                        let _ = write!(out, " {:.2} | {:.2} |", a.ild_error_db, a.mean_lsd_db);
                    }
                    None => out.push_str(" - | - |"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aggregates keyed by `(label, M)` in label order.
    pub fn summary(&self) -> BTreeMap<(String, usize), Aggregate> {
        let mut out = BTreeMap::new();
        for label in self.labels() {
            for m in self.sparse_counts() {
                if let Some(a) = self.aggregate(label, m) {
                    out.insert((label.to_string(), m), a);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, shape: (usize, usize, usize)) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(shape, |_| rng.random_range(-40.0..10.0))
    }

    #[test]
    fn lsd_examples() {
        let t = random(1, (3, 2, 5));
        assert!(lsd_per_direction(t.view(), t.view()).unwrap().iter().all(|&v| v == 0.0));
        let shifted = &t + 3.0;
        for v in lsd_per_direction(shifted.view(), t.view()).unwrap() {
            assert!((v - 3.0).abs() < 1e-12);
        }
        let truth = Array3::zeros((1, 2, 2));
        let pred = Array3::from_shape_vec((1, 2, 2), vec![3.0, 4.0, 3.0, 4.0]).unwrap();
        let per = lsd_per_direction(pred.view(), truth.view()).unwrap();
        assert!((per[[0, 0]] - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(lsd_per_direction(pred.view(), Array3::zeros((1, 2, 3)).view()).is_err());
    }

    #[test]
    fn mean_lsd_examples() {
        let truth = Array3::zeros((2, 2, 1));
        let pred = Array3::from_shape_vec((2, 2, 1), vec![1.0, -1.0, 3.0, 3.0]).unwrap();
        assert_eq!(mean_lsd(pred.view(), truth.view()).unwrap(), 2.0);
        let pred = Array3::from_elem((2, 2, 4), 2.5);
        assert!((mean_lsd(pred.view(), truth.broadcast((2, 2, 4)).unwrap()).unwrap() - 2.5).abs() < 1e-12);
        let empty = Array3::<f64>::zeros((0, 2, 3));
        assert_eq!(mean_lsd(empty.view(), empty.view()), Err(MetricsError::Empty));
    }

    #[test]
    fn per_frequency_examples() {
        let t = random(2, (4, 2, 6));
        assert!(lsd_per_frequency(t.view(), t.view()).unwrap().iter().all(|&v| v == 0.0));
        let mut p = t.clone();
        p.slice_mut(ndarray::s![.., .., 2]).mapv_inplace(|v| v + 1.5);
        let v = lsd_per_frequency(p.view(), t.view()).unwrap();
        for (k, x) in v.iter().enumerate() {
            let expected = if k == 2 { 1.5 } else { 0.0 };
            assert!((x - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ild_examples() {
        let same = array![[-3.0, -10.0, 2.0], [-3.0, -10.0, 2.0]];
        assert_eq!(broadband_ild(same.view()), 0.0);
        let right = array![-3.0, -10.0, 2.0];
        let mut gained = Array2::zeros((2, 3));
        gained.row_mut(0).assign(&(&right + 6.02));
        gained.row_mut(1).assign(&right);
        assert!((broadband_ild(gained.view()) - 6.02).abs() < 1e-3);
        let lin = |x: f64| 20.0 * x.log10();
        let closed = array![[lin(1.0), lin(1.0)], [lin(1.0), lin(0.5)]];
        assert!((broadband_ild(closed.view()) - 10.0 * (2.0f64 / 1.25).log10()).abs() < 1e-12);
        assert!((broadband_ild(closed.view()) - 2.041).abs() < 1e-3);
        // Extreme levels neither overflow nor underflow.
        assert!((broadband_ild((closed.clone() + 400.0).view()) - broadband_ild(closed.view())).abs() < 1e-9);
        assert!((broadband_ild((closed.clone() - 700.0).view()) - broadband_ild(closed.view())).abs() < 1e-9);
    }

    #[test]
    fn ild_error_examples() {
        let t = random(3, (5, 2, 4));
        assert_eq!(ild_error(t.view(), t.view()).unwrap(), 0.0);
        let mut p = t.clone();
        p.slice_mut(ndarray::s![.., 0, ..]).mapv_inplace(|v| v + 2.0);
        assert!((ild_error(p.view(), t.view()).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unmeasured_rows_only() {
        let truth = random(4, (6, 2, 3));
        let cfg = SparseConfig::new(vec![1, 4], 6).unwrap();
        let mut pred = random(5, (6, 2, 3));
        let base = evaluate_unmeasured("s", pred.view(), truth.view(), &cfg).unwrap();
        pred.slice_mut(ndarray::s![1, .., ..]).fill(1e3);
        pred.slice_mut(ndarray::s![4, .., ..]).fill(-1e3);
        let again = evaluate_unmeasured("s", pred.view(), truth.view(), &cfg).unwrap();
        assert_eq!(base, again);
        assert_eq!(base.per_direction_lsd_db.dim(), (4, 2));
    }

    #[test]
    fn table_layout() {
        let mut table = ResultsTable::new();
        for (label, m, lsd) in [("nearest", 3, 6.0), ("nearest", 3, 4.0), ("nearest", 5, 3.0), ("sh", 3, 5.0)] {
            table.push(
                label,
                MetricsReport {
                    subject_id: format!("s{lsd}"),
                    m,
                    mean_lsd_db: lsd,
                    ild_error_db: 1.0,
                    per_frequency_lsd_db: Array1::from_elem(2, lsd),
                    per_direction_lsd_db: Array2::zeros((1, 2)),
                },
            );
        }
        let md = table.to_markdown();
        assert!(md.contains("| Method | M=3 ILD [dB] | M=3 LSD [dB] | M=5 ILD [dB] | M=5 LSD [dB] |"));
        assert!(md.contains("| nearest | 1.00 | 5.00 | 1.00 | 3.00 |"));
        assert!(md.contains("| sh | 1.00 | 5.00 | - | - |"));
        assert_eq!(table.to_csv().lines().count(), 5);
        let pf = table.per_frequency_csv(&[100.0, 200.0]);
        assert_eq!(pf.lines().next().unwrap(), "frequency_hz,nearest_M3,nearest_M5,sh_M3");
    }

    proptest! {
        #[test]
        fn metric_symmetries(seed in any::<u64>(), c in -50.0f64..50.0) {
            let a = random(seed, (3, 2, 5));
            let b = random(seed.wrapping_add(1), (3, 2, 5));
            let lsd_ab = mean_lsd(a.view(), b.view()).unwrap();
            prop_assert_eq!(lsd_ab, mean_lsd(b.view(), a.view()).unwrap());
            prop_assert_eq!(ild_error(a.view(), b.view()).unwrap(), ild_error(b.view(), a.view()).unwrap());
            let shifted = mean_lsd((&a + c).view(), (&b + c).view()).unwrap();
            prop_assert!((shifted - lsd_ab).abs() < 1e-9);
            for d in 0..3 {
                let s = a.index_axis(Axis(0), d);
                prop_assert!((broadband_ild((&s + c).view()) - broadband_ild(s)).abs() < 1e-9);
            }
        }
    }
}
