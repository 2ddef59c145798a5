//! Central-difference verification of tape gradients in `f64`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NnError, Tape, Var};
use super::tensor::ParamStore;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const MIN_COORDS: usize = 64;
/// Denominator floor of the relative error, so coordinates whose gradient
/// is near zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub n_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn eval<F>(params: &ParamStore<f64>, f: &F) -> Result<f64, NnError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut tape = Tape::new(false, 0);
    let loss = f(&mut tape, params)?;
    tape.check_finite()?;
    Ok(tape.scalar(loss))
}

/// Backpropagated gradients of `f` for every parameter, in store order.
pub fn analytic_grads<F>(params: &ParamStore<f64>, f: &F) -> Result<Vec<Vec<f64>>, NnError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut tape = Tape::new(false, 0);
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(loss)?;
    let mut scratch = params.clone();
    scratch.zero_grad();
    tape.accumulate(&grads, &mut scratch);
    Ok(scratch.iter().map(|(_, t)| t.grad.clone()).collect())
}

/// Compares `analytic` against central differences of `f` with step `h`.
/// Tensors larger than `min_coords` are subsampled to `min_coords` seeded
/// coordinates; smaller ones are checked exhaustively.
pub fn compare<F>(
    params: &ParamStore<f64>,
    f: &F,
    analytic: &[Vec<f64>],
    h: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, n_checked: 0 };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let t = params.get(id);
        if !t.requires_grad {
            continue;
        }
        let n = t.numel();
        let coords: Vec<usize> = if n <= min_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, min_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = work.get(id).data[i];
            work.get_mut(id).data[i] = orig + h;
            let up = eval(&work, f)?;
            work.get_mut(id).data[i] = orig - h;
            let down = eval(&work, f)?;
            work.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.n_checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some((params.name(id).to_string(), i));
                }
            }
        }
    }
    Ok(report)
}

/// [`analytic_grads`] followed by [`compare`] with the default step and
/// coordinate budget.
pub fn grad_check<F>(params: &ParamStore<f64>, f: F, seed: u64) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, NnError>,
{
    let analytic = analytic_grads(params, &f)?;
    compare(params, &f, &analytic, DEFAULT_STEP, MIN_COORDS, seed)
}
