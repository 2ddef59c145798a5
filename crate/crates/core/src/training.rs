//! Objectives, the supervised training loop with validation-based
//! checkpoint selection, and evaluation of models and baselines.
//!
//! One training example is one subject: the measured rows `[M, 2, F]` as
//! input and the full dense set `[D, 2, F]` as target.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array3, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{self, BaselineError, Method};
use crate::format::sig;
use crate::kv::{join, KvDoc, KvError};
use crate::metrics::{self, Aggregate, MetricsError, MetricsReport};
use crate::model::{FdModel, ModelConfig, ModelError};
use crate::nn::checkpoint::{self, Checkpoint, CheckpointError};
use crate::nn::{clip_grad_norm, Adam, NnError, ParamStore, Tape, Var};
use crate::types::{split_set, HrtfSet, SparseConfig, TypeError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("subject {0} appears in both the training and validation splits")]
    Overlap(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {source}")]
    NonFinite { epoch: usize, batch: usize, source: NnError },
    #[error("invalid training config: {0}")]
    Invalid(String),
    #[error("subject {subject}: {msg}")]
    Subject { subject: String, msg: String },
    #[error("train config: {0}")]
    Config(#[from] KvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Types(#[from] TypeError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl TrainError {
    /// Whether the failure is a NaN/infinity abort.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. }
                | TrainError::Nn(NnError::NonFinite(_) | NnError::NonFiniteGrad(_))
                | TrainError::Model(ModelError::Nn(NnError::NonFinite(_)))
        )
    }
}

/// Which training subjects are held out for checkpoint selection.
#[derive(Debug, Clone, PartialEq)]
pub enum Validation {
    /// The last `⌈fraction·n⌉` subjects, at least one, at most `n − 1`.
    Fraction(f64),
    /// The last `n` subjects.
    Count(usize),
    /// Subjects with these ids.
    Ids(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Weight of the spectral gradient term.
    pub beta: f64,
    pub seed: u64,
    pub validation: Validation,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub checkpoint_path: Option<PathBuf>,
    /// When false the history's wall-clock column is written as 0 so
    /// repeated runs produce identical files.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 800,
            beta: 1.0,
            seed: 0,
            validation: Validation::Fraction(0.1),
            clip_norm: Some(5.0),
            checkpoint_path: None,
            record_wall_time: true,
        }
    }
}

pub const TRAIN_KEYS: [&str; 10] = [
    "learning_rate",
    "batch_size",
    "max_epochs",
    "beta",
    "seed",
    "val_fraction",
    "val_subjects",
    "val_ids",
    "clip_norm",
    "record_wall_time",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Invalid(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        if let Validation::Fraction(f) = self.validation {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("val_fraction must be in (0, 1), got {f}"));
            }
        }
        Ok(())
    }

    /// Reads the training keys of `doc`; absent keys keep their defaults.
    /// `clip_norm = 0` disables clipping.
    pub fn from_doc(doc: &KvDoc) -> Result<Self, TrainError> {
        let d = Self::default();
        let given = ["val_fraction", "val_subjects", "val_ids"].iter().filter(|k| doc.raw(k).is_some()).count();
        if given > 1 {
            let line = doc.line_of("val_ids").max(doc.line_of("val_subjects"));
            return Err(KvError::new(line, "set only one of val_fraction, val_subjects, val_ids").into());
        }
        let validation = if let Some(ids) = doc.get_list::<String>("val_ids")? {
            Validation::Ids(ids)
        } else if let Some(n) = doc.get("val_subjects")? {
            Validation::Count(n)
        } else {
            Validation::Fraction(doc.get_or("val_fraction", 0.1)?)
        };
        let clip: f64 = doc.get_or("clip_norm", 5.0)?;
        let cfg = Self {
            learning_rate: doc.get_or("learning_rate", d.learning_rate)?,
            batch_size: doc.get_or("batch_size", d.batch_size)?,
            max_epochs: doc.get_or("max_epochs", d.max_epochs)?,
            beta: doc.get_or("beta", d.beta)?,
            seed: doc.get_or("seed", d.seed)?,
            validation,
            clip_norm: (clip != 0.0).then_some(clip),
            checkpoint_path: None,
            record_wall_time: doc.get_or("record_wall_time", d.record_wall_time)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "beta = {:?}", self.beta);
        let _ = writeln!(s, "seed = {}", self.seed);
        match &self.validation {
            Validation::Fraction(f) => writeln!(s, "val_fraction = {f:?}"),
            Validation::Count(n) => writeln!(s, "val_subjects = {n}"),
            Validation::Ids(ids) => writeln!(s, "val_ids = {}", join(ids)),
        }
        .expect("write to string");
        let _ = writeln!(s, "clip_norm = {:?}", self.clip_norm.unwrap_or(0.0));
        let _ = writeln!(s, "record_wall_time = {}", self.record_wall_time);
        s
    }

    /// Splits `sets` into (train, validation) per [`TrainConfig::validation`].
    pub fn split_validation(&self, sets: Vec<HrtfSet>) -> Result<(Vec<HrtfSet>, Vec<HrtfSet>), TrainError> {
        let n = sets.len();
        if n < 2 {
            return Err(TrainError::Invalid(format!("need at least 2 subjects to carve a validation split, got {n}")));
        }
        let n_val = match &self.validation {
            Validation::Fraction(f) => ((f * n as f64).ceil() as usize).clamp(1, n - 1),
            Validation::Count(k) => {
                if *k == 0 || *k >= n {
                    return Err(TrainError::Invalid(format!("val_subjects must be in 1..{n}, got {k}")));
                }
                *k
            }
            Validation::Ids(ids) => {
                for id in ids {
                    if !sets.iter().any(|s| &s.subject_id == id) {
                        return Err(TrainError::Invalid(format!("validation subject {id} not in dataset")));
                    }
                }
                let (val, train): (Vec<_>, Vec<_>) = sets.into_iter().partition(|s| ids.contains(&s.subject_id));
                return Ok((train, val));
            }
        };
        let mut train = sets;
        let val = train.split_off(n - n_val);
        Ok((train, val))
    }
}

fn check_pair(pred: &ArrayView3<'_, f64>, truth: &ArrayView3<'_, f64>) -> Result<(), TrainError> {
    if pred.shape() != truth.shape() {
        return Err(MetricsError::Shape { pred: pred.shape().to_vec(), truth: truth.shape().to_vec() }.into());
    }
    Ok(())
}

/// Mean over directions and ears of the per-row LSD, over all rows given.
pub fn loss_lsd(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>) -> Result<f64, TrainError> {
    check_pair(&pred, &truth)?;
    let (d, e, f) = pred.dim();
    if d * e == 0 || f == 0 {
        return Err(MetricsError::Empty.into());
    }
    let mut total = 0.0;
    for (p, t) in pred.rows().into_iter().zip(truth.rows()) {
        let ss: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        total += (ss / f as f64).sqrt();
    }
    Ok(total / (d * e) as f64)
}

/// Mean absolute mismatch of adjacent-bin first differences,
/// normalized by `2D(F − 1)`.
pub fn loss_sgl(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>) -> Result<f64, TrainError> {
    check_pair(&pred, &truth)?;
    let (d, e, f) = pred.dim();
    if f < 2 {
        return Err(TrainError::Invalid(format!("spectral gradient loss needs F >= 2, got {f}")));
    }
    let mut total = 0.0;
    for (p, t) in pred.rows().into_iter().zip(truth.rows()) {
        for k in 0..f - 1 {
            total += ((p[k + 1] - p[k]) - (t[k + 1] - t[k])).abs();
        }
    }
    Ok(total / (d * e * (f - 1)) as f64)
}

/// `loss_lsd + beta·loss_sgl`; with `beta = 0` exactly `loss_lsd`.
pub fn loss_total(pred: ArrayView3<'_, f64>, truth: ArrayView3<'_, f64>, beta: f64) -> Result<f64, TrainError> {
    if beta < 0.0 {
        return Err(TrainError::Invalid(format!("beta must be >= 0, got {beta}")));
    }
    let lsd = loss_lsd(pred, truth)?;
    if beta == 0.0 {
        return Ok(lsd);
    }
    Ok(lsd + beta * loss_sgl(pred, truth)?)
}

/// Records `loss_lsd + beta·loss_sgl` on a tape for a prediction whose
/// trailing axis is frequency.
pub fn tape_loss_total<T: crate::nn::Real>(
    tape: &mut Tape<T>,
    pred: Var,
    truth: &[T],
    beta: f64,
) -> Result<Var, NnError> {
    let lsd = tape.lsd_loss(pred, truth)?;
    if beta == 0.0 {
        return Ok(lsd);
    }
    let sgl = tape.sgl_loss(pred, truth)?;
    let sgl = tape.scale(sgl, T::of(beta));
    tape.add(lsd, sgl)
}

/// One subject as `f32` network input and target.
#[derive(Debug, Clone)]
pub struct Example {
    pub subject_id: String,
    pub input: Vec<f32>,
    pub target: Vec<f32>,
}

impl Example {
    pub fn new(set: &HrtfSet, sparse: &SparseConfig) -> Result<Self, TrainError> {
        let (measured, _) = split_set(set, sparse)?;
        Ok(Self {
            subject_id: set.subject_id.clone(),
            input: measured.iter().map(|v| *v as f32).collect(),
            target: set.logmag_db().iter().map(|v| *v as f32).collect(),
        })
    }
}

/// Owns a model, its parameters and optimizer state, and takes Adam steps.
pub struct Trainer {
    pub model: FdModel,
    pub params: ParamStore<f32>,
    pub adam: Adam,
    pub beta: f64,
    pub clip_norm: Option<f64>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let (model, params) = FdModel::new::<f32>(model_cfg, cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self { model, params, adam: Adam::new(cfg.learning_rate), beta: cfg.beta, clip_norm: cfg.clip_norm, rng })
    }

    /// One optimizer step on `batch`; returns the batch loss before the step.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64, TrainError> {
        let cfg = self.model.config();
        let (m, f) = (cfg.m, cfg.f);
        let b = batch.len();
        let mut tape = Tape::new(true, self.rng.next_u64());
        let input = tape.input(&[b, m, 2, f], batch.iter().flat_map(|e| e.input.iter().copied()).collect());
        let truth: Vec<f32> = batch.iter().flat_map(|e| e.target.iter().copied()).collect();
        let tr = self.model.forward(&mut tape, &self.params, input)?;
        let loss = tape_loss_total(&mut tape, tr.output, &truth, self.beta)?;
        tape.check_finite()?;
        let grads = tape.backward(loss)?;
        self.params.zero_grad();
        tape.accumulate(&grads, &mut self.params);
        if let Some(c) = self.clip_norm {
            clip_grad_norm(&mut self.params, c);
        }
        self.adam.step(&mut self.params)?;
        Ok(tape.scalar(loss) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_lsd: f64,
    pub wall_seconds: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_lsd,wall_seconds\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, sig(r.train_loss, 9), sig(r.val_lsd, 9), sig(r.wall_seconds, 6));
    }
    s
}

pub struct FitOutcome {
    pub model: FdModel,
    /// Parameters of the best checkpoint.
    pub params: ParamStore<f32>,
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn check_splits(train: &[HrtfSet], val: &[HrtfSet]) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    for v in val {
        if train.iter().any(|t| t.subject_id == v.subject_id) {
            return Err(TrainError::Overlap(v.subject_id.clone()));
        }
    }
    Ok(())
}

/// Mean over `sets` of the LSD on unmeasured directions.
pub fn validation_lsd(model: &FdModel, params: &ParamStore<f32>, sets: &[HrtfSet], sparse: &SparseConfig) -> Result<f64, TrainError> {
    let predictor = ModelPredictor { model, params };
    let eval = evaluate(&predictor, sets, sparse, 1)?;
    Ok(eval.aggregate.mean_lsd_db)
}

/// Trains for `cfg.max_epochs` and keeps the checkpoint with the lowest
/// validation LSD. `on_epoch` sees every history record as it is produced.
pub fn fit(
    train: &[HrtfSet],
    val: &[HrtfSet],
    sparse: &SparseConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome, TrainError> {
    check_splits(train, val)?;
    if sparse.m() != model_cfg.m || sparse.n_directions() != model_cfg.d {
        return Err(TrainError::Invalid(format!(
            "sparse config (M = {}, D = {}) does not match model (M = {}, D = {})",
            sparse.m(),
            sparse.n_directions(),
            model_cfg.m,
            model_cfg.d
        )));
    }
    let examples = train.iter().map(|s| Example::new(s, sparse)).collect::<Result<Vec<_>, _>>()?;
    let mut trainer = Trainer::new(model_cfg, cfg)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(2);
    let config_text = model_cfg.to_text();
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = trainer.step(&batch).map_err(|e| match e {
                TrainError::Nn(source @ (NnError::NonFinite(_) | NnError::NonFiniteGrad(_)))
                | TrainError::Model(ModelError::Nn(source @ NnError::NonFinite(_))) => {
                    TrainError::NonFinite { epoch, batch: bi + 1, source }
                }
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let val_lsd = validation_lsd(&trainer.model, &trainer.params, val, sparse)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            val_lsd,
            wall_seconds: if cfg.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        if best.as_ref().is_none_or(|b| val_lsd < b.val_lsd) {
            let mut params = trainer.params.clone();
            params.zero_grad();
            let ck = Checkpoint {
                config: config_text.clone(),
                params,
                adam: trainer.adam.clone(),
                epoch: epoch as u64,
                val_lsd,
            };
            if let Some(path) = &cfg.checkpoint_path {
                checkpoint::write(path, &ck)?;
            }
            best = Some(ck);
        }
        on_epoch(&record);
        history.push(record);
    }
    let best = match best {
        Some(b) => b,
        None => {
            // Zero epochs: the initial parameters are the only candidate.
            let val_lsd = validation_lsd(&trainer.model, &trainer.params, val, sparse)?;
            let mut params = trainer.params.clone();
            params.zero_grad();
            let ck = Checkpoint { config: config_text, params, adam: trainer.adam.clone(), epoch: 0, val_lsd };
            if let Some(path) = &cfg.checkpoint_path {
                checkpoint::write(path, &ck)?;
            }
            ck
        }
    };
    Ok(FitOutcome { model: trainer.model, params: best.params.clone(), best, history })
}

/// Rebuilds a model from a checkpoint.
pub fn load_checkpoint(ck: &Checkpoint) -> Result<(FdModel, ParamStore<f32>), TrainError> {
    let cfg = ModelConfig::from_text(&ck.config)?;
    let model = FdModel::attach(&cfg, &ck.params)?;
    Ok((model, ck.params.clone()))
}

/// Estimates for the unmeasured directions of one subject, `[U, 2, F]`.
#[derive(Debug, Clone)]
pub struct UnmeasuredPrediction {
    pub values: Array3<f64>,
    /// Targets predicted outside the measured hull.
    pub extrapolated: usize,
    /// Whether the method fell back to a simpler interpolator.
    pub fallback: bool,
}

pub trait Predictor: Sync {
    fn label(&self) -> String;
    fn predict_unmeasured(&self, set: &HrtfSet, sparse: &SparseConfig) -> Result<UnmeasuredPrediction, TrainError>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a FdModel,
    pub params: &'a ParamStore<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn label(&self) -> String {
        self.model.config().variant.to_string()
    }

    fn predict_unmeasured(&self, set: &HrtfSet, sparse: &SparseConfig) -> Result<UnmeasuredPrediction, TrainError> {
        let (measured, _) = split_set(set, sparse)?;
        let dense = self.model.predict(self.params, measured.view())?;
        Ok(UnmeasuredPrediction { values: dense.output.select(Axis(0), sparse.unmeasured()), extrapolated: 0, fallback: false })
    }
}

pub struct BaselinePredictor(pub Method);

impl Predictor for BaselinePredictor {
    fn label(&self) -> String {
        self.0.to_string()
    }

    fn predict_unmeasured(&self, set: &HrtfSet, sparse: &SparseConfig) -> Result<UnmeasuredPrediction, TrainError> {
        let (measured, _) = split_set(set, sparse)?;
        let dirs = set.directions();
        let measured_dirs: Vec<_> = sparse.measured().iter().map(|&i| dirs[i]).collect();
        let targets: Vec<_> = sparse.unmeasured().iter().map(|&i| dirs[i]).collect();
        let p = baselines::predict(self.0, measured.view(), &measured_dirs, &targets)?;
        Ok(UnmeasuredPrediction { values: p.values, extrapolated: p.extrapolated, fallback: p.fallback.is_some() })
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub label: String,
    /// In the order of the evaluated sets.
    pub reports: Vec<MetricsReport>,
    pub aggregate: Aggregate,
    pub extrapolated: usize,
    pub fallbacks: usize,
}

/// Predicts every subject's unmeasured directions and reports metrics on
/// them. Subjects are spread over up to `threads` workers; results keep
/// the input order, so the outcome does not depend on `threads`.
pub fn evaluate(
    predictor: &dyn Predictor,
    sets: &[HrtfSet],
    sparse: &SparseConfig,
    threads: usize,
) -> Result<Evaluation, TrainError> {
    if sets.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let one = |set: &HrtfSet| -> Result<(MetricsReport, UnmeasuredPrediction), TrainError> {
        let p = predictor.predict_unmeasured(set, sparse).map_err(|e| match e {
            TrainError::Types(t) => TrainError::Subject { subject: set.subject_id.clone(), msg: t.to_string() },
            other => other,
        })?;
        let (_, truth_u) = split_set(set, sparse)?;
        let r = metrics::report(&set.subject_id, sparse.m(), p.values.view(), truth_u.view())?;
        Ok((r, p))
    };
    let workers = threads.clamp(1, sets.len());
    let results: Vec<Result<_, TrainError>> = if workers == 1 {
        sets.iter().map(one).collect()
    } else {
        let chunk = sets.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = sets.chunks(chunk).map(|c| s.spawn(move || c.iter().map(one).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut reports = Vec::with_capacity(sets.len());
    let (mut extrapolated, mut fallbacks) = (0, 0);
    for r in results {
        let (rep, p) = r?;
        extrapolated += p.extrapolated;
        fallbacks += usize::from(p.fallback);
        reports.push(rep);
    }
    let aggregate = metrics::aggregate(&reports).expect("non-empty");
    Ok(Evaluation { label: predictor.label(), reports, aggregate, extrapolated, fallbacks })
}
