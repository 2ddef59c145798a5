use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hrtf_core::baselines::Method;
use hrtf_core::dataio::{self, generate_synthetic, select_sparse_subset, SubsetStrategy, SyntheticSpec};
use hrtf_core::metrics::ResultsTable;
use hrtf_core::model::{FdModel, ModelConfig, Variant};
use hrtf_core::nn::checkpoint;
use hrtf_core::nn::ParamStore;
use hrtf_core::training::{self, evaluate, fit, BaselinePredictor, Evaluation, ModelPredictor, Predictor, TrainConfig};
use hrtf_core::types::{HrtfSet, SparseConfig};
use ndarray::Axis;

use crate::config::{DataSource, RunConfig, SparseSource};
use crate::error::{io_error, CliError};

pub const RESOLVED_CONFIG: &str = "run.resolved.cfg";
pub const CHECKPOINT: &str = "checkpoint.fdckpt";
pub const HISTORY: &str = "history.csv";
pub const SPARSE_LIST: &str = "sparse.txt";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_error(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_error(path))
}

fn write_resolved(cfg: &RunConfig, model: Option<&ModelConfig>) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir()?;
    create_dir(out)?;
    let path = out.join(RESOLVED_CONFIG);
    write_file(&path, cfg.resolved_text(model))?;
    Ok(path)
}

pub fn load_sets(cfg: &RunConfig) -> Result<Vec<HrtfSet>, CliError> {
    let sets = match cfg.resolve_data()? {
        DataSource::Path(p) => dataio::load_dataset(&p)?,
        DataSource::Synthetic(spec) => generate_synthetic(&spec)?,
    };
    let first = &sets[0];
    for s in &sets[1..] {
        if s.directions() != first.directions() || s.freq_grid() != first.freq_grid() {
            return Err(CliError::data(format!(
                "subject {} uses a different direction or frequency grid than {}",
                s.subject_id, first.subject_id
            )));
        }
    }
    Ok(sets)
}

/// Reads whitespace- or comma-separated direction indices; `#` starts a comment.
pub fn read_index_list(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let idx = tok
                .parse()
                .map_err(|_| CliError::usage(format!("{}: line {}: `{tok}` is not a direction index", path.display(), i + 1)))?;
            out.push(idx);
        }
    }
    Ok(out)
}

pub fn sparse_config(cfg: &RunConfig, sets: &[HrtfSet]) -> Result<SparseConfig, CliError> {
    let strategy = match &cfg.sparse {
        Some(SparseSource::FarthestPoint(m)) => SubsetStrategy::FarthestPoint { m: *m },
        Some(SparseSource::File(p)) => SubsetStrategy::Explicit(read_index_list(p)?),
        None => return Err(CliError::usage("no sparse configuration: pass --m or --sparse, or set sparse_m / sparse_file")),
    };
    // A bad M or index list is a usage problem, not a data problem.
    select_sparse_subset(sets[0].directions(), &strategy).map_err(|e| CliError::usage(e.to_string()))
}

/// Splits off the trailing `test_subjects`; with none held out every
/// subject is in both halves.
fn split_test(cfg: &RunConfig, sets: Vec<HrtfSet>) -> Result<(Vec<HrtfSet>, Vec<HrtfSet>), CliError> {
    let n = sets.len();
    match cfg.test_subjects {
        0 => Ok((sets.clone(), sets)),
        k if k >= n => Err(CliError::usage(format!("test_subjects = {k} leaves no training subjects out of {n}"))),
        k => {
            let mut pool = sets;
            let test = pool.split_off(n - k);
            Ok((pool, test))
        }
    }
}

fn test_sets(cfg: &RunConfig, sets: Vec<HrtfSet>) -> Result<Vec<HrtfSet>, CliError> {
    Ok(split_test(cfg, sets)?.1)
}

/// Dense predictions with measured rows copied from the input.
fn write_predictions(dir: &Path, predictor: &dyn Predictor, sets: &[HrtfSet], sparse: &SparseConfig) -> Result<(), CliError> {
    create_dir(dir)?;
    for set in sets {
        let p = predictor.predict_unmeasured(set, sparse)?;
        let mut dense = set.logmag_db().to_owned();
        for (row, &d) in sparse.unmeasured().iter().enumerate() {
            dense.index_axis_mut(Axis(0), d).assign(&p.values.index_axis(Axis(0), row));
        }
        let out = HrtfSet::new(set.subject_id.clone(), set.directions().to_vec(), set.freq_grid().clone(), dense)?
            .with_sample_rate(set.sample_rate_hz);
        dataio::write_set(&out, dir.join(format!("{}.{}", set.subject_id, dataio::FILE_EXTENSION)))?;
    }
    Ok(())
}

fn diagnostics(evals: &[&Evaluation]) -> String {
    let mut s = String::new();
    for e in evals {
        if e.extrapolated > 0 || e.fallbacks > 0 {
            let _ = writeln!(
                s,
                "{}: {} targets extrapolated outside the measured hull; {} subjects fell back to distance weighting",
                e.label, e.extrapolated, e.fallbacks
            );
        }
    }
    s
}

fn write_reports(out: &Path, table: &ResultsTable, freqs_hz: &[f64], notes: &str) -> Result<(), CliError> {
    create_dir(out)?;
    write_file(&out.join("report.csv"), table.to_csv())?;
    write_file(&out.join("per_frequency.csv"), table.per_frequency_csv(freqs_hz))?;
    let mut md = table.to_markdown();
    if !notes.is_empty() {
        md.push('\n');
        md.push_str(notes);
    }
    write_file(&out.join("report.md"), md)?;
    Ok(())
}

fn print_summary(eval: &Evaluation) {
    println!(
        "{}: M={} mean LSD {:.4} dB, ILD error {:.4} dB over {} subjects",
        eval.label,
        eval.reports.first().map_or(0, |r| r.m),
        eval.aggregate.mean_lsd_db,
        eval.aggregate.ild_error_db,
        eval.aggregate.n_subjects
    );
}

pub struct SynthArgs {
    pub subjects: Option<u32>,
    pub dirs: Option<u32>,
    pub freqs: Option<u32>,
    pub sh_order: Option<u32>,
    pub notches: Option<u32>,
    pub seed: Option<u64>,
}

pub fn synth(mut cfg: RunConfig, args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match &cfg.data {
        Some(DataSource::Synthetic(spec)) => spec.clone(),
        Some(DataSource::Path(_)) => return Err(CliError::usage("synth takes synth_* keys, not `dataset`")),
        None => SyntheticSpec::new(0, 32, 64, 32),
    };
    spec.seed = args.seed.unwrap_or(spec.seed);
    spec.n_subjects = args.subjects.unwrap_or(spec.n_subjects);
    spec.n_directions = args.dirs.unwrap_or(spec.n_directions);
    spec.n_freqs = args.freqs.unwrap_or(spec.n_freqs);
    spec.sh_order = args.sh_order.unwrap_or(spec.sh_order);
    spec.notch_count = args.notches.unwrap_or(spec.notch_count);
    if spec.n_subjects == 0 {
        return Err(CliError::usage("--subjects must be >= 1"));
    }
    cfg.data = Some(DataSource::Synthetic(spec.clone()));
    let out = cfg.out_dir()?.to_path_buf();
    let sets = generate_synthetic(&spec)?;
    let header = [
        ("synth_seed", spec.seed.to_string()),
        ("synth_subjects", spec.n_subjects.to_string()),
        ("synth_dirs", spec.n_directions.to_string()),
        ("synth_freqs", spec.n_freqs.to_string()),
        ("synth_sh_order", spec.sh_order.to_string()),
        ("synth_notches", spec.notch_count.to_string()),
    ]
    .map(|(k, v)| (k.to_string(), v));
    let paths = dataio::write_dataset(&out, &sets, &header)?;
    write_resolved(&cfg, None)?;
    println!("wrote {} subjects to {}", paths.len(), out.display());
    Ok(())
}

/// Writes the measured indices in the format `--sparse` reads.
fn write_sparse_list(out: &Path, set: &HrtfSet, sparse: &SparseConfig) -> Result<(), CliError> {
    let mut text = format!("# measured direction indices, M = {} of D = {}\n", sparse.m(), sparse.n_directions());
    for &i in sparse.measured() {
        let d = set.directions()[i];
        let _ = writeln!(text, "{i} # az {:.4} el {:.4}", d.azimuth_deg(), d.elevation_deg());
    }
    write_file(&out.join(SPARSE_LIST), text)
}

pub fn subset(cfg: RunConfig) -> Result<(), CliError> {
    let sets = load_sets(&cfg)?;
    let sparse = sparse_config(&cfg, &sets)?;
    let out = cfg.out_dir()?;
    create_dir(out)?;
    write_sparse_list(out, &sets[0], &sparse)?;
    write_resolved(&cfg, None)?;
    println!("selected {} of {} directions -> {}", sparse.m(), sparse.n_directions(), out.join(SPARSE_LIST).display());
    Ok(())
}

pub fn baseline(cfg: RunConfig, method: Method) -> Result<(), CliError> {
    let sets = load_sets(&cfg)?;
    let sparse = sparse_config(&cfg, &sets)?;
    let freqs = sets[0].freq_grid().frequencies_hz().to_vec();
    let test = test_sets(&cfg, sets)?;
    let out = cfg.out_dir()?.to_path_buf();
    let predictor = BaselinePredictor(method);
    let eval = evaluate(&predictor, &test, &sparse, cfg.threads)?;
    write_predictions(&out.join("predictions"), &predictor, &test, &sparse)?;
    let mut table = ResultsTable::new();
    table.extend(&eval.label, eval.reports.iter().cloned());
    let notes = diagnostics(&[&eval]);
    write_reports(&out, &table, &freqs, &notes)?;
    write_resolved(&cfg, None)?;
    print_summary(&eval);
    if matches!(method, Method::Barycentric) {
        println!("extrapolated targets: {}; fallback subjects: {}", eval.extrapolated, eval.fallbacks);
    }
    Ok(())
}

fn progress(label: &str) -> impl FnMut(&training::EpochRecord) + '_ {
    move |r| eprintln!("[{label}] epoch {:>4}  train {:.4}  val LSD {:.4} dB", r.epoch, r.train_loss, r.val_lsd)
}

fn train_one(
    pool: Vec<HrtfSet>,
    sparse: &SparseConfig,
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    dir: &Path,
    label: &str,
) -> Result<(FdModel, ParamStore<f32>), CliError> {
    create_dir(dir)?;
    let (train, val) = tc.split_validation(pool)?;
    let tc = TrainConfig { checkpoint_path: Some(dir.join(CHECKPOINT)), ..tc.clone() };
    let outcome = fit(&train, &val, sparse, model_cfg, &tc, &mut progress(label))?;
    write_file(&dir.join(HISTORY), training::history_csv(&outcome.history))?;
    if outcome.best.epoch == 0 {
        // Zero-epoch runs never improve on anything, so persist the initial state.
        checkpoint::write(&dir.join(CHECKPOINT), &outcome.best)?;
    }
    eprintln!("[{label}] best epoch {} val LSD {:.4} dB", outcome.best.epoch, outcome.best.val_lsd);
    Ok((outcome.model, outcome.params))
}

pub fn train(cfg: RunConfig) -> Result<(), CliError> {
    let sets = load_sets(&cfg)?;
    let sparse = sparse_config(&cfg, &sets)?;
    let model_cfg = cfg.model_config(sparse.m(), sets[0].n_directions(), sets[0].n_freqs())?;
    let out = cfg.out_dir()?.to_path_buf();
    create_dir(&out)?;
    write_sparse_list(&out, &sets[0], &sparse)?;
    let (pool, _) = split_test(&cfg, sets)?;
    write_resolved(&cfg, Some(&model_cfg))?;
    train_one(pool, &sparse, &model_cfg, &cfg.train, &out, &model_cfg.variant.to_string())?;
    println!("checkpoint -> {}", out.join(CHECKPOINT).display());
    Ok(())
}

pub fn eval_checkpoint(cfg: RunConfig, path: &Path) -> Result<(), CliError> {
    let ck = checkpoint::read(path)?;
    let (model, params) = training::load_checkpoint(&ck)?;
    let sets = load_sets(&cfg)?;
    let sparse = sparse_config(&cfg, &sets)?;
    let mc = model.config();
    let (m, d, f) = (sparse.m(), sets[0].n_directions(), sets[0].n_freqs());
    if (mc.m, mc.d, mc.f) != (m, d, f) {
        return Err(CliError::usage(format!(
            "checkpoint expects M={}, D={}, F={} but the data and sparse selection give M={m}, D={d}, F={f}",
            mc.m, mc.d, mc.f
        )));
    }
    let freqs = sets[0].freq_grid().frequencies_hz().to_vec();
    let test = test_sets(&cfg, sets)?;
    let out = cfg.out_dir()?.to_path_buf();
    let predictor = ModelPredictor { model: &model, params: &params };
    let eval = evaluate(&predictor, &test, &sparse, cfg.threads)?;
    write_predictions(&out.join("predictions"), &predictor, &test, &sparse)?;
    let mut table = ResultsTable::new();
    table.extend(&eval.label, eval.reports.iter().cloned());
    write_reports(&out, &table, &freqs, "")?;
    write_resolved(&cfg, Some(mc))?;
    print_summary(&eval);
    Ok(())
}

/// The design-space rows and ablations, each as a change to the base model
/// and training configs.
pub fn variant_table() -> Vec<(&'static str, fn(&mut ModelConfig, &mut TrainConfig))> {
    fn set(v: Variant) -> impl Fn(&mut ModelConfig) {
        move |m: &mut ModelConfig| {
            m.variant = v;
            m.use_conv = true;
            m.use_posenc = true;
        }
    }
    vec![
        ("spatial_only", |m, _| set(Variant::SpatialOnly)(m)),
        ("per_freq_mlp", |m, _| set(Variant::PerFreqMlp)(m)),
        ("vanilla_conv", |m, _| set(Variant::VanillaConv)(m)),
        ("dilated_conv", |m, _| set(Variant::DilatedConv)(m)),
        ("conformer", |m, _| set(Variant::Conformer)(m)),
        ("conformer_no_conv", |m, _| {
            set(Variant::Conformer)(m);
            m.use_conv = false;
        }),
        ("conformer_no_posenc", |m, _| {
            set(Variant::Conformer)(m);
            m.use_posenc = false;
        }),
        ("conformer_no_sgl", |m, t| {
            set(Variant::Conformer)(m);
            t.beta = 0.0;
        }),
    ]
}

pub fn eval_variants(cfg: RunConfig, only: &[String]) -> Result<(), CliError> {
    let table_rows = variant_table();
    for name in only {
        if !table_rows.iter().any(|(n, _)| n == name) {
            let known: Vec<&str> = table_rows.iter().map(|(n, _)| *n).collect();
            return Err(CliError::usage(format!("unknown variant row `{name}` (expected one of {})", known.join(", "))));
        }
    }
    if cfg.test_subjects == 0 {
        return Err(CliError::usage("the variant table needs held-out subjects: set test_subjects >= 1"));
    }
    let sets = load_sets(&cfg)?;
    let sparse = sparse_config(&cfg, &sets)?;
    let base = cfg.model_config(sparse.m(), sets[0].n_directions(), sets[0].n_freqs())?;
    let freqs = sets[0].freq_grid().frequencies_hz().to_vec();
    let (pool, test) = split_test(&cfg, sets)?;
    let out = cfg.out_dir()?.to_path_buf();
    write_resolved(&cfg, Some(&base))?;
    let mut table = ResultsTable::new();
    for (label, apply) in table_rows {
        if !only.is_empty() && !only.iter().any(|n| n == label) {
            continue;
        }
        let (mut mc, mut tc) = (base.clone(), cfg.train.clone());
        apply(&mut mc, &mut tc);
        mc.validate()?;
        let dir = out.join("variants").join(label);
        create_dir(&dir)?;
        write_file(&dir.join(RESOLVED_CONFIG), cfg.with_train(tc.clone()).resolved_text(Some(&mc)))?;
        let (model, params) = train_one(pool.clone(), &sparse, &mc, &tc, &dir, label)?;
        let mut eval = evaluate(&ModelPredictor { model: &model, params: &params }, &test, &sparse, cfg.threads)?;
        eval.label = label.to_string();
        print_summary(&eval);
        table.extend(label, eval.reports);
    }
    write_reports(&out, &table, &freqs, "")?;
    Ok(())
}

pub fn corr(cfg: RunConfig) -> Result<(), CliError> {
    let sets = load_sets(&cfg)?;
    let corr = dataio::frequency_correlation(&sets)?;
    let out = cfg.out_dir()?;
    create_dir(out)?;
    write_file(&out.join("correlation.csv"), dataio::correlation_csv(sets[0].freq_grid().frequencies_hz(), &corr))?;
    write_resolved(&cfg, None)?;
    println!("{}x{} correlation matrix -> {}", corr.nrows(), corr.ncols(), out.join("correlation.csv").display());
    Ok(())
}

pub fn report(cfg: RunConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        rows.extend(crate::report::parse_report_csv(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?);
    }
    let out = cfg.out_dir()?;
    create_dir(out)?;
    write_file(&out.join("report.csv"), crate::report::to_csv(&rows))?;
    write_file(&out.join("report.md"), crate::report::to_markdown(&rows))?;
    write_resolved(&cfg, None)?;
    println!("combined {} rows from {} reports -> {}", rows.len(), inputs.len(), out.display());
    Ok(())
}
