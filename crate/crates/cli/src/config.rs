//! Run configuration: one flat `key = value` file holding the data source,
//! sparse selection, output location, model and training keys.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hrtf_core::dataio::SyntheticSpec;
use hrtf_core::kv::KvDoc;
use hrtf_core::model::{ModelConfig, Variant, CONFIG_KEYS};
use hrtf_core::training::{TrainConfig, TRAIN_KEYS};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "HRTF_DATA_DIR";

pub const RUN_KEYS: [&str; 12] = [
    "dataset",
    "synth_seed",
    "synth_subjects",
    "synth_dirs",
    "synth_freqs",
    "synth_sh_order",
    "synth_notches",
    "sparse_m",
    "sparse_file",
    "test_subjects",
    "out",
    "threads",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Path(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SparseSource {
    FarthestPoint(usize),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Model keys are resolved once the data shape is known.
    doc: KvDoc,
    origin: String,
    pub data: Option<DataSource>,
    pub sparse: Option<SparseSource>,
    /// Trailing subjects held out for evaluation.
    pub test_subjects: usize,
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::parse("", "<defaults>").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `origin` prefixes error messages, e.g. the file name.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let err = |e: &dyn std::fmt::Display| CliError::usage(format!("{origin}: {e}"));
        let doc = KvDoc::parse(text).map_err(|e| err(&e))?;
        let allowed: Vec<&str> = RUN_KEYS.iter().chain(&CONFIG_KEYS).chain(&TRAIN_KEYS).copied().collect();
        doc.reject_unknown(&allowed).map_err(|e| err(&e))?;

        let synth_given = RUN_KEYS.iter().filter(|k| k.starts_with("synth_")).any(|k| doc.raw(k).is_some());
        let data = match (doc.raw("dataset"), synth_given) {
            (Some(_), true) => {
                return Err(err(&format!("line {}: `dataset` and `synth_*` keys are mutually exclusive", doc.line_of("dataset"))))
            }
            (Some(p), false) => Some(DataSource::Path(PathBuf::from(p))),
            (None, true) => {
                let base = SyntheticSpec::new(0, 32, 64, 32);
                let get = |k: &str, d: u32| doc.get_or(k, d).map_err(|e| err(&e));
                Some(DataSource::Synthetic(SyntheticSpec {
                    seed: doc.get_or("synth_seed", 0u64).map_err(|e| err(&e))?,
                    n_subjects: get("synth_subjects", base.n_subjects)?,
                    n_directions: get("synth_dirs", base.n_directions)?,
                    n_freqs: get("synth_freqs", base.n_freqs)?,
                    sh_order: get("synth_sh_order", base.sh_order)?,
                    notch_count: get("synth_notches", base.notch_count)?,
                }))
            }
            (None, false) => None,
        };
        let sparse = match (doc.get::<usize>("sparse_m").map_err(|e| err(&e))?, doc.raw("sparse_file")) {
            (Some(_), Some(_)) => {
                return Err(err(&format!("line {}: set only one of sparse_m, sparse_file", doc.line_of("sparse_file"))))
            }
            (Some(m), None) => Some(SparseSource::FarthestPoint(m)),
            (None, Some(p)) => Some(SparseSource::File(PathBuf::from(p))),
            (None, None) => None,
        };
        let threads: usize = doc.get_or("threads", 1).map_err(|e| err(&e))?;
        if threads == 0 {
            return Err(err(&format!("line {}: threads must be >= 1", doc.line_of("threads"))));
        }
        let train = TrainConfig::from_doc(&doc).map_err(|e| err(&e))?;
        let cfg = Self {
            test_subjects: doc.get_or("test_subjects", 0).map_err(|e| err(&e))?,
            out: doc.raw("out").map(PathBuf::from),
            threads,
            train,
            data,
            sparse,
            origin: origin.to_string(),
            doc,
        };
        // Model keys are checked now so typos fail before any data is read.
        let m: usize = cfg.doc.get_or("m", 4).map_err(|e| err(&e))?;
        let d: usize = cfg.doc.get_or("d", 16.max(m + 1)).map_err(|e| err(&e))?;
        let f: usize = cfg.doc.get_or("f", 16).map_err(|e| err(&e))?;
        cfg.model_config(m, d, f)?;
        Ok(cfg)
    }

    /// Model config for data with `m` measured directions, `d` directions and
    /// `f` bins; `m`, `d`, `f` keys in the file must agree with the data.
    pub fn model_config(&self, m: usize, d: usize, f: usize) -> Result<ModelConfig, CliError> {
        let err = |e: &dyn std::fmt::Display| CliError::usage(format!("{}: {e}", self.origin));
        let base = ModelConfig::from_doc(&self.doc, Some((m, d, f, Variant::Conformer))).map_err(|e| err(&e))?;
        for (key, given, actual) in [("m", base.m, m), ("d", base.d, d), ("f", base.f, f)] {
            if given != actual {
                return Err(err(&format!(
                    "line {}: {key} = {given} does not match the data ({actual})",
                    self.doc.line_of(key)
                )));
            }
        }
        Ok(base)
    }

    /// The dataset path with relative paths resolved against the data root.
    pub fn resolve_data(&self) -> Result<DataSource, CliError> {
        let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
        match (&self.data, root) {
            (Some(DataSource::Path(p)), Some(root)) if p.is_relative() && !p.exists() => Ok(DataSource::Path(root.join(p))),
            (Some(source), _) => Ok(source.clone()),
            (None, Some(root)) => Ok(DataSource::Path(root)),
            (None, None) => Err(CliError::usage(format!(
                "no dataset: pass --dataset, set `dataset =` or `synth_*` keys, or set {DATA_DIR_ENV}"
            ))),
        }
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::usage("no output directory: pass --out or set `out =`"))
    }

    pub fn with_train(&self, train: TrainConfig) -> Self {
        Self { train, ..self.clone() }
    }

    /// Every setting in effect, in a form [`RunConfig::parse`] accepts.
    pub fn resolved_text(&self, model: Option<&ModelConfig>) -> String {
        let mut s = String::from("# resolved run configuration\n");
        match &self.data {
            Some(DataSource::Path(p)) => {
                let _ = writeln!(s, "dataset = {}", p.display());
            }
            Some(DataSource::Synthetic(spec)) => {
                let _ = writeln!(s, "synth_seed = {}", spec.seed);
                let _ = writeln!(s, "synth_subjects = {}", spec.n_subjects);
                let _ = writeln!(s, "synth_dirs = {}", spec.n_directions);
                let _ = writeln!(s, "synth_freqs = {}", spec.n_freqs);
                let _ = writeln!(s, "synth_sh_order = {}", spec.sh_order);
                let _ = writeln!(s, "synth_notches = {}", spec.notch_count);
            }
            None => {}
        }
        match &self.sparse {
            Some(SparseSource::FarthestPoint(m)) => {
                let _ = writeln!(s, "sparse_m = {m}");
            }
            Some(SparseSource::File(p)) => {
                let _ = writeln!(s, "sparse_file = {}", p.display());
            }
            None => {}
        }
        let _ = writeln!(s, "test_subjects = {}", self.test_subjects);
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {}", out.display());
        }
        let _ = writeln!(s, "threads = {}", self.threads);
        if let Some(model) = model {
            s.push_str(&model.to_text());
        }
        s.push_str(&self.train.to_text());
        s
    }
}
