//! Sparse-to-dense HRTF log-magnitude upsampling.
//!
//! The crate bundles the classical interpolation baselines, a small
//! reverse-mode differentiation engine with the layers needed by the
//! frequency-domain networks, the networks themselves, training with the
//! LSD and spectral-gradient objectives, and the evaluation metrics.

pub mod baselines;
pub mod dataio;
pub mod format;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sphere;
pub mod training;
pub mod types;

pub use types::{Direction, FrequencyGrid, HrtfSet, SparseConfig};
