//! Mental-workload classification from multichannel EEG with filter-bank
//! common spatial patterns (FBCSP), mutual-information feature selection
//! and Gaussian naive Bayes.
//!
//! ```text
//! Recording ──extract_epochs──▶ Epochs ──reject_artifacts──▶ FilterBank (9 × 4 Hz)
//!    ──▶ CSP per band ──▶ log-variance features ──▶ MI ranking + k-fold CV
//!    ──▶ Gaussian naive Bayes
//! ```
//!
//! Band-power baselines share the same filter bank and classifier. The
//! [`synth`] module generates recordings with planted, known class effects.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod config;
pub mod csp;
pub mod filterbank;
pub mod pipeline;
pub mod recording;
pub mod selection;
pub mod synth;

pub use classifier::GaussianNbModel;
pub use config::RunConfig;
pub use csp::{CspTransform, RidgeConfig};
pub use filterbank::{default_bands, BandSpec, FilterBank};
pub use pipeline::{
    evaluate, run_experiment, train, EvalReport, ExperimentConfig, ModelKind, PipelineConfig,
    TrainedModel,
};
pub use recording::{ArtifactPolicy, Epoch, Label, Recording};
pub use selection::{FeatureMatrix, Ranking};
pub use synth::SynthConfig;
