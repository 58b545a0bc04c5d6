//! Training and evaluation of the four workload models.
//!
//! | kind         | features                                   | selection |
//! |--------------|--------------------------------------------|-----------|
//! | `FBCSP_FS`   | per-band CSP log-variance (bands × 2m)     | MI + CV   |
//! | `FBCSP_AllF` | per-band CSP log-variance (bands × 2m)     | none      |
//! | `BP_AllF`    | per-channel log band power (channels × bands) | none   |
//! | `BP_FS`      | per-channel log band power (channels × bands) | MI + CV |
//!
//! Processing order is artifact rejection, band-pass filtering, feature
//! extraction, selection and naive Bayes fitting. Everything learned comes
//! from training epochs only; evaluation reuses the stored filters.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, GaussianNbModel};
use crate::csp::{
    average_covariance_with, log_variance_features, select_filters, selected_rows, solve_csp,
    spatial_filter, CovNormalization, CspError, CspTransform, RidgeConfig,
};
use crate::filterbank::{default_bands, BandSpec, FilterBank, FilterError, DEFAULT_FILTER_ORDER};
use crate::recording::{
    extract_epochs, reject_artifacts, split_by_session, window_samples, ArtifactPolicy, DataError,
    Epoch, HasSession, Label, Recording, SessionId,
};
use crate::selection::{
    select_top_n_cv, ColumnMeta, CvPoint, FeatureMatrix, SelectionConfig, SelectionError,
    SourceKind,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("CSP failed in band {band_index} ({band}): {source}")]
    Csp {
        band_index: usize,
        band: BandSpec,
        #[source]
        source: CspError,
    },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("class {0} has no training epochs after artifact rejection")]
    MissingClass(Label),
    #[error("no usable test epochs")]
    NoTestEpochs,
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("data does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FBCSP_FS")]
    FbcspFs,
    #[serde(rename = "FBCSP_AllF")]
    FbcspAllF,
    #[serde(rename = "BP_AllF")]
    BpAllF,
    #[serde(rename = "BP_FS")]
    BpFs,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::FbcspFs, Self::FbcspAllF, Self::BpAllF, Self::BpFs];

    pub fn uses_csp(self) -> bool {
        matches!(self, Self::FbcspFs | Self::FbcspAllF)
    }

    pub fn selects_features(self) -> bool {
        matches!(self, Self::FbcspFs | Self::BpFs)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FbcspFs => "FBCSP_FS",
            Self::FbcspAllF => "FBCSP_AllF",
            Self::BpAllF => "BP_AllF",
            Self::BpFs => "BP_FS",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model kind {s:?}"))
    }
}

/// Where band-pass filtering happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    /// Each cut epoch is filtered on its own.
    #[default]
    PerEpoch,
    /// The continuous recording is filtered, then epochs are cut.
    Continuous,
}

fn default_m() -> usize {
    2
}
fn default_order() -> usize {
    DEFAULT_FILTER_ORDER
}
fn default_true() -> bool {
    true
}

/// Every preprocessing and learning parameter; stored in each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_bands")]
    pub bands: Vec<BandSpec>,
    #[serde(default = "default_order")]
    pub filter_order: usize,
    #[serde(default)]
    pub filter_scope: FilterScope,
    /// CSP filters kept from each end of the eigenvalue spectrum.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub cov_normalization: CovNormalization,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub artifact: ArtifactPolicy,
    /// Band-power features as log power (otherwise raw mean power).
    #[serde(default = "default_true")]
    pub bp_log: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bands: default_bands(),
            filter_order: DEFAULT_FILTER_ORDER,
            filter_scope: FilterScope::PerEpoch,
            m: default_m(),
            cov_normalization: CovNormalization::Trace,
            ridge: RidgeConfig::default(),
            selection: SelectionConfig::default(),
            artifact: ArtifactPolicy::default(),
            bp_log: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, rate_hz: f64) -> Result<(), PipelineError> {
        if self.bands.is_empty() {
            return Err(PipelineError::Config("at least one band is required".into()));
        }
        for w in self.bands.windows(2) {
            if w[1].low_hz < w[0].low_hz {
                return Err(PipelineError::Config("bands must be ordered by low edge".into()));
            }
        }
        for b in &self.bands {
            b.validate(rate_hz)?;
        }
        if self.filter_order == 0 {
            return Err(PipelineError::Config("filter_order must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(PipelineError::Config("m must be at least 1".into()));
        }
        if self.selection.folds < 2 {
            return Err(PipelineError::Config("selection.folds must be at least 2".into()));
        }
        if self.selection.bins == 0 {
            return Err(PipelineError::Config("selection.bins must be at least 1".into()));
        }
        self.artifact.validate()?;
        Ok(())
    }

    pub fn filter_bank(&self, rate_hz: f64) -> Result<FilterBank, PipelineError> {
        Ok(FilterBank::new(&self.bands, self.filter_order, rate_hz)?)
    }
}

/// An epoch and its band-passed copies, one per bank band.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredEpoch {
    pub epoch: Epoch,
    pub bands: Vec<DMatrix<f64>>,
}

impl HasSession for FilteredEpoch {
    fn session(&self) -> SessionId {
        self.epoch.session
    }
}

pub fn filter_epochs(epochs: &[Epoch], bank: &FilterBank) -> Result<Vec<FilteredEpoch>, PipelineError> {
    epochs
        .par_iter()
        .map(|e| {
            Ok(FilteredEpoch {
                bands: bank.decompose_epoch(e)?,
                epoch: e.clone(),
            })
        })
        .collect()
}

/// Cuts epochs from a band-passed copy of the whole recording.
pub fn filter_continuous(
    rec: &Recording,
    bank: &FilterBank,
    window_seconds: f64,
) -> Result<(Vec<FilteredEpoch>, usize), PipelineError> {
    let broadband = extract_epochs(rec, window_seconds);
    let banded: Vec<Vec<Epoch>> = bank
        .decompose(rec.samples())?
        .into_iter()
        .map(|signal| extract_epochs(&rec.with_samples(signal), window_seconds).epochs)
        .collect();
    let filtered = broadband
        .epochs
        .into_iter()
        .enumerate()
        .map(|(i, epoch)| FilteredEpoch {
            bands: banded.iter().map(|b| b[i].data.clone()).collect(),
            epoch,
        })
        .collect();
    Ok((filtered, broadband.skipped))
}

fn reject_filtered(
    epochs: Vec<FilteredEpoch>,
    policy: &ArtifactPolicy,
) -> Result<(Vec<FilteredEpoch>, usize), PipelineError> {
    policy.validate()?;
    let before = epochs.len();
    let kept: Vec<FilteredEpoch> = epochs
        .into_iter()
        .filter(|e| !policy.is_artifact(&e.epoch))
        .collect();
    let rejected = before - kept.len();
    Ok((kept, rejected))
}

/// Log mean-square amplitude of every (band, channel), band-major.
/// Zero power is floored at `1e-12 ×` the band's mean channel power.
pub fn bandpower_vector(bands: &[DMatrix<f64>], log_power: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for band in bands {
        let powers: Vec<f64> = band
            .row_iter()
            .map(|r| r.norm_squared() / r.len() as f64)
            .collect();
        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
        let floor = (1e-12 * mean).max(f64::MIN_POSITIVE);
        out.extend(powers.into_iter().map(|p| {
            if log_power {
                p.max(floor).ln()
            } else {
                p
            }
        }));
    }
    out
}

/// Band-power features of one epoch (channels × bands values).
pub fn bandpower_features(epoch: &Epoch, bank: &FilterBank) -> Result<Vec<f64>, PipelineError> {
    Ok(bandpower_vector(&bank.decompose_epoch(epoch)?, true))
}

pub fn bandpower_columns(n_bands: usize, n_channels: usize) -> Vec<ColumnMeta> {
    (0..n_bands)
        .flat_map(|b| {
            (0..n_channels).map(move |c| ColumnMeta {
                band_index: b,
                source_index: c,
                source_kind: SourceKind::Channel,
            })
        })
        .collect()
}

/// CSP solution for one band of the bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCsp {
    pub band_index: usize,
    pub band: BandSpec,
    pub transform: CspTransform,
}

impl BandCsp {
    pub fn features(&self, band_signal: &DMatrix<f64>) -> Result<Vec<f64>, CspError> {
        let z = spatial_filter(band_signal, &select_filters(&self.transform))?;
        Ok(log_variance_features(&z, self.band_index)?.values.iter().copied().collect())
    }

    pub fn columns(&self) -> Vec<ColumnMeta> {
        selected_rows(&self.transform)
            .into_iter()
            .map(|row| ColumnMeta {
                band_index: self.band_index,
                source_index: row,
                source_kind: SourceKind::CspFilter,
            })
            .collect()
    }
}

/// Fits one CSP per band, with `pair[0]` as the first class.
pub fn fit_fbcsp(
    trials: &[FilteredEpoch],
    pair: [Label; 2],
    bands: &[BandSpec],
    config: &PipelineConfig,
) -> Result<Vec<BandCsp>, PipelineError> {
    bands
        .par_iter()
        .enumerate()
        .map(|(b, &band)| {
            let wrap = |source| PipelineError::Csp {
                band_index: b,
                band,
                source,
            };
            let class_trials = |label: Label| -> Vec<DMatrix<f64>> {
                trials
                    .iter()
                    .filter(|t| t.epoch.label == label)
                    .map(|t| t.bands[b].clone())
                    .collect()
            };
            let c1 = average_covariance_with(&class_trials(pair[0]), pair[0], config.cov_normalization)
                .map_err(wrap)?;
            let c2 = average_covariance_with(&class_trials(pair[1]), pair[1], config.cov_normalization)
                .map_err(wrap)?;
            let transform = solve_csp(&c1, &c2, config.m, &config.ridge).map_err(wrap)?;
            Ok(BandCsp {
                band_index: b,
                band,
                transform,
            })
        })
        .collect()
}

fn fbcsp_vector(trial: &FilteredEpoch, csps: &[BandCsp]) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::new();
    for csp in csps {
        let values = csp.features(&trial.bands[csp.band_index]).map_err(|source| PipelineError::Csp {
            band_index: csp.band_index,
            band: csp.band,
            source,
        })?;
        out.extend(values);
    }
    Ok(out)
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let f = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), f, |i, j| rows[i][j])
}

/// Counts of the training data behind a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Epochs of the pair that survived rejection and were used.
    pub n_train: usize,
    pub n_rejected: usize,
    /// Epochs with labels outside the class pair.
    pub n_dropped: usize,
}

/// A self-contained trained model, serialized as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub class_pair: [Label; 2],
    pub window_seconds: f64,
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    pub config: PipelineConfig,
    /// Empty for band-power kinds.
    pub csp: Vec<BandCsp>,
    /// Provenance of every column of the full feature space.
    pub columns: Vec<ColumnMeta>,
    /// Columns fed to the classifier, in rank order for selecting kinds.
    pub selected: Vec<usize>,
    pub cv_curve: Option<Vec<CvPoint>>,
    pub classifier: GaussianNbModel,
    pub training: TrainingSummary,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| PipelineError::Config(format!("malformed model file: {e}")))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(PipelineError::Config(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn num_features(&self) -> usize {
        self.columns.len()
    }

    fn feature_vector(&self, trial: &FilteredEpoch) -> Result<Vec<f64>, PipelineError> {
        let full = if self.kind.uses_csp() {
            fbcsp_vector(trial, &self.csp)?
        } else {
            bandpower_vector(&trial.bands, self.config.bp_log)
        };
        Ok(self.selected.iter().map(|&j| full[j]).collect())
    }
}

fn keep_pair<T, F: Fn(&T) -> Label>(items: Vec<T>, pair: [Label; 2], label: F) -> (Vec<T>, usize) {
    let before = items.len();
    let kept: Vec<T> = items
        .into_iter()
        .filter(|t| pair.contains(&label(t)))
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

fn check_pair(pair: [Label; 2]) -> Result<(), PipelineError> {
    if pair[0] == pair[1] {
        return Err(PipelineError::Config(format!(
            "class pair needs two distinct labels, got {pair:?}"
        )));
    }
    Ok(())
}

/// Trains from already filtered, artifact-free epochs.
pub fn train_filtered(
    trials: &[FilteredEpoch],
    kind: ModelKind,
    pair: [Label; 2],
    config: &PipelineConfig,
    channel_names: &[String],
    rejected: usize,
) -> Result<TrainedModel, PipelineError> {
    check_pair(pair)?;
    let (trials, dropped) = keep_pair(trials.to_vec(), pair, |t| t.epoch.label);
    for label in pair {
        if !trials.iter().any(|t| t.epoch.label == label) {
            return Err(PipelineError::MissingClass(label));
        }
    }
    let first = &trials[0].epoch;
    let rate_hz = first.rate_hz;
    let n_samples = first.num_samples();
    let n_channels = first.num_channels();
    if channel_names.len() != n_channels {
        return Err(PipelineError::Mismatch(format!(
            "{} channel names for {n_channels}-channel epochs",
            channel_names.len()
        )));
    }
    if trials.iter().any(|t| t.epoch.num_samples() != n_samples || t.bands.len() != config.bands.len()) {
        return Err(PipelineError::Mismatch("epochs differ in length or band count".into()));
    }
    if kind.uses_csp() && 2 * config.m > n_channels {
        return Err(PipelineError::Config(format!(
            "m = {} needs at least {} channels, have {n_channels}",
            config.m,
            2 * config.m
        )));
    }

    let (csp, columns, rows) = if kind.uses_csp() {
        let csp = fit_fbcsp(&trials, pair, &config.bands, config)?;
        let columns: Vec<ColumnMeta> = csp.iter().flat_map(BandCsp::columns).collect();
        let rows = trials
            .iter()
            .map(|t| fbcsp_vector(t, &csp))
            .collect::<Result<Vec<_>, _>>()?;
        (csp, columns, rows)
    } else {
        let rows: Vec<Vec<f64>> = trials
            .iter()
            .map(|t| bandpower_vector(&t.bands, config.bp_log))
            .collect();
        (Vec::new(), bandpower_columns(config.bands.len(), n_channels), rows)
    };

    let fm = FeatureMatrix {
        values: rows_to_matrix(&rows),
        labels: trials.iter().map(|t| t.epoch.label).collect(),
        columns: columns.clone(),
    };

    let (selected, cv_curve) = if kind.selects_features() {
        let selection = select_top_n_cv(&fm, &config.selection)?;
        (selection.selected, Some(selection.cv_curve))
    } else {
        ((0..fm.num_features()).collect(), None)
    };

    let x = DMatrix::from_fn(fm.num_trials(), selected.len(), |i, j| fm.values[(i, selected[j])]);
    let classifier = GaussianNbModel::fit(&x, &fm.labels)?;

    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        kind,
        class_pair: pair,
        window_seconds: n_samples as f64 / rate_hz,
        rate_hz,
        channel_names: channel_names.to_vec(),
        config: config.clone(),
        csp,
        columns,
        selected,
        cv_curve,
        classifier,
        training: TrainingSummary {
            n_train: trials.len(),
            n_rejected: rejected,
            n_dropped: dropped,
        },
    })
}

/// Rejects artifacts, filters each epoch and trains.
pub fn train(
    epochs: &[Epoch],
    kind: ModelKind,
    pair: [Label; 2],
    config: &PipelineConfig,
    channel_names: &[String],
) -> Result<TrainedModel, PipelineError> {
    if config.filter_scope == FilterScope::Continuous {
        return Err(PipelineError::Config(
            "continuous filtering needs the whole recording; use train_from_recording".into(),
        ));
    }
    let rate_hz = epochs.first().map(|e| e.rate_hz).ok_or(PipelineError::MissingClass(pair[0]))?;
    config.validate(rate_hz)?;
    let (kept, rejected) = reject_artifacts(epochs, &config.artifact)?;
    let bank = config.filter_bank(rate_hz)?;
    let filtered = filter_epochs(&kept, &bank)?;
    train_filtered(&filtered, kind, pair, config, channel_names, rejected)
}

/// Accuracy and confusion counts of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub class_pair: [Label; 2],
    pub window_seconds: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, indexed by position in `class_pair`.
    pub confusion: [[usize; 2]; 2],
    pub n_train: usize,
    pub n_test: usize,
    /// Test epochs removed by the artifact policy.
    pub n_rejected: usize,
    /// Test epochs with labels outside the class pair.
    pub n_dropped: usize,
    /// Set when the model was scored on its own training data.
    pub in_sample: bool,
    pub cv_curve: Option<Vec<CvPoint>>,
}

/// Scores filtered, artifact-free epochs.
pub fn evaluate_filtered(
    model: &TrainedModel,
    trials: &[FilteredEpoch],
    rejected: usize,
) -> Result<EvalReport, PipelineError> {
    let (trials, dropped) = keep_pair(trials.to_vec(), model.class_pair, |t| t.epoch.label);
    if trials.is_empty() {
        return Err(PipelineError::NoTestEpochs);
    }
    let expected_samples = window_samples(model.window_seconds, model.rate_hz);
    for t in &trials {
        if t.epoch.num_channels() != model.channel_names.len() {
            return Err(PipelineError::Mismatch(format!(
                "test epoch has {} channels, model expects {}",
                t.epoch.num_channels(),
                model.channel_names.len()
            )));
        }
        if t.epoch.num_samples() != expected_samples {
            return Err(PipelineError::Mismatch(format!(
                "test epoch has {} samples, model window is {} s ({expected_samples} samples)",
                t.epoch.num_samples(),
                model.window_seconds
            )));
        }
    }

    let mut confusion = [[0usize; 2]; 2];
    for t in &trials {
        let x = model.feature_vector(t)?;
        let predicted = model.classifier.predict(&x)?;
        let row = (t.epoch.label == model.class_pair[1]) as usize;
        let col = (predicted == model.class_pair[1]) as usize;
        confusion[row][col] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok(EvalReport {
        kind: model.kind,
        class_pair: model.class_pair,
        window_seconds: model.window_seconds,
        accuracy: correct as f64 / trials.len() as f64,
        confusion,
        n_train: model.training.n_train,
        n_test: trials.len(),
        n_rejected: rejected,
        n_dropped: dropped,
        in_sample: false,
        cv_curve: model.cv_curve.clone(),
    })
}

/// Applies the model's stored preprocessing to raw epochs and scores them.
pub fn evaluate(model: &TrainedModel, test_epochs: &[Epoch]) -> Result<EvalReport, PipelineError> {
    if model.config.filter_scope == FilterScope::Continuous {
        return Err(PipelineError::Config(
            "model filters continuously; use evaluate_recording".into(),
        ));
    }
    let (kept, rejected) = reject_artifacts(test_epochs, &model.config.artifact)?;
    let bank = model.config.filter_bank(model.rate_hz)?;
    if let Some(e) = kept.iter().find(|e| (e.rate_hz - model.rate_hz).abs() > 1e-9 * model.rate_hz) {
        return Err(PipelineError::Mismatch(format!(
            "test data sampled at {} Hz, model trained at {} Hz",
            e.rate_hz, model.rate_hz
        )));
    }
    let filtered = filter_epochs(&kept, &bank)?;
    evaluate_filtered(model, &filtered, rejected)
}

/// [`evaluate`] on the model's own training epochs, flagged in-sample.
pub fn evaluate_in_sample(model: &TrainedModel, train_epochs: &[Epoch]) -> Result<EvalReport, PipelineError> {
    let mut report = evaluate(model, train_epochs)?;
    report.in_sample = true;
    Ok(report)
}

/// Which sessions train and which test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSplit {
    pub train: BTreeSet<SessionId>,
    pub test: BTreeSet<SessionId>,
}

impl Default for SessionSplit {
    fn default() -> Self {
        Self {
            train: [1, 2, 3].into(),
            test: [4].into(),
        }
    }
}

/// Filtered, artifact-screened train and test epochs for one window length.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub window_seconds: f64,
    pub train: Vec<FilteredEpoch>,
    pub test: Vec<FilteredEpoch>,
    pub train_rejected: usize,
    pub test_rejected: usize,
    /// Markers whose window overflowed the recording.
    pub skipped: usize,
}

pub fn prepare_window(
    rec: &Recording,
    window_seconds: f64,
    config: &PipelineConfig,
    split: &SessionSplit,
) -> Result<PreparedWindow, PipelineError> {
    if !(window_seconds > 0.0) {
        return Err(PipelineError::Config(format!("window must be positive, got {window_seconds}")));
    }
    config.validate(rec.rate_hz())?;
    let bank = config.filter_bank(rec.rate_hz())?;
    let (all, skipped) = match config.filter_scope {
        FilterScope::PerEpoch => {
            let set = extract_epochs(rec, window_seconds);
            let (train, test) = split_by_session(&set.epochs, &split.train, &split.test)?;
            let (train, train_rejected) = reject_artifacts(&train, &config.artifact)?;
            let (test, test_rejected) = reject_artifacts(&test, &config.artifact)?;
            return Ok(PreparedWindow {
                window_seconds,
                train: filter_epochs(&train, &bank)?,
                test: filter_epochs(&test, &bank)?,
                train_rejected,
                test_rejected,
                skipped: set.skipped,
            });
        }
        FilterScope::Continuous => filter_continuous(rec, &bank, window_seconds)?,
    };
    let (train, test) = split_by_session(&all, &split.train, &split.test)?;
    let (train, train_rejected) = reject_filtered(train, &config.artifact)?;
    let (test, test_rejected) = reject_filtered(test, &config.artifact)?;
    Ok(PreparedWindow {
        window_seconds,
        train,
        test,
        train_rejected,
        test_rejected,
        skipped,
    })
}

/// Test-session epochs of a recording, prepared the way `model` expects.
pub fn evaluate_recording(
    model: &TrainedModel,
    rec: &Recording,
    test_sessions: &BTreeSet<SessionId>,
) -> Result<EvalReport, PipelineError> {
    if (rec.rate_hz() - model.rate_hz).abs() > 1e-9 * model.rate_hz {
        return Err(PipelineError::Mismatch(format!(
            "recording sampled at {} Hz, model trained at {} Hz",
            rec.rate_hz(),
            model.rate_hz
        )));
    }
    if rec.channel_names() != model.channel_names.as_slice() {
        return Err(PipelineError::Mismatch(format!(
            "recording channels {:?} differ from model channels {:?}",
            rec.channel_names(),
            model.channel_names
        )));
    }
    let bank = model.config.filter_bank(model.rate_hz)?;
    let all = match model.config.filter_scope {
        FilterScope::PerEpoch => {
            let epochs: Vec<Epoch> = extract_epochs(rec, model.window_seconds)
                .epochs
                .into_iter()
                .filter(|e| test_sessions.contains(&e.session))
                .collect();
            let (kept, rejected) = reject_artifacts(&epochs, &model.config.artifact)?;
            return evaluate_filtered(model, &filter_epochs(&kept, &bank)?, rejected);
        }
        FilterScope::Continuous => filter_continuous(rec, &bank, model.window_seconds)?.0,
    };
    let test: Vec<FilteredEpoch> = all
        .into_iter()
        .filter(|e| test_sessions.contains(&e.epoch.session))
        .collect();
    let (test, rejected) = reject_filtered(test, &model.config.artifact)?;
    evaluate_filtered(model, &test, rejected)
}

/// Trains on the split's train sessions of a recording.
pub fn train_from_recording(
    rec: &Recording,
    kind: ModelKind,
    pair: [Label; 2],
    window_seconds: f64,
    config: &PipelineConfig,
    split: &SessionSplit,
) -> Result<TrainedModel, PipelineError> {
    let prepared = prepare_window(rec, window_seconds, config, split)?;
    train_filtered(
        &prepared.train,
        kind,
        pair,
        config,
        rec.channel_names(),
        prepared.train_rejected,
    )
}

/// The sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_pairs")]
    pub pairs: Vec<[Label; 2]>,
    #[serde(default = "default_windows")]
    pub windows: Vec<f64>,
    #[serde(default)]
    pub sessions: SessionSplit,
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn default_pairs() -> Vec<[Label; 2]> {
    vec![[0, 1], [0, 2], [1, 2]]
}
fn default_windows() -> Vec<f64> {
    vec![2.0, 4.0, 6.0]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: default_models(),
            pairs: default_pairs(),
            windows: default_windows(),
            sessions: SessionSplit::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.models.is_empty() || self.pairs.is_empty() || self.windows.is_empty() {
            return Err(PipelineError::Config("models, pairs and windows must be non-empty".into()));
        }
        for &pair in &self.pairs {
            check_pair(pair)?;
        }
        if let Some(w) = self.windows.iter().find(|w| !(**w > 0.0)) {
            return Err(PipelineError::Config(format!("window must be positive, got {w}")));
        }
        if let Some(s) = self.sessions.train.intersection(&self.sessions.test).next() {
            return Err(PipelineError::Config(format!(
                "session {s} is in both the train and test sets"
            )));
        }
        if self.sessions.train.is_empty() || self.sessions.test.is_empty() {
            return Err(PipelineError::Config("train and test sessions must be non-empty".into()));
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.models.len() * self.pairs.len() * self.windows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub kind: ModelKind,
    pub pair: [Label; 2],
    pub window_seconds: f64,
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}v{} {}s",
            self.kind, self.pair[0], self.pair[1], self.window_seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { report: EvalReport },
    Failed { error: String },
}

/// One sweep cell: the trained model (when training succeeded) and its report.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: CellId,
    pub model: Option<TrainedModel>,
    pub outcome: CellOutcome,
    pub n_train_rejected: usize,
}

impl CellResult {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            CellOutcome::Ok { report } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self.outcome, CellOutcome::Ok { .. })
    }
}

fn run_cell(
    prepared: &PreparedWindow,
    cell: CellId,
    config: &PipelineConfig,
    channel_names: &[String],
) -> CellResult {
    let model = train_filtered(
        &prepared.train,
        cell.kind,
        cell.pair,
        config,
        channel_names,
        prepared.train_rejected,
    );
    let (model, outcome) = match model {
        Ok(model) => {
            let outcome = match evaluate_filtered(&model, &prepared.test, prepared.test_rejected) {
                Ok(report) => CellOutcome::Ok { report },
                Err(e) => CellOutcome::Failed { error: e.to_string() },
            };
            (Some(model), outcome)
        }
        Err(e) => (None, CellOutcome::Failed { error: e.to_string() }),
    };
    CellResult {
        cell,
        model,
        outcome,
        n_train_rejected: prepared.train_rejected,
    }
}

/// Trains and evaluates every (window, pair, model) cell. Failing cells are
/// reported, not propagated. Results come back in window, pair, model order.
pub fn run_experiment(
    rec: &Recording,
    config: &PipelineConfig,
    experiment: &ExperimentConfig,
) -> Result<Vec<CellResult>, PipelineError> {
    experiment.validate()?;
    config.validate(rec.rate_hz())?;
    let mut results = Vec::with_capacity(experiment.num_cells());
    for &window in &experiment.windows {
        let cells: Vec<CellId> = experiment
            .pairs
            .iter()
            .flat_map(|&pair| {
                experiment.models.iter().map(move |&kind| CellId {
                    kind,
                    pair,
                    window_seconds: window,
                })
            })
            .collect();
        match prepare_window(rec, window, config, &experiment.sessions) {
            Ok(prepared) => results.extend(
                cells
                    .par_iter()
                    .map(|&cell| run_cell(&prepared, cell, config, rec.channel_names()))
                    .collect::<Vec<_>>(),
            ),
            Err(e) => results.extend(cells.into_iter().map(|cell| CellResult {
                cell,
                model: None,
                outcome: CellOutcome::Failed { error: e.to_string() },
                n_train_rejected: 0,
            })),
        }
    }
    Ok(results)
}

pub const SUMMARY_HEADER: &str = "model,pair,window,accuracy,n_train,n_test,n_rejected,status";

/// One CSV row per cell under [`SUMMARY_HEADER`].
pub fn summary_csv(results: &[CellResult]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in results {
        let pair = format!("{}v{}", r.cell.pair[0], r.cell.pair[1]);
        match &r.outcome {
            CellOutcome::Ok { report } => out.push_str(&format!(
                "{},{},{},{},{},{},{},ok\n",
                r.cell.kind,
                pair,
                r.cell.window_seconds,
                report.accuracy,
                report.n_train,
                report.n_test,
                r.n_train_rejected + report.n_rejected
            )),
            CellOutcome::Failed { .. } => out.push_str(&format!(
                "{},{},{},,,,{},failed\n",
                r.cell.kind, pair, r.cell.window_seconds, r.n_train_rejected
            )),
        }
    }
    out
}
