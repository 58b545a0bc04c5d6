//! Recordings, epochs, artifact rejection and session splits.
//!
//! A [`Recording`] is a continuous multichannel signal in microvolts with
//! stimulus-onset markers. Epochs are cut from marker onsets, screened with
//! an [`ArtifactPolicy`] and partitioned into train/test sets by session.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class identifier (0-back, 1-back, 2-back are 0, 1, 2).
pub type Label = u32;

/// Session identifier.
pub type SessionId = u32;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("marker at sample {onset} lies beyond the signal length {len}")]
    MarkerOutOfBounds { onset: usize, len: usize },
    #[error("invalid recording: {0}")]
    Invalid(String),
    #[error("invalid artifact policy: {0}")]
    Policy(String),
    #[error("invalid session split: {0}")]
    Split(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A stimulus onset with its class label and session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub onset_sample: usize,
    pub label: Label,
    pub session: SessionId,
}

/// Continuous multichannel signal, channels × samples, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: DMatrix<f64>,
    rate_hz: f64,
    channel_names: Vec<String>,
    markers: Vec<Marker>,
}

impl Recording {
    pub fn new(
        samples: DMatrix<f64>,
        rate_hz: f64,
        channel_names: Vec<String>,
        markers: Vec<Marker>,
    ) -> Result<Self, DataError> {
        if samples.nrows() < 2 {
            return Err(DataError::Invalid(format!(
                "at least 2 channels required, got {}",
                samples.nrows()
            )));
        }
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(DataError::Invalid(format!(
                "sampling rate must be positive, got {rate_hz}"
            )));
        }
        if channel_names.len() != samples.nrows() {
            return Err(DataError::Invalid(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                samples.nrows()
            )));
        }
        let mut seen = HashSet::new();
        for name in &channel_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::Invalid(format!("duplicate channel name {name:?}")));
            }
        }
        let len = samples.ncols();
        if let Some(m) = markers.iter().find(|m| m.onset_sample >= len) {
            return Err(DataError::MarkerOutOfBounds {
                onset: m.onset_sample,
                len,
            });
        }
        Ok(Self {
            samples,
            rate_hz,
            channel_names,
            markers,
        })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// Same markers and metadata with a different signal of identical shape.
    pub fn with_samples(&self, samples: DMatrix<f64>) -> Self {
        assert_eq!(samples.shape(), self.samples.shape());
        Self {
            samples,
            ..self.clone()
        }
    }
}

/// One fixed-length trial segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub data: DMatrix<f64>,
    pub label: Label,
    pub session: SessionId,
    pub onset_sample: usize,
    pub rate_hz: f64,
}

impl Epoch {
    pub fn num_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.data.ncols()
    }
}

/// Amplitude and voltage-step rejection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactPolicy {
    pub amplitude_limit_uv: f64,
    pub step_limit_uv: f64,
    pub step_window_ms: f64,
    /// Subtract each channel's epoch mean before testing.
    pub demean_before_reject: bool,
}

impl Default for ArtifactPolicy {
    fn default() -> Self {
        Self {
            amplitude_limit_uv: 75.0,
            step_limit_uv: 150.0,
            step_window_ms: 200.0,
            demean_before_reject: false,
        }
    }
}

impl ArtifactPolicy {
    pub fn validate(&self) -> Result<(), DataError> {
        for (name, v) in [
            ("amplitude_limit_uv", self.amplitude_limit_uv),
            ("step_limit_uv", self.step_limit_uv),
            ("step_window_ms", self.step_window_ms),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DataError::Policy(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Sliding-window length of the step rule, in samples (at least 1).
    pub fn step_window_samples(&self, rate_hz: f64) -> usize {
        ((self.step_window_ms / 1000.0 * rate_hz).round() as usize).max(1)
    }

    /// Whether `epoch` violates either rule.
    pub fn is_artifact(&self, epoch: &Epoch) -> bool {
        let window = self.step_window_samples(epoch.rate_hz);
        epoch.data.row_iter().any(|row| {
            let offset = if self.demean_before_reject {
                row.mean()
            } else {
                0.0
            };
            let values: Vec<f64> = row.iter().map(|v| v - offset).collect();
            values.iter().any(|v| v.abs() > self.amplitude_limit_uv)
                || max_peak_to_peak(&values, window) > self.step_limit_uv
        })
    }
}

/// Largest max − min over all length-`window` runs (whole signal if shorter).
fn max_peak_to_peak(values: &[f64], window: usize) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let w = window.min(values.len());
    values
        .windows(w)
        .map(|run| {
            let (lo, hi) = run
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// Epochs cut from a recording plus the number of markers skipped because
/// the window ran past the end of the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
    pub skipped: usize,
}

pub fn window_samples(window_seconds: f64, rate_hz: f64) -> usize {
    (window_seconds * rate_hz).round() as usize
}

/// Cuts `[onset, onset + window)` for every marker. Windows may overlap the
/// following stimulus.
pub fn extract_epochs(rec: &Recording, window_seconds: f64) -> EpochSet {
    let len = window_samples(window_seconds, rec.rate_hz);
    let total = rec.num_samples();
    let mut epochs = Vec::with_capacity(rec.markers.len());
    let mut skipped = 0;
    for marker in &rec.markers {
        if len == 0 || marker.onset_sample + len > total {
            skipped += 1;
            continue;
        }
        epochs.push(Epoch {
            data: rec.samples.columns(marker.onset_sample, len).into_owned(),
            label: marker.label,
            session: marker.session,
            onset_sample: marker.onset_sample,
            rate_hz: rec.rate_hz,
        });
    }
    if skipped > 0 {
        log::warn!("{skipped} epoch(s) of {window_seconds} s overflow the recording and were skipped");
    }
    EpochSet { epochs, skipped }
}

/// Splits `epochs` into kept (in input order) and the rejected count.
pub fn reject_artifacts(
    epochs: &[Epoch],
    policy: &ArtifactPolicy,
) -> Result<(Vec<Epoch>, usize), DataError> {
    policy.validate()?;
    let kept: Vec<Epoch> = epochs
        .iter()
        .filter(|e| !policy.is_artifact(e))
        .cloned()
        .collect();
    let rejected = epochs.len() - kept.len();
    Ok((kept, rejected))
}

/// Partitions epochs by session. Epochs in neither set are dropped.
pub fn split_by_session<T: HasSession + Clone>(
    epochs: &[T],
    train_sessions: &BTreeSet<SessionId>,
    test_sessions: &BTreeSet<SessionId>,
) -> Result<(Vec<T>, Vec<T>), DataError> {
    if let Some(s) = train_sessions.intersection(test_sessions).next() {
        return Err(DataError::Split(format!(
            "session {s} is in both the train and test sets"
        )));
    }
    let pick = |set: &BTreeSet<SessionId>| -> Vec<T> {
        epochs
            .iter()
            .filter(|e| set.contains(&e.session()))
            .cloned()
            .collect()
    };
    let (train, test) = (pick(train_sessions), pick(test_sessions));
    if train.is_empty() {
        return Err(DataError::Split(format!(
            "no epochs in train sessions {train_sessions:?}"
        )));
    }
    if test.is_empty() {
        return Err(DataError::Split(format!(
            "no epochs in test sessions {test_sessions:?}"
        )));
    }
    Ok((train, test))
}

pub trait HasSession {
    fn session(&self) -> SessionId;
}

impl HasSession for Epoch {
    fn session(&self) -> SessionId {
        self.session
    }
}

/// How to interpret a signal/marker CSV pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub rate_hz: f64,
    /// Expected header, in order. `None` accepts whatever the file declares.
    pub channels: Option<Vec<String>>,
}

impl IngestConfig {
    pub fn new(rate_hz: f64) -> Self {
        Self {
            rate_hz,
            channels: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_line(err: &csv::Error) -> usize {
    err.position().map(|p| p.line() as usize).unwrap_or(0)
}

/// Reads the signal CSV and its marker CSV.
pub fn load_recording(
    signal_path: &Path,
    markers_path: &Path,
    schema: &IngestConfig,
) -> Result<Recording, DataError> {
    let signal = File::open(signal_path).map_err(io_err(signal_path))?;
    let markers = File::open(markers_path).map_err(io_err(markers_path))?;
    read_recording(
        BufReader::new(signal),
        &signal_path.display().to_string(),
        BufReader::new(markers),
        &markers_path.display().to_string(),
        schema,
    )
}

/// Reader-based form of [`load_recording`]; the names label error messages.
pub fn read_recording<S: Read, M: Read>(
    signal: S,
    signal_name: &str,
    markers: M,
    markers_name: &str,
    schema: &IngestConfig,
) -> Result<Recording, DataError> {
    let parse_err = |name: &str, line: usize, message: String| DataError::Parse {
        path: name.to_string(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(signal);
    let channel_names: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(signal_name, csv_line(&e).max(1), e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if let Some(expected) = &schema.channels {
        if *expected != channel_names {
            return Err(parse_err(
                signal_name,
                1,
                format!("header {channel_names:?} does not match declared channels {expected:?}"),
            ));
        }
    }
    let n_channels = channel_names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut n_samples = 0;
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(signal_name, csv_line(&e), e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != n_channels {
            return Err(parse_err(
                signal_name,
                line,
                format!("expected {n_channels} columns, found {}", record.len()),
            ));
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(
                    signal_name,
                    line,
                    format!("non-numeric value {cell:?} in column {:?}", channel_names[col]),
                )
            })?;
            values.push(v);
        }
        n_samples += 1;
    }
    // values are sample-major; rows of the matrix are channels.
    let samples = DMatrix::from_vec(n_channels, n_samples, values);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(markers);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(markers_name, csv_line(&e).max(1), e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != ["onset_sample", "label", "session"] {
        return Err(parse_err(
            markers_name,
            1,
            format!("expected header onset_sample,label,session, found {header:?}"),
        ));
    }
    let mut marker_list = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(markers_name, csv_line(&e), e.to_string()))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| -> Result<u64, DataError> {
            let cell = record.get(i).unwrap_or("").trim();
            cell.parse().map_err(|_| {
                parse_err(
                    markers_name,
                    line,
                    format!("invalid integer {cell:?} in column {}", header[i]),
                )
            })
        };
        let onset = field(0)? as usize;
        if onset >= n_samples {
            return Err(DataError::MarkerOutOfBounds {
                onset,
                len: n_samples,
            });
        }
        marker_list.push(Marker {
            onset_sample: onset,
            label: field(1)? as Label,
            session: field(2)? as SessionId,
        });
    }

    Recording::new(samples, schema.rate_hz, channel_names, marker_list)
}

/// Writes the signal and marker CSVs that [`load_recording`] reads.
pub fn save_recording(
    rec: &Recording,
    signal_path: &Path,
    markers_path: &Path,
) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(signal_path).map_err(io_err(signal_path))?);
    write_signal_csv(rec, &mut out).map_err(io_err(signal_path))?;
    out.flush().map_err(io_err(signal_path))?;
    let mut out = BufWriter::new(File::create(markers_path).map_err(io_err(markers_path))?);
    write_markers_csv(rec, &mut out).map_err(io_err(markers_path))?;
    out.flush().map_err(io_err(markers_path))
}

pub fn write_signal_csv<W: Write>(rec: &Recording, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", rec.channel_names.join(","))?;
    let mut line = String::new();
    for column in rec.samples.column_iter() {
        line.clear();
        for (i, v) in column.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            // Display for f64 is the shortest representation that round-trips.
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_markers_csv<W: Write>(rec: &Recording, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "onset_sample,label,session")?;
    for m in &rec.markers {
        writeln!(out, "{},{},{}", m.onset_sample, m.label, m.session)?;
    }
    Ok(())
}
