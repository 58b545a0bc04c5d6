//! TOML run configuration shared by every command.
//!
//! ```toml
//! [data]
//! signal = "data/signal.csv"
//! markers = "data/markers.csv"
//! rate_hz = 128.0
//!
//! [output]
//! dir = "out"
//!
//! [synth]            # only needed by `simulate`
//! seed = 7
//! noise_sigma_uv = 2.0
//!
//! [pipeline]         # every key optional; defaults shown in the README
//! m = 2
//!
//! [pipeline.selection]
//! seed = 11
//!
//! [experiment]
//! models = ["FBCSP_FS", "BP_AllF"]
//! pairs = [[0, 2]]
//! windows = [2.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{ExperimentConfig, PipelineConfig, PipelineError};
use crate::recording::IngestConfig;
use crate::synth::{SynthConfig, SynthError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: [{section}] {message}")]
    Invalid {
        path: String,
        section: &'static str,
        message: String,
    },
}

fn default_rate() -> f64 {
    128.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub signal: PathBuf,
    pub markers: PathBuf,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub channels: Option<Vec<String>>,
}

impl DataSection {
    pub fn ingest(&self) -> IngestConfig {
        IngestConfig {
            rate_hz: self.rate_hz,
            channels: self.channels.clone(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            signal: PathBuf::from("data/signal.csv"),
            markers: PathBuf::from("data/markers.csv"),
            rate_hz: default_rate(),
            channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate(origin)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.signal, &mut self.data.markers, &mut self.output.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let invalid = |section: &'static str, message: String| ConfigError::Invalid {
            path: origin.to_string(),
            section,
            message,
        };
        if !(self.data.rate_hz > 0.0) {
            return Err(invalid("data", format!("rate_hz must be positive, got {}", self.data.rate_hz)));
        }
        self.pipeline
            .validate(self.data.rate_hz)
            .map_err(|e: PipelineError| invalid("pipeline", e.to_string()))?;
        self.experiment
            .validate()
            .map_err(|e| invalid("experiment", e.to_string()))?;
        if let Some(synth) = &self.synth {
            synth
                .validate()
                .map_err(|e: SynthError| invalid("synth", e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
