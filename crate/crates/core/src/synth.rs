//! Seeded synthetic EEG with planted class effects.
//!
//! Each channel is a linear mixture of band-limited sources plus white
//! sensor noise: `x_c(t) = Σ_s mixing_s[c] · a_s(t) + noise_c(t)`. A source
//! is white noise restricted to its band in the frequency domain and scaled
//! to unit variance; during a trial its amplitude is `sqrt(power)` for the
//! trial's class. Trials of one class form a contiguous block at a fixed
//! spacing, and every session runs one block per class.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filterbank::BandSpec;
use crate::recording::{Label, Marker, Recording, SessionId};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

/// Electrode labels used when a config does not name its channels.
pub const EMOTIV_CHANNELS: [&str; 12] = [
    "F3", "F4", "F7", "F8", "FC5", "FC6", "T7", "T8", "P7", "P8", "O1", "O2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub band: BandSpec,
    /// Spatial topography, one weight per channel.
    pub mixing: Vec<f64>,
    /// Source variance for each class, aligned with `SynthConfig::classes`.
    pub power_by_class: Vec<f64>,
}

impl SourceSpec {
    pub fn is_informative(&self) -> bool {
        self.power_by_class
            .windows(2)
            .any(|w| w[0] != w[1])
    }
}

fn default_n_channels() -> usize {
    12
}
fn default_rate() -> f64 {
    128.0
}
fn default_classes() -> Vec<Label> {
    vec![0, 1, 2]
}
fn default_trials() -> usize {
    40
}
fn default_sessions() -> usize {
    4
}
fn default_trial_seconds() -> f64 {
    2.0
}
fn default_tail_seconds() -> f64 {
    6.0
}
fn default_spike_amplitude() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_n_channels")]
    pub n_channels: usize,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub channel_names: Option<Vec<String>>,
    #[serde(default = "default_classes")]
    pub classes: Vec<Label>,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    pub noise_sigma_uv: f64,
    #[serde(default = "default_trials")]
    pub trials_per_class_per_session: usize,
    #[serde(default = "default_sessions")]
    pub n_sessions: usize,
    /// Onset-to-onset spacing of trials.
    #[serde(default = "default_trial_seconds")]
    pub trial_seconds: f64,
    /// Signal appended after the last trial so long windows still fit.
    #[serde(default = "default_tail_seconds")]
    pub tail_seconds: f64,
    /// Chance that a trial receives one large spike.
    #[serde(default)]
    pub spike_probability: f64,
    #[serde(default = "default_spike_amplitude")]
    pub spike_amplitude_uv: f64,
    pub seed: u64,
}

/// Topography weights for the planted alpha source: posterior channels
/// strongest, temporal channels silent.
const PLANTED_ALPHA: [f64; 12] = [0.2, 0.1, 0.3, -0.1, 0.4, 0.2, 0.0, 0.0, 1.0, 0.7, 0.9, 1.2];
/// Class-independent background activity; the temporal pair stays silent.
const BACKGROUND: [(f64, f64, [f64; 12]); 3] = [
    (4.0, 8.0, [1.0, 0.9, 0.6, 0.7, 0.8, 0.5, 0.0, 0.0, 0.2, 0.3, 0.1, 0.1]),
    (8.0, 12.0, [0.6, -0.8, 0.4, -0.6, 0.5, -0.4, 0.0, 0.0, 0.9, -0.7, 0.8, -1.0]),
    (14.0, 26.0, [0.4, 0.5, 0.7, 0.6, 0.8, 0.9, 0.0, 0.0, 0.5, 0.4, 0.3, 0.2]),
];
const BACKGROUND_POWER: [f64; 3] = [9.0, 16.0, 4.0];

impl SynthConfig {
    /// 12 channels at 128 Hz, four sessions, three classes. One posterior
    /// alpha source carries the class effect: its variance is
    /// `alpha_power × [ratio, sqrt(ratio), 1]` for classes 0, 1, 2. Three
    /// background sources and white sensor noise are class-independent. The
    /// T7/T8 channels carry sensor noise only.
    pub fn planted_alpha(seed: u64, ratio: f64, alpha_power: f64, noise_sigma_uv: f64) -> Self {
        let mut sources = vec![SourceSpec {
            band: BandSpec::new(8.0, 12.0),
            mixing: PLANTED_ALPHA.to_vec(),
            power_by_class: vec![alpha_power * ratio, alpha_power * ratio.sqrt(), alpha_power],
        }];
        for ((low, high, mixing), power) in BACKGROUND.iter().zip(BACKGROUND_POWER) {
            sources.push(SourceSpec {
                band: BandSpec::new(*low, *high),
                mixing: mixing.to_vec(),
                power_by_class: vec![power; 3],
            });
        }
        Self {
            n_channels: 12,
            rate_hz: 128.0,
            channel_names: None,
            classes: default_classes(),
            sources,
            noise_sigma_uv,
            trials_per_class_per_session: default_trials(),
            n_sessions: default_sessions(),
            trial_seconds: default_trial_seconds(),
            tail_seconds: default_tail_seconds(),
            spike_probability: 0.0,
            spike_amplitude_uv: default_spike_amplitude(),
            seed,
        }
    }

    /// Same layout as [`planted_alpha`](Self::planted_alpha) with no class
    /// difference anywhere.
    pub fn null(seed: u64) -> Self {
        Self::planted_alpha(seed, 1.0, DEFAULT_ALPHA_POWER, DEFAULT_NOISE_SIGMA)
    }

    pub fn channel_names(&self) -> Vec<String> {
        match &self.channel_names {
            Some(names) => names.clone(),
            None if self.n_channels == EMOTIV_CHANNELS.len() => {
                EMOTIV_CHANNELS.iter().map(|s| s.to_string()).collect()
            }
            None => (1..=self.n_channels).map(|i| format!("ch{i}")).collect(),
        }
    }

    pub fn trial_samples(&self) -> usize {
        (self.trial_seconds * self.rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.n_channels < 2 {
            return err(format!("n_channels must be at least 2, got {}", self.n_channels));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return err(format!("rate_hz must be positive, got {}", self.rate_hz));
        }
        if let Some(names) = &self.channel_names {
            if names.len() != self.n_channels {
                return err(format!(
                    "{} channel names for {} channels",
                    names.len(),
                    self.n_channels
                ));
            }
        }
        if self.classes.len() < 2 {
            return err("at least two classes are required".into());
        }
        if !(self.noise_sigma_uv >= 0.0 && self.noise_sigma_uv.is_finite()) {
            return err(format!("noise_sigma_uv must be non-negative, got {}", self.noise_sigma_uv));
        }
        if self.trials_per_class_per_session == 0 || self.n_sessions == 0 {
            return err("trials_per_class_per_session and n_sessions must be positive".into());
        }
        if self.trial_samples() == 0 || !(self.tail_seconds >= 0.0) {
            return err("trial_seconds must be positive and tail_seconds non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return err(format!("spike_probability must lie in [0, 1], got {}", self.spike_probability));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.band
                .validate(self.rate_hz)
                .map_err(|e| SynthError::Config(format!("source {i}: {e}")))?;
            if s.mixing.len() != self.n_channels {
                return err(format!(
                    "source {i}: {} mixing weights for {} channels",
                    s.mixing.len(),
                    self.n_channels
                ));
            }
            if s.mixing.iter().all(|&w| w == 0.0) || s.mixing.iter().any(|w| !w.is_finite()) {
                return err(format!("source {i}: mixing vector must be finite and nonzero"));
            }
            if s.power_by_class.len() != self.classes.len() {
                return err(format!(
                    "source {i}: {} powers for {} classes",
                    s.power_by_class.len(),
                    self.classes.len()
                ));
            }
            if s.power_by_class.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return err(format!("source {i}: powers must be positive"));
            }
        }
        Ok(())
    }

    /// Per-sample class index into `classes` and the trial markers.
    fn layout(&self) -> (Vec<usize>, Vec<Marker>) {
        let n_classes = self.classes.len();
        let trial = self.trial_samples();
        let tail = (self.tail_seconds * self.rate_hz).round() as usize;
        let mut class_of_sample = Vec::new();
        let mut markers = Vec::new();
        for session in 0..self.n_sessions {
            for block in 0..n_classes {
                let class = (block + session) % n_classes;
                for _ in 0..self.trials_per_class_per_session {
                    markers.push(Marker {
                        onset_sample: class_of_sample.len(),
                        label: self.classes[class],
                        session: (session + 1) as SessionId,
                    });
                    class_of_sample.extend(std::iter::repeat_n(class, trial));
                }
            }
        }
        let last = *class_of_sample.last().expect("at least one trial");
        class_of_sample.extend(std::iter::repeat_n(last, tail));
        (class_of_sample, markers)
    }

    /// Variance of channel `c` implied by the mixture, averaged over time.
    pub fn analytic_channel_variance(&self, c: usize) -> f64 {
        let (class_of_sample, _) = self.layout();
        let len = class_of_sample.len() as f64;
        let mut counts = vec![0usize; self.classes.len()];
        for &k in &class_of_sample {
            counts[k] += 1;
        }
        let mut var = self.noise_sigma_uv.powi(2);
        for s in &self.sources {
            let mean_power: f64 = s
                .power_by_class
                .iter()
                .zip(&counts)
                .map(|(p, &n)| p * n as f64)
                .sum::<f64>()
                / len;
            var += s.mixing[c].powi(2) * mean_power;
        }
        var
    }
}

pub const DEFAULT_ALPHA_POWER: f64 = 4.0;
pub const DEFAULT_NOISE_SIGMA: f64 = 2.0;
pub const DEFAULT_POWER_RATIO: f64 = 4.0;

impl Default for SynthConfig {
    fn default() -> Self {
        Self::planted_alpha(0, DEFAULT_POWER_RATIO, DEFAULT_ALPHA_POWER, DEFAULT_NOISE_SIGMA)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Unit-variance white noise restricted to `band`.
pub fn band_limited_noise(len: usize, band: BandSpec, rate_hz: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut spectrum: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut spectrum);
    for (k, bin) in spectrum.iter_mut().enumerate() {
        let folded = k.min(len - k);
        let freq = folded as f64 * rate_hz / len as f64;
        if !band.contains(freq) {
            *bin = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / len as f64;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
    let scale = if std > 0.0 { std.recip() } else { 0.0 };
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    out
}

pub fn generate(config: &SynthConfig) -> Result<Recording, SynthError> {
    config.validate()?;
    let (class_of_sample, markers) = config.layout();
    let len = class_of_sample.len();
    let n = config.n_channels;
    let mut samples = DMatrix::zeros(n, len);

    for (i, source) in config.sources.iter().enumerate() {
        let mut rng = stream(config.seed, 1 + i as u64);
        let activity = band_limited_noise(len, source.band, config.rate_hz, &mut rng);
        let amplitude: Vec<f64> = source.power_by_class.iter().map(|p| p.sqrt()).collect();
        for (t, a) in activity.iter().enumerate() {
            let value = a * amplitude[class_of_sample[t]];
            for c in 0..n {
                samples[(c, t)] += source.mixing[c] * value;
            }
        }
    }

    let mut rng = stream(config.seed, 0);
    for t in 0..len {
        for c in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            samples[(c, t)] += config.noise_sigma_uv * z;
        }
    }

    if config.spike_probability > 0.0 {
        let mut rng = stream(config.seed, u64::MAX);
        let trial = config.trial_samples();
        for m in &markers {
            if rng.random::<f64>() < config.spike_probability {
                let c = rng.random_range(0..n);
                let t = m.onset_sample + rng.random_range(0..trial);
                samples[(c, t)] += config.spike_amplitude_uv;
            }
        }
    }

    Recording::new(samples, config.rate_hz, config.channel_names(), markers)
        .map_err(|e| SynthError::Config(e.to_string()))
}

/// A source whose power differs between classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformativeSource {
    pub source_index: usize,
    pub band: BandSpec,
    pub topography: Vec<f64>,
}

pub fn ground_truth(config: &SynthConfig) -> Vec<InformativeSource> {
    config
        .sources
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_informative())
        .map(|(i, s)| InformativeSource {
            source_index: i,
            band: s.band,
            topography: s.mixing.clone(),
        })
        .collect()
}
