//! Butterworth band-pass filter bank with zero-phase (forward–backward)
//! application.
//!
//! Each band is designed by the bilinear transform of an analog Butterworth
//! low-pass prototype shifted to a band-pass, and stored as cascaded
//! second-order sections. Filtering pads each end with an odd reflection
//! of the signal and starts every section in its step-response steady
//! state, then runs the cascade forward and backward.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid band {low_hz}-{high_hz} Hz for a {rate_hz} Hz sampling rate (need 0 < low < high < Nyquist)")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        rate_hz: f64,
    },
    #[error("filter order must be at least 1")]
    InvalidOrder,
    #[error("signal of {samples} samples is too short for an order-{order} forward-backward filter (need more than {min})")]
    TooShort {
        samples: usize,
        order: usize,
        min: usize,
    },
    #[error("epoch sampled at {epoch_hz} Hz passed to a bank designed for {bank_hz} Hz")]
    RateMismatch { epoch_hz: f64, bank_hz: f64 },
}

/// A pass band in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(low_hz: f64, high_hz: f64) -> Self {
        Self { low_hz, high_hz }
    }

    pub fn validate(&self, rate_hz: f64) -> Result<(), FilterError> {
        let ok = self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < rate_hz / 2.0;
        if ok {
            Ok(())
        } else {
            Err(FilterError::InvalidBand {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                rate_hz,
            })
        }
    }

    pub fn width_hz(&self) -> f64 {
        self.high_hz - self.low_hz
    }

    pub fn contains(&self, freq_hz: f64) -> bool {
        freq_hz >= self.low_hz && freq_hz <= self.high_hz
    }
}

impl std::fmt::Display for BandSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{} Hz", self.low_hz, self.high_hz)
    }
}

/// The nine 4 Hz bands 4-8, 8-12, ..., 36-40 Hz.
pub fn default_bands() -> Vec<BandSpec> {
    (1..=9)
        .map(|k| BandSpec::new(4.0 * k as f64, 4.0 * (k + 1) as f64))
        .collect()
}

/// One biquad, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a unit-step steady state.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z1 = self.b[2] - self.a[1] * g;
        let z0 = self.b[1] - self.a[0] * g + z1;
        [z0, z1]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = 1.0 + z_inv * (self.a[0] + z_inv * self.a[1]);
        num / den
    }
}

/// A designed Butterworth band-pass filter for one band and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    band: BandSpec,
    rate_hz: f64,
    order: usize,
    sections: Vec<Biquad>,
    pole_radius: f64,
}

impl BandpassFilter {
    pub fn design(band: BandSpec, order: usize, rate_hz: f64) -> Result<Self, FilterError> {
        if order == 0 {
            return Err(FilterError::InvalidOrder);
        }
        band.validate(rate_hz)?;

        let fs2 = 2.0 * rate_hz;
        let w_low = fs2 * (PI * band.low_hz / rate_hz).tan();
        let w_high = fs2 * (PI * band.high_hz / rate_hz).tan();
        let bandwidth = w_high - w_low;
        let w0_sq = w_low * w_high;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let half = Complex64::from_polar(1.0, theta) * (bandwidth / 2.0);
            let root = (half * half - w0_sq).sqrt();
            for s in [half + root, half - root] {
                poles.push((fs2 + s) / (fs2 - s));
            }
        }

        // Conjugate pairs become one section each; real poles are paired up.
        let tol = 1e-10;
        let mut denominators: Vec<[f64; 2]> = poles
            .iter()
            .filter(|p| p.im > tol)
            .map(|p| [-2.0 * p.re, p.norm_sqr()])
            .collect();
        let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
        real.sort_by(f64::total_cmp);
        for pair in real.chunks(2) {
            let (p, q) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
            denominators.push([-(p + q), p * q]);
        }
        debug_assert_eq!(denominators.len(), order);

        let mut sections: Vec<Biquad> = denominators
            .into_iter()
            .map(|a| Biquad {
                b: [1.0, 0.0, -1.0],
                a,
            })
            .collect();

        // Unit gain at the digital image of the analog centre frequency.
        let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let z_inv = Complex64::from_polar(1.0, -center);
        let gain: f64 = sections.iter().map(|s| s.response(z_inv).norm()).product();
        let per_section = gain.recip().powf(1.0 / order as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        let pole_radius = poles.iter().map(|p| p.norm()).fold(0.0, f64::max);

        Ok(Self {
            band,
            rate_hz,
            order,
            sections,
            pole_radius,
        })
    }

    pub fn band(&self) -> BandSpec {
        self.band
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Single-pass magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / self.rate_hz);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    /// Samples for the slowest pole to decay to 1e-3.
    pub fn settling_samples(&self) -> usize {
        let decay = (1e-3f64).ln() / self.pole_radius.ln();
        decay.ceil() as usize
    }

    pub fn min_samples(&self) -> usize {
        3 * self.order
    }

    /// Zero-phase filtering of one channel.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>, FilterError> {
        let n = x.len();
        if n <= self.min_samples() {
            return Err(FilterError::TooShort {
                samples: n,
                order: self.order,
                min: self.min_samples(),
            });
        }
        let pad = self.settling_samples().max(3 * (2 * self.order + 1)).min(n - 1);

        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    /// In-place cascade pass starting from the steady state for `signal[0]`.
    fn run(&self, signal: &mut [f64]) {
        let x0 = signal[0];
        let mut scale = 1.0;
        for section in &self.sections {
            let zi = section.step_state();
            let mut z = [zi[0] * scale * x0, zi[1] * scale * x0];
            scale *= section.dc_gain();
            let [b0, b1, b2] = section.b;
            let [a1, a2] = section.a;
            for v in signal.iter_mut() {
                let x = *v;
                let y = b0 * x + z[0];
                z[0] = b1 * x - a1 * y + z[1];
                z[1] = b2 * x - a2 * y;
                *v = y;
            }
        }
    }

    /// Filters every row (channel) of `signal` independently. Channels run
    /// in lockstep; each row gives the same result as [`filtfilt`](Self::filtfilt).
    pub fn apply(&self, signal: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
        let (rows, n) = signal.shape();
        if n <= self.min_samples() {
            return Err(FilterError::TooShort {
                samples: n,
                order: self.order,
                min: self.min_samples(),
            });
        }
        let pad = self.settling_samples().max(3 * (2 * self.order + 1)).min(n - 1);
        let total = n + 2 * pad;
        let mut ext = DMatrix::zeros(rows, total);
        for c in 0..rows {
            let (first, last) = (signal[(c, 0)], signal[(c, n - 1)]);
            for i in 1..=pad {
                ext[(c, pad - i)] = 2.0 * first - signal[(c, i)];
                ext[(c, pad + n - 1 + i)] = 2.0 * last - signal[(c, n - 1 - i)];
            }
            for t in 0..n {
                ext[(c, pad + t)] = signal[(c, t)];
            }
        }
        let data = ext.as_mut_slice();
        self.run_lockstep(data, rows, 0..total);
        self.run_lockstep(data, rows, (0..total).rev());
        Ok(ext.columns(pad, n).into_owned())
    }

    /// Cascade pass over column-major `data`, visiting columns in `order`.
    fn run_lockstep(&self, data: &mut [f64], rows: usize, order: impl Iterator<Item = usize> + Clone) {
        let start = order.clone().next().expect("non-empty signal");
        let x0: Vec<f64> = data[start * rows..(start + 1) * rows].to_vec();
        let mut scale = 1.0;
        let mut z0 = vec![0.0; rows];
        let mut z1 = vec![0.0; rows];
        for section in &self.sections {
            let zi = section.step_state();
            for c in 0..rows {
                z0[c] = zi[0] * scale * x0[c];
                z1[c] = zi[1] * scale * x0[c];
            }
            scale *= section.dc_gain();
            let [b0, b1, b2] = section.b;
            let [a1, a2] = section.a;
            for t in order.clone() {
                let column = &mut data[t * rows..(t + 1) * rows];
                for ((v, s0), s1) in column.iter_mut().zip(z0.iter_mut()).zip(z1.iter_mut()) {
                    let x = *v;
                    let y = b0 * x + *s0;
                    *s0 = b1 * x - a1 * y + *s1;
                    *s1 = b2 * x - a2 * y;
                    *v = y;
                }
            }
        }
    }
}

/// Designs a filter for `band` and applies it to every channel.
pub fn bandpass(
    signal: &DMatrix<f64>,
    band: BandSpec,
    rate_hz: f64,
    order: usize,
) -> Result<DMatrix<f64>, FilterError> {
    BandpassFilter::design(band, order, rate_hz)?.apply(signal)
}

/// An ordered set of band-pass filters sharing a sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    rate_hz: f64,
    filters: Vec<BandpassFilter>,
}

pub const DEFAULT_FILTER_ORDER: usize = 4;

impl FilterBank {
    pub fn new(bands: &[BandSpec], order: usize, rate_hz: f64) -> Result<Self, FilterError> {
        let filters = bands
            .iter()
            .map(|&b| BandpassFilter::design(b, order, rate_hz))
            .collect::<Result<_, _>>()?;
        Ok(Self { rate_hz, filters })
    }

    pub fn with_default_bands(rate_hz: f64) -> Result<Self, FilterError> {
        Self::new(&default_bands(), DEFAULT_FILTER_ORDER, rate_hz)
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn bands(&self) -> Vec<BandSpec> {
        self.filters.iter().map(|f| f.band).collect()
    }

    pub fn filters(&self) -> &[BandpassFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// One band-passed copy of `signal` per band, in band order.
    pub fn decompose(&self, signal: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>, FilterError> {
        self.filters.par_iter().map(|f| f.apply(signal)).collect()
    }

    /// [`decompose`](Self::decompose) after checking the epoch's rate.
    pub fn decompose_epoch(
        &self,
        epoch: &crate::recording::Epoch,
    ) -> Result<Vec<DMatrix<f64>>, FilterError> {
        if (epoch.rate_hz - self.rate_hz).abs() > 1e-9 * self.rate_hz {
            return Err(FilterError::RateMismatch {
                epoch_hz: epoch.rate_hz,
                bank_hz: self.rate_hz,
            });
        }
        self.decompose(&epoch.data)
    }
}
