//! Signal container, epoching, zero-phase bandpass filtering and the
//! Teager-Kaiser energy operator.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Lowest sampling rate accepted at load time; fast ripples need a Nyquist
/// frequency above 500 Hz.
pub const MIN_LOAD_FS: f64 = 1000.0;

/// Ripple / fast-ripple boundary in Hz.
pub const RIPPLE_FAST_SPLIT_HZ: f64 = 250.0;

/// HFO sub-band an event belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Ripple,
    FastRipple,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Ripple, Band::FastRipple];

    /// Band a centroid frequency falls into.
    pub fn of_frequency(f_hz: f64) -> Band {
        if f_hz < RIPPLE_FAST_SPLIT_HZ {
            Band::Ripple
        } else {
            Band::FastRipple
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Ripple => "ripple",
            Band::FastRipple => "fast_ripple",
        }
    }

    /// Conventional frequency range of the band.
    pub fn range(self) -> FrequencyBand {
        match self {
            Band::Ripple => FrequencyBand::RIPPLE,
            Band::FastRipple => FrequencyBand::FAST_RIPPLE,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ripple" => Ok(Band::Ripple),
            "fast_ripple" => Ok(Band::FastRipple),
            other => Err(Error::Data(format!("unknown band '{other}'"))),
        }
    }
}

/// A processing band in Hz, `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyBand {
    pub const RIPPLE: FrequencyBand = FrequencyBand {
        lo: 80.0,
        hi: 250.0,
    };
    pub const FAST_RIPPLE: FrequencyBand = FrequencyBand {
        lo: 250.0,
        hi: 500.0,
    };
    pub const FULL: FrequencyBand = FrequencyBand {
        lo: 80.0,
        hi: 500.0,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return param(format!("invalid band [{lo}, {hi}] Hz"));
        }
        Ok(Self { lo, hi })
    }

    /// Checks that the band fits below the Nyquist frequency.
    pub fn check_fs(&self, fs: f64) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < fs / 2.0) {
            return param(format!(
                "band [{}, {}] Hz must satisfy 0 < lo < hi < fs/2 = {}",
                self.lo,
                self.hi,
                fs / 2.0
            ));
        }
        Ok(())
    }
}

/// Multichannel recording. Samples are in microvolts, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    samples: Vec<Vec<f64>>,
    fs: f64,
    channel_names: Vec<String>,
    resected: Vec<bool>,
}

impl SignalRecord {
    pub fn new(
        samples: Vec<Vec<f64>>,
        fs: f64,
        channel_names: Vec<String>,
        resected: Vec<bool>,
    ) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return param(format!("sampling rate must be positive, got {fs}"));
        }
        if samples.len() != channel_names.len() || samples.len() != resected.len() {
            return Err(Error::Data(format!(
                "{} channels but {} names and {} resected flags",
                samples.len(),
                channel_names.len(),
                resected.len()
            )));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Data("channels have unequal lengths".into()));
            }
        }
        Ok(Self {
            samples,
            fs,
            channel_names,
            resected,
        })
    }

    /// Builds a record with generated channel names and no resected channels.
    pub fn from_channels(samples: Vec<Vec<f64>>, fs: f64) -> Result<Self> {
        let n = samples.len();
        let names = (0..n).map(|i| format!("ch{i:02}")).collect();
        Self::new(samples, fs, names, vec![false; n])
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.samples[idx]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn resected(&self) -> &[bool] {
        &self.resected
    }

    pub fn set_resected(&mut self, resected: Vec<bool>) -> Result<()> {
        if resected.len() != self.n_channels() {
            return Err(Error::Data("resected flag count mismatch".into()));
        }
        self.resected = resected;
        Ok(())
    }
}

/// One fixed-length analysis window of a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub channel: usize,
    /// Absolute index of the first sample in the parent recording.
    pub start_sample: usize,
    pub samples: Vec<f64>,
    pub fs: f64,
}

impl Epoch {
    pub fn start_s(&self) -> f64 {
        self.start_sample as f64 / self.fs
    }
}

/// Start offsets of all full-length windows over `n_samples`.
/// Trailing partial windows are dropped.
pub fn epoch_starts(n_samples: usize, window: usize, step: usize) -> Vec<usize> {
    if window == 0 || step == 0 || n_samples < window {
        return Vec::new();
    }
    (0..=(n_samples - window) / step)
        .map(|i| i * step)
        .collect()
}

fn window_len(window_s: f64, step_s: f64, fs: f64) -> Result<(usize, usize)> {
    if !(window_s > 0.0 && step_s > 0.0 && step_s <= window_s) {
        return param(format!(
            "epoching needs 0 < step ({step_s} s) <= window ({window_s} s)"
        ));
    }
    let window = (window_s * fs).round() as usize;
    let step = (step_s * fs).round() as usize;
    if window == 0 || step == 0 {
        return param("epoch window shorter than one sample");
    }
    Ok((window, step))
}

/// Splits every channel into overlapping fixed-length epochs.
pub fn epoch_signal(record: &SignalRecord, window_s: f64, step_s: f64) -> Result<Vec<Vec<Epoch>>> {
    let (window, step) = window_len(window_s, step_s, record.fs())?;
    let starts = epoch_starts(record.n_samples(), window, step);
    Ok(record
        .channels()
        .iter()
        .enumerate()
        .map(|(channel, x)| {
            starts
                .iter()
                .map(|&s| Epoch {
                    channel,
                    start_sample: s,
                    samples: x[s..s + window].to_vec(),
                    fs: record.fs(),
                })
                .collect()
        })
        .collect())
}

/// Linear-phase FIR bandpass (Hamming-windowed sinc) applied with its group
/// delay removed, which makes the output zero-phase.
///
/// The transition band lies just outside the passband and is half the lower
/// band edge wide, capped at [`MAX_TRANSITION_HZ`] so adjacent sub-bands stay
/// apart. A Hamming window keeps the stopband more than 50 dB down.
pub const MAX_TRANSITION_HZ: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FirBandpass {
    taps: Vec<f64>,
}

impl FirBandpass {
    pub fn design(fs: f64, band: FrequencyBand) -> Result<Self> {
        band.check_fs(fs)?;
        let nyq = fs / 2.0;
        let transition = (band.lo / 2.0).min(MAX_TRANSITION_HZ).min(nyq - band.hi);
        let mut len = (3.3 * fs / transition).ceil() as usize;
        if len % 2 == 0 {
            len += 1;
        }
        let f1 = (band.lo - transition / 2.0) / fs;
        let f2 = (band.hi + transition / 2.0) / fs;
        let mid = (len / 2) as f64;
        let taps = (0..len)
            .map(|i| {
                let m = i as f64 - mid;
                let ideal = if m == 0.0 {
                    2.0 * (f2 - f1)
                } else {
                    ((2.0 * PI * f2 * m).sin() - (2.0 * PI * f1 * m).sin()) / (PI * m)
                };
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
                ideal * w
            })
            .collect();
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Filters `x`, zero-extending beyond both ends. Output has the input length.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let len = self.taps.len();
        let half = len / 2;
        let mut padded = vec![0.0; x.len() + 2 * half];
        padded[half..half + x.len()].copy_from_slice(x);
        // symmetric taps: fold the pairs to halve the multiplies
        let centre = self.taps[half];
        let pairs = &self.taps[..half];
        (0..x.len())
            .map(|n| {
                let win = &padded[n..n + len];
                let mut acc = centre * win[half];
                for (k, &h) in pairs.iter().enumerate() {
                    acc += h * (win[k] + win[len - 1 - k]);
                }
                acc
            })
            .collect()
    }
}

/// Zero-phase bandpass of `samples` to `[f_lo, f_hi]` Hz.
pub fn bandpass(samples: &[f64], fs: f64, f_lo: f64, f_hi: f64) -> Result<Vec<f64>> {
    let band = FrequencyBand::new(f_lo, f_hi)?;
    Ok(FirBandpass::design(fs, band)?.apply(samples))
}

/// Teager-Kaiser energy `x[n]^2 - x[n-1] x[n+1]`, with both endpoints set to 0.
pub fn tkeo(samples: &[f64]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 3 {
        return param(format!("TKEO needs at least 3 samples, got {n}"));
    }
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = samples[i] * samples[i] - samples[i - 1] * samples[i + 1];
    }
    Ok(out)
}
