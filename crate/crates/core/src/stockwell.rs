//! Discrete Stockwell transform.
//!
//! Each analyzed row is computed in the frequency domain: the epoch spectrum
//! is shifted by the row frequency, multiplied by the Gaussian
//! `exp(-2 pi^2 nu^2 / k^2)` and inverse transformed. The Gaussian is
//! truncated where it drops below `1e-20`, which leaves the result unchanged
//! at double precision while skipping most of the multiply work.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Result};
use crate::signal::FrequencyBand;

const MIN_EPOCH_LEN: usize = 64;
const GAUSS_CUTOFF: f64 = 1e-20;

/// Time-frequency magnitude map of one epoch. Rows are frequencies,
/// columns are time samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TfdMatrix {
    pub mag: Array2<f64>,
    /// Frequency of each row in Hz, strictly increasing.
    pub f_axis: Vec<f64>,
    /// Time of each column in seconds, relative to the epoch start.
    pub t_axis: Vec<f64>,
    /// `(channel, start_sample)` of the epoch the map was computed from.
    pub source_epoch: (usize, usize),
}

impl TfdMatrix {
    pub fn n_freqs(&self) -> usize {
        self.mag.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.mag.ncols()
    }

    /// Frequency at a fractional row position, interpolated linearly.
    pub fn freq_at(&self, row: f64) -> f64 {
        let last = self.f_axis.len() - 1;
        let r = row.clamp(0.0, last as f64);
        let i = (r.floor() as usize).min(last);
        if i == last {
            return self.f_axis[last];
        }
        let frac = r - i as f64;
        self.f_axis[i] + frac * (self.f_axis[i + 1] - self.f_axis[i])
    }
}

struct RowKernel {
    bin: usize,
    // (source bin, destination bin, weight) with non-negligible weight
    weights: Vec<(usize, usize, f64)>,
}

/// Reusable transform setup for one epoch length, sampling rate and band.
pub struct StockwellPlan {
    n: usize,
    fs: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    rows: Vec<RowKernel>,
}

impl StockwellPlan {
    pub fn new(n: usize, fs: f64, band: FrequencyBand) -> Result<Self> {
        if n < MIN_EPOCH_LEN {
            return param(format!(
                "epoch of {n} samples is shorter than {MIN_EPOCH_LEN}"
            ));
        }
        band.check_fs(fs)?;
        let df = fs / n as f64;
        let k_lo = ((band.lo / df).ceil() as usize).max(1);
        let k_hi = (band.hi / df).floor() as usize;
        if k_hi < k_lo || k_hi >= n / 2 + (n % 2) {
            return param(format!(
                "band [{}, {}] Hz contains no analyzable bins at {df} Hz spacing",
                band.lo, band.hi
            ));
        }
        let rows = (k_lo..=k_hi).map(|k| row_kernel(k, n)).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            fs,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn f_axis(&self) -> Vec<f64> {
        let df = self.fs / self.n as f64;
        self.rows.iter().map(|r| r.bin as f64 * df).collect()
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Calls `sink(row_index, complex_row)` for every analyzed frequency.
    fn for_each_row(&self, x: &[f64], mut sink: impl FnMut(usize, &[Complex64])) -> Result<()> {
        if x.len() != self.n {
            return param(format!(
                "plan built for {} samples, got {}",
                self.n,
                x.len()
            ));
        }
        let spec = self.spectrum(x);
        let scale = 1.0 / self.n as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (r, row) in self.rows.iter().enumerate() {
            buf.fill(Complex64::new(0.0, 0.0));
            for &(src, dst, w) in &row.weights {
                buf[dst] = spec[src] * (w * scale);
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            sink(r, &buf);
        }
        Ok(())
    }

    /// Magnitude map of one epoch.
    pub fn transform(&self, x: &[f64], source_epoch: (usize, usize)) -> Result<TfdMatrix> {
        let mut data = Vec::with_capacity(self.rows.len() * self.n);
        self.for_each_row(x, |_, row| {
            data.extend(row.iter().map(|z| z.norm_sqr().sqrt()))
        })?;
        Ok(TfdMatrix {
            mag: Array2::from_shape_vec((self.rows.len(), self.n), data)
                .expect("one row per analyzed bin"),
            f_axis: self.f_axis(),
            t_axis: (0..self.n).map(|j| j as f64 / self.fs).collect(),
            source_epoch,
        })
    }

    /// Complex transform, rows = analyzed frequencies.
    pub fn transform_complex(&self, x: &[f64]) -> Result<Array2<Complex64>> {
        let mut out = Array2::zeros((self.rows.len(), self.n));
        self.for_each_row(x, |r, row| {
            out.row_mut(r)
                .iter_mut()
                .zip(row)
                .for_each(|(d, s)| *d = *s);
        })?;
        Ok(out)
    }
}

fn row_kernel(k: usize, n: usize) -> RowKernel {
    let kf = k as f64;
    let mut weights = Vec::new();
    // nu in (-n/2, n/2]
    for nu in -((n as isize - 1) / 2)..=(n / 2) as isize {
        let w = (-2.0 * PI * PI * (nu * nu) as f64 / (kf * kf)).exp();
        if w >= GAUSS_CUTOFF {
            let src = (nu + k as isize).rem_euclid(n as isize) as usize;
            weights.push((src, nu.rem_euclid(n as isize) as usize, w));
        }
    }
    RowKernel { bin: k, weights }
}

/// Stockwell magnitude map of an epoch over DFT bins in `[f_lo, f_hi]`.
pub fn stransform(epoch_samples: &[f64], fs: f64, f_lo: f64, f_hi: f64) -> Result<TfdMatrix> {
    let band = FrequencyBand::new(f_lo, f_hi)?;
    StockwellPlan::new(epoch_samples.len(), fs, band)?.transform(epoch_samples, (0, 0))
}

/// One complex row by direct circular summation of the Stockwell integral:
/// `S[j] = sum_m x[m] e^{-i 2 pi f m / fs} w(j - m)` with `w` the
/// periodized Gaussian `|f| / sqrt(2 pi) exp(-t^2 f^2 / 2)` sampled at `1/fs`.
///
/// Costs O(N^2); intended as a reference for short epochs.
pub fn stransform_direct(epoch_samples: &[f64], fs: f64, f: f64) -> Result<Vec<Complex64>> {
    let n = epoch_samples.len();
    if n < MIN_EPOCH_LEN {
        return param(format!(
            "epoch of {n} samples is shorter than {MIN_EPOCH_LEN}"
        ));
    }
    if !(f > 0.0 && f < fs / 2.0) {
        return param(format!("frequency {f} Hz outside (0, fs/2)"));
    }
    let nf = n as f64;
    let norm = (f / fs) / (2.0 * PI).sqrt();
    let window: Vec<f64> = (0..n)
        .map(|d| {
            (-3..=3)
                .map(|p| {
                    let t = (d as f64 + p as f64 * nf) / fs;
                    norm * (-t * t * f * f / 2.0).exp()
                })
                .sum()
        })
        .collect();
    let modulated: Vec<Complex64> = epoch_samples
        .iter()
        .enumerate()
        .map(|(m, &x)| x * Complex64::from_polar(1.0, -2.0 * PI * f * m as f64 / fs))
        .collect();
    Ok((0..n)
        .map(|j| {
            modulated
                .iter()
                .enumerate()
                .map(|(m, z)| z * window[(j + n - m) % n])
                .sum()
        })
        .collect())
}
