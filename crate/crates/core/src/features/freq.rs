use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::SubFeatures;

pub const NAMES: [&str; 6] = [
    "freq_spectral_flux",
    "freq_spectral_flatness",
    "freq_spectral_entropy",
    "freq_iwmf",
    "freq_iwbw",
    "freq_peak_power",
];

/// Welch segment length in seconds.
pub const WELCH_SEGMENT_S: f64 = 1.0;

/// One-sided power spectral density, DC bin excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    /// Power density in units^2 / Hz.
    pub power: Vec<f64>,
    pub f_axis: Vec<f64>,
}

impl Psd {
    pub fn df(&self) -> f64 {
        if self.f_axis.len() > 1 {
            self.f_axis[1] - self.f_axis[0]
        } else {
            self.f_axis.first().copied().unwrap_or(0.0)
        }
    }

    /// Integral of the density over frequency.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Welch estimate with non-overlapping Hamming segments of one second,
/// shortened to the whole crop when the crop is shorter. Each segment is
/// mean-detrended and scaled by the window power so the density integrates
/// to the segment variance.
pub fn welch_psd(crop: &[f64], fs: f64) -> Psd {
    let n = crop.len();
    let seg = ((WELCH_SEGMENT_S * fs).round() as usize).min(n).max(1);
    let n_seg = (n / seg).max(1);
    let window = hamming(seg);
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let n_bins = seg / 2;
    let mut power = vec![0.0; n_bins];
    for s in 0..n_seg {
        let chunk = &crop[s * seg..(s + 1) * seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        let mut buf: Vec<Complex64> = chunk
            .iter()
            .zip(&window)
            .map(|(x, w)| Complex64::new((x - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for k in 1..=n_bins {
            let one_sided = if 2 * k == seg { 1.0 } else { 2.0 };
            power[k - 1] += one_sided * buf[k].norm_sqr() / (fs * wpow);
        }
    }
    if wpow == 0.0 {
        power.fill(0.0);
    }
    for p in &mut power {
        *p /= n_seg as f64;
    }
    let df = fs / seg as f64;
    Psd {
        power,
        f_axis: (1..=n_bins).map(|k| k as f64 * df).collect(),
    }
}

/// Whole-crop spectrum plus the spectra of its two halves (for flux).
pub fn crop_spectra(crop: &[f64], fs: f64) -> (Psd, Psd, Psd) {
    let half = crop.len() / 2;
    (
        welch_psd(crop, fs),
        welch_psd(&crop[..half], fs),
        welch_psd(&crop[half..2 * half], fs),
    )
}

/// Frequency-domain features of a spectrum. `halves` are consecutive
/// frames used for spectral flux.
pub fn freq_features(psd: &Psd, halves: (&Psd, &Psd)) -> SubFeatures {
    let p = &psd.power;
    let total: f64 = p.iter().sum();
    let flux: f64 = halves
        .0
        .power
        .iter()
        .zip(&halves.1.power)
        .map(|(a, b)| (b - a).abs())
        .sum();
    let peak = p.iter().copied().fold(0.0, f64::max);
    if p.is_empty() || total <= 0.0 {
        return SubFeatures {
            values: vec![flux, 0.0, 0.0, 0.0, 0.0, peak],
            degenerate: true,
        };
    }
    let m = p.len() as f64;
    let flatness = if p.iter().any(|v| *v <= 0.0) {
        0.0
    } else {
        (p.iter().map(|v| v.ln()).sum::<f64>() / m).exp() / (total / m)
    };
    let norm: Vec<f64> = p.iter().map(|v| v / total).collect();
    let entropy: f64 = norm
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| -v * v.log2())
        .sum();
    let iwmf: f64 = norm.iter().zip(&psd.f_axis).map(|(w, f)| w * f).sum();
    let iwbw = norm
        .iter()
        .zip(&psd.f_axis)
        .map(|(w, f)| w * (f - iwmf).powi(2))
        .sum::<f64>()
        .sqrt();
    SubFeatures {
        values: vec![flux, flatness, entropy, iwmf, iwbw, peak],
        degenerate: false,
    }
}
