use crate::error::{param, Result};

use super::{moments, SubFeatures};

pub const NAMES: [&str; 12] = [
    "time_mean",
    "time_variance",
    "time_skewness",
    "time_kurtosis",
    "time_cv",
    "time_rms",
    "time_power",
    "time_line_length",
    "time_autocorr_lag1",
    "time_nonlinear_energy",
    "time_fractal_dim",
    "time_range",
];

/// Dyadic box sizes (in samples) used by the box-counting dimension.
const BOX_SIZES: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Time-domain statistics of a signal crop.
///
/// Skewness and kurtosis are standardized moments. Coefficients that divide
/// by a vanishing variance or mean are imputed as 0 and flag the result.
pub fn time_features(crop: &[f64]) -> Result<SubFeatures> {
    let n = crop.len();
    if n < 3 {
        return param(format!("time features need at least 3 samples, got {n}"));
    }
    let nf = n as f64;
    let m = moments(crop.iter().copied());
    let mut degenerate = m.degenerate;

    let cv = if m.mean != 0.0 && m.variance > 0.0 {
        m.variance.sqrt() / m.mean
    } else {
        degenerate = true;
        0.0
    };
    let power: f64 = crop.iter().map(|x| x * x).sum();
    let rms = (power / nf).sqrt();
    let line_length: f64 = crop.windows(2).map(|w| (w[1] - w[0]).abs()).sum();

    let denom: f64 = crop.iter().map(|x| (x - m.mean).powi(2)).sum();
    let autocorr = if denom > 0.0 {
        crop.windows(2)
            .map(|w| (w[0] - m.mean) * (w[1] - m.mean))
            .sum::<f64>()
            / denom
    } else {
        degenerate = true;
        0.0
    };
    let nonlinear_energy: f64 = crop.windows(3).map(|w| w[1] * w[1] - w[0] * w[2]).sum();
    let (lo, hi) = crop
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });

    Ok(SubFeatures {
        values: vec![
            m.mean,
            m.variance,
            m.skewness,
            m.kurtosis,
            cv,
            rms,
            power,
            line_length,
            autocorr,
            nonlinear_energy,
            box_counting_dimension(crop),
            hi - lo,
        ],
        degenerate,
    })
}

/// Box-counting dimension of the trace drawn in a square whose sides both
/// span `n - 1` sample units: slope of `ln N(s)` against `ln(1/s)` over
/// dyadic box sizes that leave at least two columns.
pub fn box_counting_dimension(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return 0.0;
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let extent = (n - 1) as f64;
    let y: Vec<f64> = if hi > lo {
        x.iter().map(|v| (v - lo) / (hi - lo) * extent).collect()
    } else {
        vec![0.0; n]
    };

    let mut pts = Vec::new();
    for &s in BOX_SIZES.iter().filter(|&&s| 2 * s <= n - 1) {
        let mut count = 0usize;
        let mut start = 0;
        while start < n - 1 {
            let end = (start + s).min(n - 1);
            let (a, b) = y[start..=end]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let sf = s as f64;
            count += ((b / sf).floor() - (a / sf).floor()) as usize + 1;
            start += s;
        }
        pts.push(((1.0 / s as f64).ln(), (count as f64).ln()));
    }
    if pts.len() < 2 {
        return 1.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
