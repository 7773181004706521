use ndarray::Array2;

use super::{moments, SubFeatures};

pub const NAMES: [&str; 10] = [
    "tf_mean",
    "tf_variance",
    "tf_skewness",
    "tf_kurtosis",
    "tf_cv",
    "tf_shannon_entropy",
    "tf_renyi_entropy",
    "tf_flatness",
    "tf_flux",
    "tf_energy_concentration",
];

pub const RENYI_ALPHA: i32 = 3;

/// Number of leading columns produced by [`tf_statistics`].
pub const N_STATISTICS: usize = 5;

/// Statistics, entropies, flatness, flux (unit lag in both axes) and energy
/// concentration of a non-negative time-frequency patch.
pub fn tf_features(patch: &Array2<f64>) -> SubFeatures {
    let mut a = tf_statistics(patch);
    let b = tf_shape(patch);
    a.values.extend(b.values);
    a.degenerate |= b.degenerate;
    a
}

/// Mean, variance, skewness, kurtosis and coefficient of variation.
pub fn tf_statistics(patch: &Array2<f64>) -> SubFeatures {
    let m = moments(patch.iter().copied());
    let mut degenerate = m.degenerate;
    let cv = if m.mean > 0.0 {
        m.variance.sqrt() / m.mean
    } else {
        degenerate = true;
        0.0
    };
    SubFeatures {
        values: vec![m.mean, m.variance, m.skewness, m.kurtosis, cv],
        degenerate,
    }
}

/// Entropies, flatness, flux and energy concentration.
pub fn tf_shape(patch: &Array2<f64>) -> SubFeatures {
    let cells = patch.len() as f64;
    let mut degenerate = false;
    let owned;
    let flat: &[f64] = match patch.as_slice() {
        Some(v) => v,
        None => {
            owned = patch.iter().copied().collect::<Vec<_>>();
            &owned
        }
    };
    let total: f64 = flat.iter().sum();
    // one logarithm per cell serves both entropies' support and flatness
    let (mut plogp, mut renyi_sum, mut log_sum, mut all_positive) = (0.0, 0.0, 0.0, true);
    if total > 0.0 {
        let ln_total = total.ln();
        for &v in flat {
            if v > 0.0 {
                let lv = v.ln();
                let p = v / total;
                plogp += p * (lv - ln_total);
                renyi_sum += p.powi(RENYI_ALPHA);
                log_sum += lv;
            } else {
                all_positive = false;
            }
        }
    }
    let (shannon, renyi) = if total > 0.0 {
        (
            -plogp / std::f64::consts::LN_2,
            renyi_sum.log2() / (1 - RENYI_ALPHA) as f64,
        )
    } else {
        degenerate = true;
        (0.0, 0.0)
    };
    let flatness = if total > 0.0 && all_positive {
        (log_sum / cells).exp() / (total / cells)
    } else {
        0.0
    };

    let (rows, cols) = patch.dim();
    let mut flux = 0.0;
    for r in 0..rows.saturating_sub(1) {
        let (a, b) = (
            &flat[r * cols..(r + 1) * cols],
            &flat[(r + 1) * cols..(r + 2) * cols],
        );
        for c in 0..cols.saturating_sub(1) {
            flux += (b[c + 1] - a[c]).abs();
        }
    }
    flux /= cells.max(1.0);

    let concentration = flat.iter().map(|v| v.abs().sqrt()).sum::<f64>().powi(2);

    SubFeatures {
        values: vec![shannon, renyi, flatness, flux, concentration],
        degenerate,
    }
}
