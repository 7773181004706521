//! Feature catalog computed for every extracted event.
//!
//! The catalog is a frozen, ordered list of 46 named features in four
//! groups: time domain (12), frequency domain (6), time-frequency
//! statistics (10) and image features of the time-frequency patch (18).
//! Degenerate inputs (constant crops, empty patches) never produce NaN or
//! infinity: affected features are imputed as 0 and the event carries a
//! flag for the group instead.

mod freq;
mod image;
mod tf;
mod time;

use ndarray::{Array2, Axis};

use crate::error::{param, Result};
use crate::events::Event;

pub use freq::{crop_spectra, freq_features, hamming, welch_psd, Psd, WELCH_SEGMENT_S};
pub use image::{image_features, lbp_histogram, SegmentMoments};
pub use tf::{tf_features, tf_shape, tf_statistics, RENYI_ALPHA};
pub use time::{box_counting_dimension, time_features};

pub const TIME_NAMES: &[&str] = &time::NAMES;
pub const FREQ_NAMES: &[&str] = &freq::NAMES;
pub const TF_NAMES: &[&str] = &tf::NAMES;
pub const IMAGE_NAMES: &[&str] = &image::NAMES;

pub const CATALOG_LEN: usize =
    time::NAMES.len() + freq::NAMES.len() + tf::NAMES.len() + image::NAMES.len();

/// Canonical feature names in vector order.
pub fn catalog() -> Vec<&'static str> {
    [TIME_NAMES, FREQ_NAMES, TF_NAMES, IMAGE_NAMES].concat()
}

/// Index of a feature in the catalog.
pub fn feature_index(name: &str) -> Option<usize> {
    catalog().iter().position(|n| *n == name)
}

/// Values of one feature group plus whether any of them were imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct SubFeatures {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// Unit of feature computation. The time-frequency catalog group is split
/// in two so its statistics can be computed without the per-cell logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureGroup {
    Time,
    Frequency,
    TfStatistics,
    TfShape,
    Image,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Time,
        FeatureGroup::Frequency,
        FeatureGroup::TfStatistics,
        FeatureGroup::TfShape,
        FeatureGroup::Image,
    ];

    /// Catalog columns of the group.
    pub fn columns(self) -> std::ops::Range<usize> {
        let (t, f, tf) = (TIME_NAMES.len(), FREQ_NAMES.len(), TF_NAMES.len());
        let stats = t + f + tf::N_STATISTICS;
        match self {
            FeatureGroup::Time => 0..t,
            FeatureGroup::Frequency => t..t + f,
            FeatureGroup::TfStatistics => t + f..stats,
            FeatureGroup::TfShape => stats..t + f + tf,
            FeatureGroup::Image => t + f + tf..CATALOG_LEN,
        }
    }

    pub fn of_column(i: usize) -> Option<FeatureGroup> {
        Self::ALL.into_iter().find(|g| g.columns().contains(&i))
    }
}

/// Groups holding the given catalog columns, in catalog order.
pub fn groups_for(columns: &[usize]) -> Vec<FeatureGroup> {
    let mut g: Vec<FeatureGroup> = columns
        .iter()
        .filter_map(|&c| FeatureGroup::of_column(c))
        .collect();
    g.sort_unstable();
    g.dedup();
    g
}

/// Feature values of one event in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Groups with imputed values. Metadata only, never a clustering input.
    pub degenerate: Vec<FeatureGroup>,
}

impl FeatureVector {
    pub fn names(&self) -> Vec<&'static str> {
        catalog()
    }
}

pub(crate) struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub degenerate: bool,
}

/// Population mean, variance and standardized third and fourth moments.
/// Zero variance yields zero skewness and kurtosis with the flag set.
pub(crate) fn moments(values: impl Iterator<Item = f64> + Clone) -> Moments {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return Moments {
            mean: 0.0,
            variance: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
            degenerate: true,
        };
    }
    let nf = n as f64;
    let mean = sum / nf;
    let (m2, m3, m4) = values.fold((0.0, 0.0, 0.0), |(a, b, c), v| {
        let d = v - mean;
        let d2 = d * d;
        (a + d2, b + d2 * d, c + d2 * d2)
    });
    let variance = m2 / nf;
    if variance <= 0.0 {
        return Moments {
            mean,
            variance: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
            degenerate: true,
        };
    }
    Moments {
        mean,
        variance,
        skewness: m3 / nf / variance.powf(1.5),
        kurtosis: m4 / nf / (variance * variance),
        degenerate: false,
    }
}

/// Full feature vector of an event. `fs` is the crop's sampling rate.
pub fn assemble(event: &Event, fs: f64) -> Result<FeatureVector> {
    assemble_groups(event, fs, &FeatureGroup::ALL)
}

/// Feature vector with only `groups` computed; columns of the other groups
/// are NaN.
pub fn assemble_groups(event: &Event, fs: f64, groups: &[FeatureGroup]) -> Result<FeatureVector> {
    let mut degenerate = Vec::new();
    let mut values = vec![f64::NAN; CATALOG_LEN];
    for &group in &FeatureGroup::ALL {
        if !groups.contains(&group) {
            continue;
        }
        let sub = match group {
            FeatureGroup::Time => time_features(&event.crop)?,
            FeatureGroup::Frequency => {
                let (whole, first, second) = crop_spectra(&event.crop, fs);
                freq_features(&whole, (&first, &second))
            }
            FeatureGroup::TfStatistics => tf::tf_statistics(&event.tfd_patch),
            FeatureGroup::TfShape => tf::tf_shape(&event.tfd_patch),
            FeatureGroup::Image => image_features(&event.tfd_patch),
        };
        if sub.degenerate {
            degenerate.push(group);
        }
        // stray overflow (e.g. huge moments) must not leak into clustering
        for (d, v) in values[group.columns()].iter_mut().zip(sub.values) {
            *d = if v.is_finite() { v } else { 0.0 };
        }
    }
    Ok(FeatureVector { values, degenerate })
}

/// Per-column `(mean, population sd)` used by [`zscore`].
pub type ColumnScale = Vec<(f64, f64)>;

/// Standardizes each column to zero mean and unit population variance.
/// Zero-variance columns become all zeros.
pub fn zscore(matrix: &Array2<f64>) -> Result<(Array2<f64>, ColumnScale)> {
    let n = matrix.nrows();
    if n < 2 {
        return param(format!("z-scoring needs at least 2 rows, got {n}"));
    }
    let mut out = matrix.clone();
    let mut scale = Vec::with_capacity(matrix.ncols());
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 && sd.is_finite() {
            col.mapv_inplace(|v| (v - mean) / sd);
        } else {
            col.fill(0.0);
        }
        scale.push((mean, sd));
    }
    Ok((out, scale))
}

/// Stacks feature vectors into a row-per-event matrix.
pub fn to_matrix(vectors: &[FeatureVector]) -> Array2<f64> {
    let cols = vectors.first().map_or(CATALOG_LEN, |v| v.values.len());
    let mut m = Array2::zeros((vectors.len(), cols));
    for (i, v) in vectors.iter().enumerate() {
        m.row_mut(i)
            .iter_mut()
            .zip(&v.values)
            .for_each(|(d, s)| *d = *s);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn catalog_is_frozen() {
        let names = catalog();
        assert_eq!(names.len(), CATALOG_LEN);
        assert_eq!(CATALOG_LEN, 46);
        assert_eq!(names[0], "time_mean");
        assert_eq!(names[12], "freq_spectral_flux");
        assert_eq!(names[18], "tf_mean");
        assert_eq!(names[28], "img_m00");
        assert_eq!(names[45], "lbp_kurtosis");
        let mut uniq = names.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), names.len());
    }

    #[test]
    fn zscore_examples() {
        let (z, s) = zscore(&array![[1.0, 5.0], [3.0, 5.0]]).unwrap();
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(s, vec![(2.0, 1.0), (5.0, 0.0)]);
        assert!(zscore(&array![[1.0, 2.0]]).is_err());
    }
}
