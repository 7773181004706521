//! The full detector: bandpass, epoch, Stockwell map, blob segmentation,
//! pooling, features, clustering and HFO labeling.
//!
//! Extraction runs in two passes so that time-frequency maps never need to
//! be held for the whole recording. The first pass segments every epoch and
//! keeps only blob geometry. After pooling, the second pass recomputes the
//! maps of epochs that still own an event and computes its features.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{hierarchical_cluster, label_clusters, ClusterResult, LinkageRegistry};
use crate::error::{param, Error, Result};
use crate::events::{
    event_from_region, pool_order, segment_summaries, BlobRegion, Connectivity, Poolable, Pooler,
};
use crate::features::{self, FeatureGroup, FeatureVector};
use crate::metrics::Detection;
use crate::signal::{epoch_starts, Band, FirBandpass, FrequencyBand, SignalRecord};
use crate::stockwell::{StockwellPlan, TfdMatrix};

/// Which bands are analyzed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    /// Ripple and fast ripple analyzed independently.
    #[default]
    Both,
    Ripple,
    FastRipple,
    /// One 80-500 Hz analysis; events are split by centroid frequency.
    Full,
}

impl BandMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BandMode::Both => "both",
            BandMode::Ripple => "ripple",
            BandMode::FastRipple => "fast_ripple",
            BandMode::Full => "full",
        }
    }
}

impl fmt::Display for BandMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(BandMode::Both),
            "ripple" => Ok(BandMode::Ripple),
            "fast_ripple" => Ok(BandMode::FastRipple),
            "full" => Ok(BandMode::Full),
            other => Err(Error::Config(format!("unknown band mode '{other}'"))),
        }
    }
}

/// Feature subset used when none is configured.
pub const DEFAULT_FEATURES: &[&str] = &["freq_peak_power", "freq_iwbw", "tf_skewness"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub band_mode: BandMode,
    pub ripple_lo_hz: f64,
    pub ripple_hi_hz: f64,
    pub fast_ripple_lo_hz: f64,
    pub fast_ripple_hi_hz: f64,
    pub epoch_window_s: f64,
    pub epoch_step_s: f64,
    pub min_blob_area: usize,
    pub connectivity: Connectivity,
    pub merge_radius_s: f64,
    pub crop_s: f64,
    pub linkage: String,
    pub n_groups: usize,
    /// Feature names used for clustering; empty means [`DEFAULT_FEATURES`].
    pub features: Vec<String>,
    /// Compute the whole catalog, not just the groups the clustering
    /// features belong to.
    pub all_features: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            band_mode: BandMode::Both,
            ripple_lo_hz: 80.0,
            ripple_hi_hz: 250.0,
            fast_ripple_lo_hz: 250.0,
            fast_ripple_hi_hz: 500.0,
            epoch_window_s: 1.0,
            epoch_step_s: 0.5,
            min_blob_area: 6,
            connectivity: Connectivity::Eight,
            merge_radius_s: 0.1,
            crop_s: 0.2,
            linkage: "ward".into(),
            n_groups: 2,
            features: Vec::new(),
            all_features: false,
        }
    }
}

impl DetectorConfig {
    /// Frequency ranges to run the segmentation over.
    pub fn analysis_bands(&self) -> Result<Vec<FrequencyBand>> {
        let r = FrequencyBand::new(self.ripple_lo_hz, self.ripple_hi_hz)?;
        let fr = FrequencyBand::new(self.fast_ripple_lo_hz, self.fast_ripple_hi_hz)?;
        Ok(match self.band_mode {
            BandMode::Both => vec![r, fr],
            BandMode::Ripple => vec![r],
            BandMode::FastRipple => vec![fr],
            BandMode::Full => vec![FrequencyBand::new(r.lo, fr.hi)?],
        })
    }

    /// Catalog indices of the clustering features.
    pub fn feature_indices(&self) -> Result<Vec<usize>> {
        let names: Vec<&str> = if self.features.is_empty() {
            DEFAULT_FEATURES.to_vec()
        } else {
            self.features.iter().map(String::as_str).collect()
        };
        names
            .iter()
            .map(|n| {
                features::feature_index(n)
                    .ok_or_else(|| Error::Config(format!("unknown feature '{n}'")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis_bands()?;
        self.feature_indices()?;
        if !(self.epoch_window_s > 0.0
            && self.epoch_step_s > 0.0
            && self.epoch_step_s <= self.epoch_window_s)
        {
            return param("epoch step must lie in (0, window]");
        }
        if self.min_blob_area == 0 {
            return param("min_blob_area must be at least 1");
        }
        if !(self.merge_radius_s >= 0.0) || !(self.crop_s > 0.0) {
            return param("merge radius must be non-negative and crop width positive");
        }
        if self.n_groups < 2 {
            return param("n_groups must be at least 2");
        }
        if LinkageRegistry::with_builtins()
            .get(&self.linkage)
            .is_none()
        {
            return Err(Error::Config(format!("unknown linkage '{}'", self.linkage)));
        }
        Ok(())
    }
}

/// Blob geometry kept between the passes.
#[derive(Debug, Clone)]
struct Candidate {
    analysis: usize,
    epoch: usize,
    center_s: f64,
    band: Band,
    /// Region geometry without its pixel list.
    region: BlobRegion,
}

impl Poolable for Candidate {
    fn center_s(&self) -> f64 {
        self.center_s
    }
    fn band(&self) -> Band {
        self.band
    }
    fn pixel_count(&self) -> usize {
        self.region.pixel_count
    }
    fn tie_key(&self) -> usize {
        (self.analysis << 48) | (self.epoch << 20) | self.region.label
    }
}

/// One pooled event with its features and cluster assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEvent {
    pub channel: usize,
    pub center_s: f64,
    pub band: Band,
    pub features: FeatureVector,
    /// Signal crop used for HFO labeling.
    pub crop: Vec<f64>,
    pub pixel_count: usize,
    /// Group within its band, if the band could be clustered.
    pub cluster: Option<usize>,
    pub is_hfo: bool,
}

/// Wall-clock seconds per stage. Kept out of deterministic outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub extraction_s: f64,
    pub clustering_s: f64,
}

#[derive(Debug, Clone)]
pub struct DetectionOutput {
    /// Every pooled event sorted by band, channel and time; indices are
    /// the feature-table rows.
    pub events: Vec<PooledEvent>,
    pub clusters: BTreeMap<Band, ClusterResult>,
    pub feature_names: Vec<&'static str>,
    pub timings: Timings,
}

impl DetectionOutput {
    /// Events of the HFO groups.
    pub fn detections(&self) -> Vec<Detection> {
        self.events
            .iter()
            .filter(|e| e.is_hfo)
            .map(|e| Detection {
                channel: e.channel,
                center_s: e.center_s,
                band: e.band,
            })
            .collect()
    }

    /// Raw feature matrix (full catalog) in event order. Columns of groups
    /// that were not computed hold NaN.
    pub fn feature_matrix(&self) -> Array2<f64> {
        let v: Vec<FeatureVector> = self.events.iter().map(|e| e.features.clone()).collect();
        features::to_matrix(&v)
    }
}

struct Analysis {
    plan: StockwellPlan,
    filter: FirBandpass,
}

/// Maps of the most recent epochs; pooled events are finalized at most
/// two epochs after the one they were found in.
const RING: usize = 4;

struct ChannelCtx<'a> {
    channel: usize,
    analyses: &'a [Analysis],
    filtered: Vec<Vec<f64>>,
    starts: &'a [usize],
    window: usize,
    fs: f64,
    groups: &'a [FeatureGroup],
    config: &'a DetectorConfig,
}

impl ChannelCtx<'_> {
    fn finalize(
        &self,
        c: Candidate,
        ring: &VecDeque<(usize, Vec<TfdMatrix>)>,
    ) -> Result<PooledEvent> {
        let (_, maps) = ring
            .iter()
            .find(|(e, _)| *e == c.epoch)
            .ok_or_else(|| Error::Data(format!("map of epoch {} no longer cached", c.epoch)))?;
        let pixel_count = c.region.pixel_count;
        let ev = event_from_region(
            &maps[c.analysis],
            c.region,
            &self.filtered[c.analysis],
            self.starts[c.epoch],
            c.epoch,
            self.fs,
            self.config.crop_s,
        );
        Ok(PooledEvent {
            channel: self.channel,
            center_s: ev.center_s,
            band: ev.band,
            features: features::assemble_groups(&ev, self.fs, self.groups)?,
            crop: ev.crop,
            pixel_count,
            cluster: None,
            is_hfo: false,
        })
    }

    /// Segments every epoch, pools duplicates across overlapping epochs
    /// and computes features of the pooled events.
    fn run(&self) -> Result<Vec<PooledEvent>> {
        let mut ring: VecDeque<(usize, Vec<TfdMatrix>)> = VecDeque::with_capacity(RING + 1);
        let mut pending: Vec<Candidate> = Vec::new();
        let mut pooler = Pooler::new(self.config.merge_radius_s);
        let mut out = Vec::new();
        for (epoch, &s) in self.starts.iter().enumerate() {
            let maps = self
                .analyses
                .iter()
                .zip(&self.filtered)
                .map(|(a, x)| a.plan.transform(&x[s..s + self.window], (self.channel, s)))
                .collect::<Result<Vec<_>>>()?;
            for (analysis, tfd) in maps.iter().enumerate() {
                let (_, regions) =
                    segment_summaries(tfd, self.config.connectivity, self.config.min_blob_area);
                pending.extend(regions.into_iter().map(|r| Candidate {
                    analysis,
                    epoch,
                    center_s: s as f64 / self.fs + r.centroid_t,
                    band: Band::of_frequency(r.centroid_f),
                    region: r,
                }));
            }
            ring.push_back((epoch, maps));
            if ring.len() > RING {
                ring.pop_front();
            }

            // later epochs only add events at or after the next epoch start
            let horizon = self
                .starts
                .get(epoch + 1)
                .map_or(f64::INFINITY, |&n| n as f64 / self.fs);
            let (mut ready, rest): (Vec<_>, Vec<_>) =
                pending.into_iter().partition(|c| c.center_s < horizon);
            pending = rest;
            ready.sort_by(pool_order);
            for c in ready {
                if let Some(done) = pooler.push(c) {
                    out.push(self.finalize(done, &ring)?);
                }
            }
            for done in pooler.release_before(horizon) {
                out.push(self.finalize(done, &ring)?);
            }
        }
        let rest = pooler.finish();
        for done in rest {
            out.push(self.finalize(done, &ring)?);
        }
        Ok(out)
    }
}

/// Runs the detector on a recording.
pub fn detect(record: &SignalRecord, config: &DetectorConfig) -> Result<DetectionOutput> {
    config.validate()?;
    let fs = record.fs();
    let bands = config.analysis_bands()?;
    for b in &bands {
        b.check_fs(fs)?;
    }
    let window = (config.epoch_window_s * fs).round() as usize;
    let step = (config.epoch_step_s * fs).round() as usize;
    let starts = epoch_starts(record.n_samples(), window, step);
    let analyses: Vec<Analysis> = bands
        .iter()
        .map(|&band| {
            Ok(Analysis {
                plan: StockwellPlan::new(window, fs, band)?,
                filter: FirBandpass::design(fs, band)?,
            })
        })
        .collect::<Result<_>>()?;

    let subset = config.feature_indices()?;
    let groups = if config.all_features {
        FeatureGroup::ALL.to_vec()
    } else {
        features::groups_for(&subset)
    };

    let t0 = Instant::now();
    let mut events: Vec<PooledEvent> = (0..record.n_channels())
        .into_par_iter()
        .map(|channel| {
            ChannelCtx {
                channel,
                analyses: &analyses,
                filtered: analyses
                    .iter()
                    .map(|a| a.filter.apply(record.channel(channel)))
                    .collect(),
                starts: &starts,
                window,
                fs,
                groups: &groups,
                config,
            }
            .run()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    events.sort_by(|x, y| {
        x.band
            .cmp(&y.band)
            .then(x.channel.cmp(&y.channel))
            .then(x.center_s.total_cmp(&y.center_s))
    });
    let extraction_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let registry = LinkageRegistry::with_builtins();
    let linkage = registry
        .get(&config.linkage)
        .ok_or_else(|| Error::Config(format!("unknown linkage '{}'", config.linkage)))?;
    let mut clusters = BTreeMap::new();
    for band in Band::ALL {
        let idx: Vec<usize> = (0..events.len())
            .filter(|&i| events[i].band == band)
            .collect();
        let rows: Vec<&[f64]> = idx
            .iter()
            .map(|&i| events[i].features.values.as_slice())
            .collect();
        let crops: Vec<&[f64]> = idx.iter().map(|&i| events[i].crop.as_slice()).collect();
        if let Some(result) = classify(&rows, &subset, &crops, linkage, config.n_groups)? {
            for (k, &i) in idx.iter().enumerate() {
                events[i].cluster = Some(result.assignment[k]);
                events[i].is_hfo = result.is_hfo(k);
            }
            clusters.insert(band, result);
        }
    }
    Ok(DetectionOutput {
        events,
        clusters,
        feature_names: subset.iter().map(|&i| features::catalog()[i]).collect(),
        timings: Timings {
            extraction_s,
            clustering_s: t1.elapsed().as_secs_f64(),
        },
    })
}

/// Z-scores the chosen feature columns, clusters and labels the groups.
/// Returns `None` when there are too few events to form `n_groups` groups.
pub fn classify<R: AsRef<[f64]>, C: AsRef<[f64]>>(
    rows: &[R],
    subset: &[usize],
    crops: &[C],
    linkage: &dyn crate::clustering::Linkage,
    n_groups: usize,
) -> Result<Option<ClusterResult>> {
    if rows.len() < n_groups.max(2) {
        return Ok(None);
    }
    let m = Array2::from_shape_fn((rows.len(), subset.len()), |(i, j)| {
        rows[i].as_ref()[subset[j]]
    });
    let (z, _) = features::zscore(&m)?;
    let result = hierarchical_cluster(&z, n_groups, linkage)?;
    label_clusters(result, crops).map(Some)
}
