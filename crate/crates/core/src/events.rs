//! Segmentation of events of interest from time-frequency maps: Otsu
//! binarization, connected-component labeling, signal cropping and pooling
//! of duplicates found by overlapping epochs.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::signal::Band;
use crate::stockwell::TfdMatrix;

pub const OTSU_LEVELS: usize = 256;

/// Result of Otsu's method on a magnitude matrix quantized to 256 levels
/// over its own `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuThreshold {
    /// Highest quantization level assigned to the background class.
    pub level: usize,
    /// Magnitude at the upper edge of `level`.
    pub value: f64,
    /// Set when the input is constant; nothing is foreground then.
    pub degenerate: bool,
    min: f64,
    max: f64,
}

impl OtsuThreshold {
    pub fn quantize(&self, v: f64) -> usize {
        quantize(v, self.min, level_scale(self.min, self.max))
    }

    pub fn is_foreground(&self, v: f64) -> bool {
        !self.degenerate && self.quantize(v) > self.level
    }

    pub fn binarize(&self, mag: &Array2<f64>) -> Array2<bool> {
        mag.mapv(|v| self.is_foreground(v))
    }
}

/// Levels per unit magnitude; zero for an empty or constant range.
fn level_scale(min: f64, max: f64) -> f64 {
    if max > min {
        OTSU_LEVELS as f64 / (max - min)
    } else {
        0.0
    }
}

#[inline]
fn quantize(v: f64, min: f64, scale: f64) -> usize {
    // the float-to-int cast truncates toward zero and saturates, which is
    // floor on the non-negative range and clamps the rest
    ((v - min) * scale).clamp(0.0, (OTSU_LEVELS - 1) as f64) as u8 as usize
}

/// 256-bin histogram of quantized magnitudes.
pub fn level_histogram<'a>(
    values: impl IntoIterator<Item = &'a f64> + Clone,
) -> (Vec<u64>, f64, f64) {
    let (min, max) = value_range(values.clone());
    let scale = level_scale(min, max);
    let mut hist = vec![0u64; OTSU_LEVELS];
    for &v in values {
        hist[quantize(v, min, scale)] += 1;
    }
    (hist, min, max)
}

fn value_range<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

/// [`value_range`] over a slice, in independent lanes so it vectorizes.
fn slice_range(values: &[f64]) -> (f64, f64) {
    const LANES: usize = 8;
    let (mut lo, mut hi) = ([f64::INFINITY; LANES], [f64::NEG_INFINITY; LANES]);
    let chunks = values.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            lo[i] = if c[i] < lo[i] { c[i] } else { lo[i] };
            hi[i] = if c[i] > hi[i] { c[i] } else { hi[i] };
        }
    }
    let (l, h) = value_range(tail);
    let lo = lo.iter().fold(l, |a, &b| if b < a { b } else { a });
    let hi = hi.iter().fold(h, |a, &b| if b > a { b } else { a });
    (lo, hi)
}

/// Otsu threshold maximizing between-class variance; ties go to the lower level.
pub fn otsu_threshold(mag: &Array2<f64>) -> OtsuThreshold {
    otsu_from_values(mag.iter())
}

pub(crate) fn otsu_from_values<'a>(
    values: impl IntoIterator<Item = &'a f64> + Clone,
) -> OtsuThreshold {
    let (hist, min, max) = level_histogram(values);
    otsu_from_histogram(&hist, min, max)
}

fn otsu_from_histogram(hist: &[u64], min: f64, max: f64) -> OtsuThreshold {
    let total: u64 = hist.iter().sum();
    let degenerate = total == 0 || !(max > min);
    if degenerate {
        return OtsuThreshold {
            level: 0,
            value: if min.is_finite() { min } else { 0.0 },
            degenerate: true,
            min,
            max,
        };
    }
    let sum_all: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (t, &c) in hist.iter().enumerate().take(OTSU_LEVELS - 1) {
        n0 += c;
        s0 += t as u64 * c;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // w0 w1 (mu0 - mu1)^2 = (s0 n1 - s1 n0)^2 / (N^2 n0 n1)
        let d = s0 as i128 * n1 as i128 - (sum_all - s0) as i128 * n0 as i128;
        let between = (d as f64) * (d as f64) / (n0 as f64 * n1 as f64);
        if between > best.1 {
            best = (t, between);
        }
    }
    let level = best.0;
    OtsuThreshold {
        level,
        value: min + (level + 1) as f64 * (max - min) / OTSU_LEVELS as f64,
        degenerate: false,
        min,
        max,
    }
}

/// Otsu threshold and foreground mask in one quantization pass.
pub fn otsu_binarize(mag: &Array2<f64>) -> (OtsuThreshold, Array2<bool>) {
    let owned;
    let flat: &[f64] = match mag.as_slice() {
        Some(v) => v,
        None => {
            owned = mag.iter().copied().collect::<Vec<_>>();
            &owned
        }
    };
    let (min, max) = slice_range(flat);
    let scale = level_scale(min, max);
    let levels: Vec<u8> = flat
        .iter()
        .map(|&v| quantize(v, min, scale) as u8)
        .collect();
    // split counters avoid a serial dependency on repeated levels
    let mut split = [[0u64; OTSU_LEVELS]; 4];
    let chunks = levels.chunks_exact(4);
    for &q in chunks.remainder() {
        split[0][q as usize] += 1;
    }
    for c in chunks {
        for i in 0..4 {
            split[i][c[i] as usize] += 1;
        }
    }
    let mut hist = [0u64; OTSU_LEVELS];
    for (l, h) in hist.iter_mut().enumerate() {
        *h = split.iter().map(|s| s[l]).sum();
    }
    let t = otsu_from_histogram(&hist, min, max);
    let cut = if t.degenerate {
        u8::MAX as usize + 1
    } else {
        t.level
    };
    let binary: Vec<bool> = levels.iter().map(|&q| q as usize > cut).collect();
    let binary = Array2::from_shape_vec(mag.dim(), binary).expect("shape preserved");
    (t, binary)
}

/// Pixel adjacency used for labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

/// One connected foreground region of a time-frequency map.
///
/// Pixel geometry is in (row, column) = (frequency bin, time sample) units;
/// the calibrated fields are in seconds (relative to the map's first column)
/// and Hz once [`BlobRegion::calibrate`] has been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobRegion {
    pub label: usize,
    pub pixel_count: usize,
    pub centroid_row: f64,
    pub centroid_col: f64,
    /// Inclusive `(row_min, row_max, col_min, col_max)`.
    pub pixel_bbox: (usize, usize, usize, usize),
    pub centroid_t: f64,
    pub centroid_f: f64,
    /// `(t_min, t_max, f_min, f_max)`.
    pub bbox: (f64, f64, f64, f64),
    /// Member cells as `(row, col)`, raster order.
    pub pixels: Vec<(usize, usize)>,
}

/// Running totals of one region, fed one pixel run at a time.
struct RegionAcc {
    count: usize,
    sum_row: f64,
    sum_col: f64,
    bbox: (usize, usize, usize, usize),
    pixels: Option<Vec<(usize, usize)>>,
}

impl RegionAcc {
    fn new(size: usize, with_pixels: bool) -> Self {
        Self {
            count: 0,
            sum_row: 0.0,
            sum_col: 0.0,
            bbox: (usize::MAX, 0, usize::MAX, 0),
            pixels: with_pixels.then(|| Vec::with_capacity(size)),
        }
    }

    fn add_run(&mut self, r: usize, c0: usize, c1: usize) {
        let len = c1 - c0 + 1;
        self.count += len;
        // integer sums, exact in f64 at any realistic map size
        self.sum_row += (r * len) as f64;
        self.sum_col += ((c0 + c1) * len / 2) as f64;
        let bb = self.bbox;
        self.bbox = (bb.0.min(r), bb.1.max(r), bb.2.min(c0), bb.3.max(c1));
        if let Some(px) = &mut self.pixels {
            px.extend((c0..=c1).map(|c| (r, c)));
        }
    }

    fn finish(self, label: usize) -> BlobRegion {
        let n = self.count as f64;
        let (cr, cc) = (self.sum_row / n, self.sum_col / n);
        let bb = self.bbox;
        BlobRegion {
            label,
            pixel_count: self.count,
            centroid_row: cr,
            centroid_col: cc,
            pixel_bbox: bb,
            centroid_t: cc,
            centroid_f: cr,
            bbox: (bb.2 as f64, bb.3 as f64, bb.0 as f64, bb.1 as f64),
            pixels: self.pixels.unwrap_or_default(),
        }
    }
}

impl BlobRegion {
    /// Maps pixel geometry onto the map's time and frequency axes.
    pub fn calibrate(&mut self, tfd: &TfdMatrix) {
        let dt = if tfd.t_axis.len() > 1 {
            tfd.t_axis[1] - tfd.t_axis[0]
        } else {
            0.0
        };
        let t = |c: f64| tfd.t_axis[0] + c * dt;
        let (r0, r1, c0, c1) = self.pixel_bbox;
        self.centroid_t = t(self.centroid_col);
        self.centroid_f = tfd.freq_at(self.centroid_row);
        self.bbox = (t(c0 as f64), t(c1 as f64), tfd.f_axis[r0], tfd.f_axis[r1]);
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Run-based union-find labeling. Regions smaller than `min_area` are
/// dropped; surviving labels are numbered by first appearance in raster order.
pub fn label_components(
    binary: &Array2<bool>,
    connectivity: Connectivity,
    min_area: usize,
) -> Vec<BlobRegion> {
    label_impl(binary, connectivity, min_area, true)
}

/// [`label_components`] without the member pixel lists.
pub fn label_summaries(
    binary: &Array2<bool>,
    connectivity: Connectivity,
    min_area: usize,
) -> Vec<BlobRegion> {
    label_impl(binary, connectivity, min_area, false)
}

fn label_impl(
    binary: &Array2<bool>,
    connectivity: Connectivity,
    min_area: usize,
    with_pixels: bool,
) -> Vec<BlobRegion> {
    let (rows, cols) = binary.dim();
    let owned;
    let flat: &[bool] = match binary.as_slice() {
        Some(v) => v,
        None => {
            owned = binary.iter().copied().collect::<Vec<_>>();
            &owned
        }
    };
    // runs of foreground cells as (row, first col, last col)
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    let mut parent: Vec<usize> = Vec::new();
    // diagonal contact widens the overlap test by one column
    let reach = usize::from(connectivity == Connectivity::Eight);
    let mut prev = 0..0;
    for r in 0..rows {
        let line = &flat[r * cols..(r + 1) * cols];
        let row_start = runs.len();
        let mut c = 0;
        while c < cols {
            if !line[c] {
                c += 1;
                continue;
            }
            let c0 = c;
            while c < cols && line[c] {
                c += 1;
            }
            runs.push((r, c0, c - 1));
            parent.push(runs.len() - 1);
        }
        // merge with overlapping runs of the previous row
        let mut j = prev.start;
        for i in row_start..runs.len() {
            let (_, c0, c1) = runs[i];
            while j < prev.end && runs[j].2 + reach < c0 {
                j += 1;
            }
            let mut k = j;
            while k < prev.end && runs[k].1 <= c1 + reach {
                let (a, b) = (find(&mut parent, i), find(&mut parent, k));
                if a != b {
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    parent[hi] = lo;
                }
                k += 1;
            }
        }
        prev = row_start..runs.len();
    }

    let roots: Vec<usize> = (0..runs.len()).map(|i| find(&mut parent, i)).collect();
    let mut size = vec![0usize; runs.len()];
    for (&root, &(_, c0, c1)) in roots.iter().zip(&runs) {
        size[root] += c1 - c0 + 1;
    }
    let mut root_to_region: Vec<usize> = vec![usize::MAX; runs.len()];
    let mut regions: Vec<RegionAcc> = Vec::new();
    for (&root, &(r, c0, c1)) in roots.iter().zip(&runs) {
        if size[root] < min_area.max(1) {
            continue;
        }
        if root_to_region[root] == usize::MAX {
            root_to_region[root] = regions.len();
            regions.push(RegionAcc::new(size[root], with_pixels));
        }
        regions[root_to_region[root]].add_run(r, c0, c1);
    }
    regions
        .into_iter()
        .enumerate()
        .map(|(i, acc)| acc.finish(i + 1))
        .collect()
}

/// Otsu binarization followed by labeling, calibrated to the map's axes.
pub fn segment(
    tfd: &TfdMatrix,
    connectivity: Connectivity,
    min_area: usize,
) -> (OtsuThreshold, Vec<BlobRegion>) {
    segment_impl(tfd, connectivity, min_area, true)
}

/// [`segment`] without the member pixel lists.
pub fn segment_summaries(
    tfd: &TfdMatrix,
    connectivity: Connectivity,
    min_area: usize,
) -> (OtsuThreshold, Vec<BlobRegion>) {
    segment_impl(tfd, connectivity, min_area, false)
}

fn segment_impl(
    tfd: &TfdMatrix,
    connectivity: Connectivity,
    min_area: usize,
    with_pixels: bool,
) -> (OtsuThreshold, Vec<BlobRegion>) {
    let (threshold, binary) = otsu_binarize(&tfd.mag);
    if threshold.degenerate {
        return (threshold, Vec::new());
    }
    let mut regions = label_impl(&binary, connectivity, min_area, with_pixels);
    for r in &mut regions {
        r.calibrate(tfd);
    }
    (threshold, regions)
}

/// Parameters of event extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractConfig {
    pub min_blob_area: usize,
    pub connectivity: Connectivity,
    /// Total width of the signal crop around each event.
    pub crop_s: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            min_blob_area: 6,
            connectivity: Connectivity::Eight,
            crop_s: 0.2,
        }
    }
}

/// One extracted event of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub channel: usize,
    /// Absolute center time in the recording.
    pub center_s: f64,
    /// Signal around the center, `round(crop_s * fs)` samples.
    pub crop: Vec<f64>,
    pub band: Band,
    /// Map columns under the crop (all analyzed rows); zero outside the epoch.
    pub tfd_patch: Array2<f64>,
    pub region: BlobRegion,
    pub source_epoch: usize,
}

/// Anything that can be pooled across overlapping epochs.
pub trait Poolable {
    fn center_s(&self) -> f64;
    fn band(&self) -> Band;
    fn pixel_count(&self) -> usize;
    /// Final tie breaker for a total order over events.
    fn tie_key(&self) -> usize {
        0
    }
}

impl Poolable for Event {
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
        self.source_epoch
    }
}

/// Absolute sample window `[start, start + len)` of a crop centered at `center_s`.
pub fn crop_window(center_s: f64, fs: f64, crop_s: f64) -> (isize, usize) {
    let len = (crop_s * fs).round() as usize;
    let centre = (center_s * fs).round() as isize;
    (centre - (len / 2) as isize, len)
}

/// Copies `parent[start..start + len]`, zero-filling outside the recording.
pub fn crop_signal(parent: &[f64], start: isize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let idx = start + i as isize;
            if idx >= 0 && (idx as usize) < parent.len() {
                parent[idx as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Map columns `[start, start + len)` in epoch-relative sample units,
/// zero-filled where they leave the epoch.
pub fn tfd_patch(tfd: &TfdMatrix, start: isize, len: usize) -> Array2<f64> {
    let cols = tfd.n_times() as isize;
    let lo = start.clamp(0, cols);
    let hi = (start + len as isize).clamp(lo, cols);
    let before = ((lo - start).max(0) as usize).min(len);
    let after = len - before - (hi - lo) as usize;
    let mut data = Vec::with_capacity(tfd.n_freqs() * len);
    for row in tfd.mag.rows() {
        data.resize(data.len() + before, 0.0);
        match row.as_slice() {
            Some(r) => data.extend_from_slice(&r[lo as usize..hi as usize]),
            None => data.extend(row.iter().skip(lo as usize).take((hi - lo) as usize)),
        }
        data.resize(data.len() + after, 0.0);
    }
    Array2::from_shape_vec((tfd.n_freqs(), len), data).expect("rows of equal length")
}

/// Builds the event for one segmented region.
///
/// `parent` is the full channel trace the epoch was cut from and
/// `epoch_start` the epoch's first absolute sample.
pub fn event_from_region(
    tfd: &TfdMatrix,
    region: BlobRegion,
    parent: &[f64],
    epoch_start: usize,
    epoch_index: usize,
    fs: f64,
    crop_s: f64,
) -> Event {
    let center_s = epoch_start as f64 / fs + region.centroid_t;
    let (start, len) = crop_window(center_s, fs, crop_s);
    Event {
        channel: tfd.source_epoch.0,
        center_s,
        crop: crop_signal(parent, start, len),
        band: Band::of_frequency(region.centroid_f),
        tfd_patch: tfd_patch(tfd, start - epoch_start as isize, len),
        region,
        source_epoch: epoch_index,
    }
}

/// Segments `tfd` and turns every surviving blob into an event.
pub fn extract_events(
    tfd: &TfdMatrix,
    parent: &[f64],
    epoch_start: usize,
    epoch_index: usize,
    fs: f64,
    config: &ExtractConfig,
) -> Vec<Event> {
    let (_, regions) = segment(tfd, config.connectivity, config.min_blob_area);
    regions
        .into_iter()
        .map(|r| event_from_region(tfd, r, parent, epoch_start, epoch_index, fs, config.crop_s))
        .collect()
}

/// Total order used for pooling: time, band, larger blob first, tie key.
pub fn pool_order<T: Poolable>(a: &T, b: &T) -> Ordering {
    a.center_s()
        .total_cmp(&b.center_s())
        .then(a.band().cmp(&b.band()))
        .then(b.pixel_count().cmp(&a.pixel_count()))
        .then(a.tie_key().cmp(&b.tie_key()))
}

/// Incremental form of [`pool_and_dedup`]. Events must be pushed in
/// [`pool_order`]; every event handed back is final.
#[derive(Debug)]
pub struct Pooler<T> {
    radius: f64,
    kept: [Option<T>; 2],
}

fn band_slot(b: Band) -> usize {
    match b {
        Band::Ripple => 0,
        Band::FastRipple => 1,
    }
}

impl<T: Poolable> Pooler<T> {
    pub fn new(merge_radius_s: f64) -> Self {
        Self {
            radius: merge_radius_s,
            kept: [None, None],
        }
    }

    /// Merges `ev` into the kept event of its band or starts a new one,
    /// returning the event it displaced for good.
    pub fn push(&mut self, ev: T) -> Option<T> {
        let k = &mut self.kept[band_slot(ev.band())];
        match k {
            Some(cur) if ev.center_s() - cur.center_s() <= self.radius => {
                if ev.pixel_count() > cur.pixel_count() {
                    *cur = ev;
                }
                None
            }
            _ => k.replace(ev),
        }
    }

    /// Releases kept events that no event centred at or after `horizon_s`
    /// could merge with.
    pub fn release_before(&mut self, horizon_s: f64) -> Vec<T> {
        let radius = self.radius;
        self.kept
            .iter_mut()
            .filter_map(|k| match k {
                Some(cur) if horizon_s - cur.center_s() > radius => k.take(),
                _ => None,
            })
            .collect()
    }

    pub fn finish(self) -> Vec<T> {
        self.kept.into_iter().flatten().collect()
    }
}

/// Sorts events by time and merges, per band, any event within
/// `merge_radius_s` of the currently kept one, keeping the larger blob.
/// Output centers of one band are strictly more than the radius apart.
pub fn pool_and_dedup<T: Poolable>(mut events: Vec<T>, merge_radius_s: f64) -> Vec<T> {
    events.sort_by(pool_order);
    let mut pooler = Pooler::new(merge_radius_s);
    let mut out: Vec<T> = events
        .into_iter()
        .filter_map(|ev| pooler.push(ev))
        .collect();
    out.extend(pooler.finish());
    out.sort_by(pool_order);
    out
}
