//! Scoring of detections against reference annotations: event matching,
//! sensitivity / precision / F-score, permutation tests with bootstrap
//! confidence intervals, per-channel rates and the resection rate ratio.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, EventKind};
use crate::error::{param, Result};
use crate::signal::Band;

/// Width of the window centred on each reference event.
pub const DEFAULT_CI_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;
    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Matching of one channel's detections to its references.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub counts: MatchCounts,
    /// Per detection (input order): whether it consumed a reference.
    pub detection_matched: Vec<bool>,
    /// Per reference (input order): whether it was detected.
    pub reference_matched: Vec<bool>,
}

/// One-to-one matching of detection times to reference windows
/// `[r - ci_s/2, r + ci_s/2]`.
///
/// Detections are swept in time order and each takes the earliest-ending
/// free window that contains it, which yields a maximum matching.
pub fn match_events(detected: &[f64], references: &[f64], ci_s: f64) -> Matching {
    let half = ci_s / 2.0;
    let mut det_order: Vec<usize> = (0..detected.len()).collect();
    det_order.sort_by(|&a, &b| detected[a].total_cmp(&detected[b]).then(a.cmp(&b)));
    let mut ref_order: Vec<usize> = (0..references.len()).collect();
    ref_order.sort_by(|&a, &b| references[a].total_cmp(&references[b]).then(a.cmp(&b)));

    let mut detection_matched = vec![false; detected.len()];
    let mut reference_matched = vec![false; references.len()];
    let mut next = 0;
    for &d in &det_order {
        let t = detected[d];
        while next < ref_order.len() && references[ref_order[next]] + half < t {
            next += 1;
        }
        if next < ref_order.len() && references[ref_order[next]] - half <= t {
            detection_matched[d] = true;
            reference_matched[ref_order[next]] = true;
            next += 1;
        }
    }
    let tp = reference_matched.iter().filter(|m| **m).count();
    Matching {
        counts: MatchCounts {
            tp,
            fp: detected.len() - tp,
            fn_: references.len() - tp,
        },
        detection_matched,
        reference_matched,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub sensitivity: f64,
    pub precision: f64,
    pub f_score: f64,
}

/// Sensitivity, precision and their harmonic mean; empty denominators give 0.
pub fn scores(c: MatchCounts) -> Scores {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f_score = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Scores {
        sensitivity,
        precision,
        f_score,
    }
}

/// A detected event as scored by the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub channel: usize,
    pub center_s: f64,
    pub band: Band,
}

fn by_channel<T>(items: impl Iterator<Item = (usize, T)>) -> BTreeMap<usize, Vec<T>> {
    let mut map: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    for (ch, v) in items {
        map.entry(ch).or_default().push(v);
    }
    map
}

/// Detections of `band` against references of `kind`, matched per channel.
pub fn score_band(
    detections: &[Detection],
    references: &[Annotation],
    band: Band,
    kind: EventKind,
    ci_s: f64,
) -> MatchCounts {
    let kinds: Vec<EventKind> = references.iter().map(|r| r.kind).collect();
    score_with_kinds(detections, references, &kinds, band, kind, ci_s)
}

fn score_with_kinds(
    detections: &[Detection],
    references: &[Annotation],
    kinds: &[EventKind],
    band: Band,
    kind: EventKind,
    ci_s: f64,
) -> MatchCounts {
    let dets = by_channel(
        detections
            .iter()
            .filter(|d| d.band == band)
            .map(|d| (d.channel, d.center_s)),
    );
    let refs = by_channel(
        references
            .iter()
            .zip(kinds)
            .filter(|(_, k)| **k == kind)
            .map(|(r, _)| (r.channel, r.center_s)),
    );
    let channels: std::collections::BTreeSet<usize> =
        dets.keys().chain(refs.keys()).copied().collect();
    channels
        .into_iter()
        .map(|ch| {
            match_events(
                dets.get(&ch).map_or(&[][..], Vec::as_slice),
                refs.get(&ch).map_or(&[][..], Vec::as_slice),
                ci_s,
            )
            .counts
        })
        .fold(MatchCounts::default(), |a, b| a + b)
}

/// Outcome of a permutation test on one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub counts: MatchCounts,
    pub scores: Scores,
    /// `(1 + #{null F >= observed F}) / (n_perm + 1)`.
    pub p_value: f64,
    /// 2.5th and 97.5th percentiles of bootstrap F-scores.
    pub f_ci: (f64, f64),
    pub n_perm: usize,
    /// Set when fewer than 100 permutations were run.
    pub low_permutation_count: bool,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Permutation test of the F-score of `band` detections against references
/// of the matching kind. The null distribution shuffles the kind labels of
/// all references (ripple, fast ripple, spike) and rescores.
///
/// Every permutation and bootstrap draw uses its own ChaCha stream derived
/// from `seed`, so results do not depend on thread scheduling.
pub fn permutation_test(
    detections: &[Detection],
    references: &[Annotation],
    band: Band,
    n_perm: usize,
    ci_s: f64,
    seed: u64,
) -> Result<PermutationResult> {
    if n_perm == 0 {
        return param("permutation test needs at least one permutation");
    }
    let kind = EventKind::of_band(band);
    let counts = score_band(detections, references, band, kind, ci_s);
    let observed = scores(counts);
    let kinds: Vec<EventKind> = references.iter().map(|r| r.kind).collect();

    let exceed = (0..n_perm as u64)
        .into_par_iter()
        .map(|i| {
            let mut shuffled = kinds.clone();
            shuffled.shuffle(&mut rng_for(seed, 2 * i));
            let null = scores(score_with_kinds(
                detections, references, &shuffled, band, kind, ci_s,
            ));
            usize::from(null.f_score >= observed.f_score)
        })
        .sum::<usize>();

    // bootstrap over per-event outcomes
    let outcomes: Vec<u8> = [(0u8, counts.tp), (1, counts.fp), (2, counts.fn_)]
        .iter()
        .flat_map(|&(o, n)| std::iter::repeat_n(o, n))
        .collect();
    let mut boot: Vec<f64> = (0..n_perm as u64)
        .into_par_iter()
        .map(|i| {
            if outcomes.is_empty() {
                return 0.0;
            }
            let mut rng = rng_for(seed, 2 * i + 1);
            let mut c = MatchCounts::default();
            for _ in 0..outcomes.len() {
                match outcomes[rng.random_range(0..outcomes.len())] {
                    0 => c.tp += 1,
                    1 => c.fp += 1,
                    _ => c.fn_ += 1,
                }
            }
            scores(c).f_score
        })
        .collect();
    boot.sort_by(f64::total_cmp);

    Ok(PermutationResult {
        counts,
        scores: observed,
        p_value: (1 + exceed) as f64 / (n_perm + 1) as f64,
        f_ci: (percentile(&boot, 0.025), percentile(&boot, 0.975)),
        n_perm,
        low_permutation_count: n_perm < 100,
    })
}

/// Event rate of one channel in one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEntry {
    pub channel: usize,
    pub band: Band,
    pub count: usize,
    pub duration_min: f64,
    /// Events per minute.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub entries: Vec<RateEntry>,
    /// Resected flag per channel index.
    pub resected: Vec<bool>,
}

impl RateTable {
    /// Counts detections per channel and band over a recording of
    /// `duration_s` seconds.
    pub fn from_detections(
        detections: &[Detection],
        resected: &[bool],
        duration_s: f64,
    ) -> Result<Self> {
        if !(duration_s > 0.0) {
            return param(format!("duration must be positive, got {duration_s}"));
        }
        let duration_min = duration_s / 60.0;
        let mut entries = Vec::new();
        for channel in 0..resected.len() {
            for band in Band::ALL {
                let count = detections
                    .iter()
                    .filter(|d| d.channel == channel && d.band == band)
                    .count();
                entries.push(RateEntry {
                    channel,
                    band,
                    count,
                    duration_min,
                    rate: count as f64 / duration_min,
                });
            }
        }
        Ok(Self {
            entries,
            resected: resected.to_vec(),
        })
    }
}

/// Rate ratio, or the absence of events in the band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "value")]
pub enum RatioOutcome {
    Value(f64),
    NoEvents,
}

impl RatioOutcome {
    pub fn value(self) -> Option<f64> {
        match self {
            RatioOutcome::Value(v) => Some(v),
            RatioOutcome::NoEvents => None,
        }
    }
}

/// `(sum of resected rates - sum of non-resected rates) / sum of all rates`.
pub fn rate_ratio(rates: &RateTable, band: Band) -> RatioOutcome {
    let (mut ra, mut non) = (0.0, 0.0);
    for e in rates.entries.iter().filter(|e| e.band == band) {
        if rates.resected.get(e.channel).copied().unwrap_or(false) {
            ra += e.rate;
        } else {
            non += e.rate;
        }
    }
    let total = ra + non;
    if total > 0.0 {
        RatioOutcome::Value((ra - non) / total)
    } else {
        RatioOutcome::NoEvents
    }
}
