//! Wrapper feature selection by sequential forward floating search, and
//! point-biserial correlation ranking of features against labels.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, EventKind};
use crate::clustering::{hierarchical_cluster, Linkage};
use crate::error::{param, Error, Result};
use crate::features::zscore;
use crate::metrics::{
    match_events, score_band, scores, Detection, MatchCounts, Scores, DEFAULT_CI_S,
};
use crate::pipeline::{classify, DetectionOutput};
use crate::signal::Band;

/// Minimum gain for a step to count as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-6;
pub const DEFAULT_D_MAX: usize = 15;

/// Which score a subset is judged by.
pub trait Objective: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, s: &Scores) -> f64;
}

pub struct FScore;
pub struct Sensitivity;
pub struct Precision;

impl Objective for FScore {
    fn name(&self) -> &'static str {
        "f_score"
    }
    fn value(&self, s: &Scores) -> f64 {
        s.f_score
    }
}

impl Objective for Sensitivity {
    fn name(&self) -> &'static str {
        "sensitivity"
    }
    fn value(&self, s: &Scores) -> f64 {
        s.sensitivity
    }
}

impl Objective for Precision {
    fn name(&self) -> &'static str {
        "precision"
    }
    fn value(&self, s: &Scores) -> f64 {
        s.precision
    }
}

/// Objectives selectable by name.
pub struct ObjectiveRegistry {
    entries: BTreeMap<&'static str, Box<dyn Objective>>,
}

impl ObjectiveRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(Box::new(FScore));
        r.register(Box::new(Sensitivity));
        r.register(Box::new(Precision));
        r
    }

    pub fn register(&mut self, o: Box<dyn Objective>) {
        self.entries.insert(o.name(), o);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Objective> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

/// Score of a feature subset (catalog column indices, ascending).
pub trait SubsetCost: Sync {
    fn n_features(&self) -> usize;
    fn evaluate(&self, subset: &[usize]) -> Result<f64>;
}

/// Clusters a labeled matrix into two groups and scores the better-matching
/// group as the positive class against the labels.
pub struct LabeledCost<'a> {
    matrix: &'a Array2<f64>,
    labels: &'a [bool],
    linkage: &'a dyn Linkage,
    objective: &'a dyn Objective,
}

impl<'a> LabeledCost<'a> {
    pub fn new(
        matrix: &'a Array2<f64>,
        labels: &'a [bool],
        linkage: &'a dyn Linkage,
        objective: &'a dyn Objective,
    ) -> Result<Self> {
        if labels.len() != matrix.nrows() {
            return param(format!(
                "{} labels for {} rows",
                labels.len(),
                matrix.nrows()
            ));
        }
        check_two_classes(labels)?;
        Ok(Self {
            matrix,
            labels,
            linkage,
            objective,
        })
    }
}

fn check_two_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Data("labels contain a single class".into()));
    }
    Ok(())
}

impl SubsetCost for LabeledCost<'_> {
    fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    fn evaluate(&self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Ok(0.0);
        }
        let m = self.matrix.select(ndarray::Axis(1), subset);
        let (z, _) = zscore(&m)?;
        let result = hierarchical_cluster(&z, 2, self.linkage)?;
        let mut best = 0.0f64;
        for g in 0..2 {
            let mut c = MatchCounts::default();
            for (&a, &l) in result.assignment.iter().zip(self.labels) {
                match (a == g, l) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
            best = best.max(self.objective.value(&scores(c)));
        }
        Ok(best)
    }
}

/// Pooled events of one recording with their ground truth, ready for
/// repeated clustering.
#[derive(Debug, Clone)]
pub struct LabeledRecording {
    /// Full-catalog feature rows.
    pub features: Vec<Vec<f64>>,
    pub crops: Vec<Vec<f64>>,
    pub events: Vec<Detection>,
    pub references: Vec<Annotation>,
}

impl LabeledRecording {
    /// Pooled events of a detector run. Run with `all_features` so every
    /// catalog column is populated.
    pub fn from_output(out: &DetectionOutput, references: &[Annotation]) -> Self {
        Self {
            features: out
                .events
                .iter()
                .map(|e| e.features.values.clone())
                .collect(),
            crops: out.events.iter().map(|e| e.crop.clone()).collect(),
            events: out
                .events
                .iter()
                .map(|e| Detection {
                    channel: e.channel,
                    center_s: e.center_s,
                    band: e.band,
                })
                .collect(),
            references: references.to_vec(),
        }
    }

    /// Whether each event matches a reference of its band's kind within a
    /// window of `ci_s` seconds.
    pub fn labels(&self, ci_s: f64) -> Vec<bool> {
        let mut out = vec![false; self.events.len()];
        let mut groups: BTreeMap<(usize, Band), Vec<usize>> = BTreeMap::new();
        for (i, e) in self.events.iter().enumerate() {
            groups.entry((e.channel, e.band)).or_default().push(i);
        }
        for ((channel, band), mut idx) in groups {
            idx.sort_by(|&a, &b| self.events[a].center_s.total_cmp(&self.events[b].center_s));
            let times: Vec<f64> = idx.iter().map(|&i| self.events[i].center_s).collect();
            let refs: Vec<f64> = self
                .references
                .iter()
                .filter(|r| r.channel == channel && r.kind == EventKind::of_band(band))
                .map(|r| r.center_s)
                .collect();
            let m = match_events(&times, &refs, ci_s);
            for (k, &i) in idx.iter().enumerate() {
                out[i] = m.detection_matched[k];
            }
        }
        out
    }
}

/// Runs the detector's clustering and labeling on a subset and scores the
/// HFO groups against reference annotations, summed over recordings and
/// bands.
pub struct PipelineCost<'a> {
    recordings: &'a [LabeledRecording],
    linkage: &'a dyn Linkage,
    objective: &'a dyn Objective,
    n_groups: usize,
    ci_s: f64,
}

impl<'a> PipelineCost<'a> {
    pub fn new(
        recordings: &'a [LabeledRecording],
        linkage: &'a dyn Linkage,
        objective: &'a dyn Objective,
    ) -> Result<Self> {
        let n_features = recordings
            .iter()
            .flat_map(|r| r.features.first())
            .map(Vec::len)
            .next()
            .ok_or_else(|| Error::Data("no events to select features on".into()))?;
        if recordings.iter().any(|r| {
            r.features.iter().any(|f| f.len() != n_features) || r.crops.len() != r.features.len()
        }) {
            return Err(Error::Data("inconsistent feature rows".into()));
        }
        if !recordings
            .iter()
            .any(|r| r.references.iter().any(|a| a.kind != EventKind::Spike))
        {
            return Err(Error::Data("references contain no HFO events".into()));
        }
        Ok(Self {
            recordings,
            linkage,
            objective,
            n_groups: 2,
            ci_s: DEFAULT_CI_S,
        })
    }

    /// Detections produced with `subset` on one recording.
    pub fn detections(&self, rec: &LabeledRecording, subset: &[usize]) -> Result<Vec<Detection>> {
        let mut out = Vec::new();
        for band in Band::ALL {
            let idx: Vec<usize> = (0..rec.events.len())
                .filter(|&i| rec.events[i].band == band)
                .collect();
            let rows: Vec<&[f64]> = idx.iter().map(|&i| rec.features[i].as_slice()).collect();
            let crops: Vec<&[f64]> = idx.iter().map(|&i| rec.crops[i].as_slice()).collect();
            if let Some(r) = classify(&rows, subset, &crops, self.linkage, self.n_groups)? {
                out.extend(
                    idx.iter()
                        .enumerate()
                        .filter(|(k, _)| r.is_hfo(*k))
                        .map(|(_, &i)| rec.events[i]),
                );
            }
        }
        Ok(out)
    }
}

impl SubsetCost for PipelineCost<'_> {
    fn n_features(&self) -> usize {
        self.recordings
            .iter()
            .flat_map(|r| r.features.first())
            .map(Vec::len)
            .next()
            .unwrap_or(0)
    }

    fn evaluate(&self, subset: &[usize]) -> Result<f64> {
        if subset.is_empty() {
            return Ok(0.0);
        }
        let mut total = MatchCounts::default();
        for rec in self.recordings {
            let dets = self.detections(rec, subset)?;
            for band in Band::ALL {
                total = total
                    + score_band(
                        &dets,
                        &rec.references,
                        band,
                        EventKind::of_band(band),
                        self.ci_s,
                    );
            }
        }
        Ok(self.objective.value(&scores(total)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub action: StepAction,
    pub feature: String,
    pub score: f64,
    pub subset_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<SelectionStep>,
    pub best_subset: Vec<String>,
    pub best_score: f64,
}

fn best_candidate(
    cost: &dyn SubsetCost,
    candidates: Vec<(usize, Vec<usize>)>,
) -> Result<Option<(usize, Vec<usize>, f64)>> {
    let scored: Vec<(usize, Vec<usize>, f64)> = candidates
        .into_par_iter()
        .map(|(f, s)| cost.evaluate(&s).map(|v| (f, s, v)))
        .collect::<Result<_>>()?;
    // strictly greater keeps the earliest feature in canonical order
    Ok(scored.into_iter().fold(None, |best, c| match best {
        Some(b) if c.2 <= b.2 => Some(b),
        _ => Some(c),
    }))
}

/// Sequential forward floating selection.
///
/// Each round adds the feature whose inclusion scores best, then removes
/// features (never the one just added) while a removal strictly improves
/// the score. Every accepted step must beat the current score by
/// [`IMPROVEMENT_EPS`]; the search stops at `d_max` features or when no
/// addition improves. Ties go to the earlier feature in `names` order.
pub fn sffs(cost: &dyn SubsetCost, names: &[&str], d_max: usize) -> Result<SelectionTrace> {
    let n = cost.n_features();
    if names.len() != n {
        return param(format!("{} names for {n} features", names.len()));
    }
    if d_max == 0 || d_max > n {
        return param(format!("d_max must be in 1..={n}, got {d_max}"));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut current = 0.0;
    let mut steps = Vec::new();
    let mut best_subset: Vec<usize> = Vec::new();

    while selected.len() < d_max {
        let adds = (0..n)
            .filter(|f| !selected.contains(f))
            .map(|f| {
                let mut s = selected.clone();
                s.push(f);
                s.sort_unstable();
                (f, s)
            })
            .collect();
        let Some((added, subset, score)) = best_candidate(cost, adds)? else {
            break;
        };
        if score <= current + IMPROVEMENT_EPS {
            break;
        }
        selected = subset;
        current = score;
        best_subset = selected.clone();
        steps.push(SelectionStep {
            action: StepAction::Add,
            feature: names[added].to_string(),
            score,
            subset_size: selected.len(),
        });

        while selected.len() > 2 {
            let removals = selected
                .iter()
                .filter(|&&f| f != added)
                .map(|&f| (f, selected.iter().copied().filter(|&g| g != f).collect()))
                .collect();
            match best_candidate(cost, removals)? {
                Some((removed, subset, score)) if score > current + IMPROVEMENT_EPS => {
                    selected = subset;
                    current = score;
                    best_subset = selected.clone();
                    steps.push(SelectionStep {
                        action: StepAction::Remove,
                        feature: names[removed].to_string(),
                        score,
                        subset_size: selected.len(),
                    });
                }
                _ => break,
            }
        }
    }
    Ok(SelectionTrace {
        steps,
        best_subset: best_subset.iter().map(|&i| names[i].to_string()).collect(),
        best_score: current,
    })
}

/// Point-biserial correlation of one feature with the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub index: usize,
    pub name: String,
    pub r: f64,
}

/// Pearson correlation of every column with 0/1 labels, sorted by
/// descending `|r|` (ties by column). Zero-variance columns get 0.
pub fn correlation_ranking(
    matrix: &Array2<f64>,
    labels: &[bool],
    names: &[&str],
) -> Result<Vec<FeatureCorrelation>> {
    let n = matrix.nrows();
    if n < 2 {
        return param(format!("correlation needs at least 2 events, got {n}"));
    }
    if labels.len() != n || names.len() != matrix.ncols() {
        return param("labels or names do not match the matrix");
    }
    check_two_classes(labels)?;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut out: Vec<FeatureCorrelation> = matrix
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let xm = col.sum() / n as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (x, yv) in col.iter().zip(&y) {
                let (dx, dy) = (x - xm, yv - ym);
                sxy += dx * dy;
                sxx += dx * dx;
                syy += dy * dy;
            }
            let r = if sxx > 0.0 && syy > 0.0 {
                (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            FeatureCorrelation {
                index: j,
                name: names[j].to_string(),
                r,
            }
        })
        .collect();
    out.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()).then(a.index.cmp(&b.index)));
    Ok(out)
}
