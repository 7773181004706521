use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use tfec::clustering::LinkageRegistry;
use tfec::features::catalog;
use tfec::io::{
    atomic_write, read_annotations, read_container, read_detections, write_annotations,
    write_container, write_detections, write_features, write_merge_tree, DetectionRow, FileDigest,
    Manifest, RunConfig,
};
use tfec::metrics::{self, permutation_test, Detection, PermutationResult, RateTable};
use tfec::pipeline::{detect as run_detector, DetectionOutput, DetectorConfig};
use tfec::report::{self, RatioRow, ScoreRow};
use tfec::selection::{
    correlation_ranking, sffs, LabeledRecording, ObjectiveRegistry, PipelineCost,
};
use tfec::synth::build_benchmark;
use tfec::{Annotation, Band, Error, Result, SignalRecord};

const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Creates `out` and writes the resolved configuration into it. Returns
/// the manifest seeded with the configuration hash.
fn prepare(cfg: &RunConfig, out: &Path, command: &str) -> Result<Manifest> {
    let text = cfg.to_toml()?;
    fs::create_dir_all(out)?;
    atomic_write(&out.join(RESOLVED_CONFIG), text.as_bytes())?;
    Ok(Manifest::new(command, &text))
}

fn finish(
    mut manifest: Manifest,
    out: &Path,
    outputs: &[&str],
    summary: serde_json::Value,
) -> Result<()> {
    manifest.outputs = outputs
        .iter()
        .chain([&RESOLVED_CONFIG])
        .map(|n| FileDigest::of(&out.join(n)))
        .collect::<Result<_>>()?;
    manifest.summary = summary;
    manifest.write(&out.join("manifest.json"))
}

fn digests(paths: &[&Path]) -> Result<Vec<FileDigest>> {
    paths.iter().map(|p| FileDigest::of(p)).collect()
}

/// A container header together with its payload file.
fn container_digests(header: &Path) -> Result<Vec<FileDigest>> {
    let mut d = digests(&[header])?;
    let payload = header.with_extension("bin");
    if payload.exists() {
        d.push(FileDigest::of(&payload)?);
    }
    Ok(d)
}

/// Failures to read user-supplied tables count as user errors.
fn as_user_error(e: Error) -> Error {
    match e {
        Error::Data(m) => Error::Config(m),
        other => other,
    }
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let bench = build_benchmark(&cfg.synth)?;
    let manifest = prepare(cfg, out, "simulate")?;
    write_container(&bench.record, &out.join("recording.json"))?;
    write_annotations(&out.join("annotations.csv"), &bench.annotations)?;
    eprintln!(
        "simulated {} channels x {} s with {} annotations",
        bench.record.n_channels(),
        bench.record.duration_s(),
        bench.annotations.len()
    );
    finish(
        manifest,
        out,
        &["recording.json", "recording.bin", "annotations.csv"],
        json!({
            "n_channels": bench.record.n_channels(),
            "n_samples": bench.record.n_samples(),
            "n_annotations": bench.annotations.len(),
            "snr_db": cfg.synth.snr_db,
            "background_id": cfg.synth.background_id,
        }),
    )
}

/// Runs the detector, treating a sampling rate too low for the bands as a
/// data contract violation.
fn detect_record(record: &SignalRecord, config: &DetectorConfig) -> Result<DetectionOutput> {
    for band in config.analysis_bands()? {
        band.check_fs(record.fs())
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    run_detector(record, config)
}

fn detection_rows(out: &DetectionOutput) -> Vec<DetectionRow> {
    out.events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_hfo)
        .map(|(i, e)| DetectionRow {
            channel: e.channel,
            center_s: e.center_s,
            band: e.band,
            cluster: e.cluster.unwrap_or(0),
            feature_row: i,
        })
        .collect()
}

fn write_timings(path: &Path, lines: &[(String, f64)]) -> Result<()> {
    let text: String = lines.iter().map(|(k, v)| format!("{k} {v:.3}\n")).collect();
    atomic_write(path, text.as_bytes())
}

fn band_counts(out: &DetectionOutput) -> serde_json::Value {
    let mut m = serde_json::Map::new();
    for band in Band::ALL {
        let pooled = out.events.iter().filter(|e| e.band == band).count();
        let hfo = out
            .events
            .iter()
            .filter(|e| e.band == band && e.is_hfo)
            .count();
        m.insert(
            band.to_string(),
            json!({ "pooled": pooled, "detected": hfo }),
        );
    }
    serde_json::Value::Object(m)
}

pub fn detect(cfg: &RunConfig, container: &Path, out: &Path) -> Result<()> {
    let record = read_container(container)?;
    let result = detect_record(&record, &cfg.detector)?;
    let mut manifest = prepare(cfg, out, "detect")?;
    manifest.inputs = container_digests(container)?;
    let rows = detection_rows(&result);
    write_detections(&out.join("detections.csv"), &rows)?;
    write_features(&out.join("features.csv"), &result.events)?;
    write_merge_tree(
        &out.join("merge_tree.csv"),
        result
            .clusters
            .iter()
            .map(|(b, c)| (*b, c.merge_tree.as_slice())),
    )?;
    write_timings(
        &out.join("timings.log"),
        &[
            ("extraction_s".into(), result.timings.extraction_s),
            ("clustering_s".into(), result.timings.clustering_s),
        ],
    )?;
    eprintln!(
        "{} pooled events, {} detections in {:.1} s",
        result.events.len(),
        rows.len(),
        result.timings.extraction_s + result.timings.clustering_s
    );
    finish(
        manifest,
        out,
        &["detections.csv", "features.csv", "merge_tree.csv"],
        json!({
            "features": result.feature_names,
            "bands": band_counts(&result),
        }),
    )
}

/// Optional SNR and background labels of a scored run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunLabels {
    pub snr_db: Option<f64>,
    pub background: Option<usize>,
}

fn score_bands(
    cfg: &RunConfig,
    detections: &[Detection],
    references: &[Annotation],
    labels: RunLabels,
) -> Result<(Vec<ScoreRow>, Vec<(Band, PermutationResult)>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for band in Band::ALL {
        let r = permutation_test(
            detections,
            references,
            band,
            cfg.metrics.n_perm,
            cfg.metrics.ci_s,
            cfg.seed,
        )?;
        rows.push(ScoreRow {
            snr_db: labels.snr_db,
            background: labels.background,
            band,
            counts: r.counts,
            scores: r.scores,
            p_value: Some(r.p_value),
        });
        results.push((band, r));
    }
    Ok((rows, results))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn evaluate(
    cfg: &RunConfig,
    detections: &Path,
    annotations: &Path,
    container: Option<&Path>,
    labels: RunLabels,
    out: &Path,
) -> Result<()> {
    let record = container.map(read_container).transpose()?;
    let duration = record.as_ref().map(SignalRecord::duration_s);
    let dets: Vec<Detection> = read_detections(detections)
        .map_err(as_user_error)?
        .iter()
        .map(DetectionRow::detection)
        .collect();
    let refs = read_annotations(annotations, duration).map_err(as_user_error)?;
    if let Some(r) = &record {
        let n = r.n_channels();
        if dets
            .iter()
            .map(|d| d.channel)
            .chain(refs.iter().map(|a| a.channel))
            .any(|c| c >= n)
        {
            return Err(Error::Config(format!(
                "tables reference channels beyond the {n} in the container"
            )));
        }
    }
    let (rows, results) = score_bands(cfg, &dets, &refs, labels)?;
    let mut manifest = prepare(cfg, out, "evaluate")?;
    manifest.inputs = digests(&[detections, annotations])?;
    let bands: serde_json::Map<String, serde_json::Value> = results
        .iter()
        .map(|(b, r)| (b.to_string(), serde_json::to_value(r).unwrap_or_default()))
        .collect();
    write_json(
        &out.join("eval.json"),
        &json!({
            "ci_s": cfg.metrics.ci_s,
            "n_perm": cfg.metrics.n_perm,
            "seed": cfg.seed,
            "snr_db": labels.snr_db,
            "background": labels.background,
            "bands": bands,
        }),
    )?;
    report::write_scores(&out.join("scores.csv"), &rows)?;
    for r in &rows {
        eprintln!(
            "{}: F {:.3} (sens {:.3}, prec {:.3}) p {:.4}",
            r.band,
            r.scores.f_score,
            r.scores.sensitivity,
            r.scores.precision,
            r.p_value.unwrap_or(f64::NAN)
        );
    }
    finish(
        manifest,
        out,
        &["eval.json", "scores.csv"],
        json!({ "n_detections": dets.len(), "n_references": refs.len() }),
    )
}

pub fn select_features(
    cfg: &RunConfig,
    containers: &[PathBuf],
    annotations: &[PathBuf],
    out: &Path,
) -> Result<()> {
    let detector = DetectorConfig {
        all_features: true,
        ..cfg.detector.clone()
    };
    let mut recs = Vec::new();
    let mut inputs = Vec::new();
    for (c, a) in containers.iter().zip(annotations) {
        let record = read_container(c)?;
        let refs = read_annotations(a, Some(record.duration_s())).map_err(as_user_error)?;
        let result = detect_record(&record, &detector)?;
        recs.push(LabeledRecording::from_output(&result, &refs));
        inputs.extend(container_digests(c)?);
        inputs.extend(digests(&[a])?);
    }
    let linkages = LinkageRegistry::with_builtins();
    let linkage = linkages
        .get(&cfg.detector.linkage)
        .ok_or_else(|| Error::Config(format!("unknown linkage '{}'", cfg.detector.linkage)))?;
    let objectives = ObjectiveRegistry::with_builtins();
    let objective = objectives
        .get(&cfg.selection.objective)
        .ok_or_else(|| Error::Config(format!("unknown objective '{}'", cfg.selection.objective)))?;
    let names = catalog();
    let cost = PipelineCost::new(&recs, linkage, objective)?;
    let trace = sffs(&cost, &names, cfg.selection.d_max.min(names.len()))?;

    let rows: Vec<Vec<f64>> = recs
        .iter()
        .flat_map(|r| r.features.iter().cloned())
        .collect();
    let labels: Vec<bool> = recs
        .iter()
        .flat_map(|r| r.labels(cfg.metrics.ci_s))
        .collect();
    let matrix = ndarray::Array2::from_shape_fn((rows.len(), names.len()), |(i, j)| rows[i][j]);
    let corr = correlation_ranking(&matrix, &labels, &names)?;

    let mut manifest = prepare(cfg, out, "select-features")?;
    manifest.inputs = inputs;
    let mut trace_csv = String::from("step,action,feature,score,subset_size\n");
    for (i, s) in trace.steps.iter().enumerate() {
        let action = match s.action {
            tfec::selection::StepAction::Add => "add",
            tfec::selection::StepAction::Remove => "remove",
        };
        trace_csv.push_str(&format!(
            "{i},{action},{},{},{}\n",
            s.feature, s.score, s.subset_size
        ));
    }
    atomic_write(&out.join("selection_trace.csv"), trace_csv.as_bytes())?;
    let mut list = trace.best_subset.join("\n");
    list.push('\n');
    atomic_write(&out.join("selected_features.txt"), list.as_bytes())?;
    report::write_correlations(&out.join("correlation.csv"), &corr)?;
    eprintln!(
        "selected {:?} with score {:.4}",
        trace.best_subset, trace.best_score
    );
    finish(
        manifest,
        out,
        &[
            "selection_trace.csv",
            "selected_features.txt",
            "correlation.csv",
        ],
        json!({
            "objective": cfg.selection.objective,
            "best_subset": trace.best_subset,
            "best_score": trace.best_score,
        }),
    )
}

pub fn rate_ratio(
    cfg: &RunConfig,
    detections: &Path,
    container: &Path,
    label: &str,
    out: &Path,
) -> Result<()> {
    let record = read_container(container)?;
    let dets: Vec<Detection> = read_detections(detections)
        .map_err(as_user_error)?
        .iter()
        .map(DetectionRow::detection)
        .collect();
    if dets.iter().any(|d| d.channel >= record.n_channels()) {
        return Err(Error::Config(
            "detections reference channels beyond the container".into(),
        ));
    }
    let table = RateTable::from_detections(&dets, record.resected(), record.duration_s())?;
    let ratios: Vec<RatioRow> = Band::ALL
        .iter()
        .map(|&band| RatioRow {
            label: label.to_string(),
            band,
            outcome: metrics::rate_ratio(&table, band),
        })
        .collect();
    let mut manifest = prepare(cfg, out, "rate-ratio")?;
    manifest.inputs = digests(&[detections])?;
    manifest.inputs.extend(container_digests(container)?);
    let mut rates = String::from("channel,name,resected,band,count,duration_min,rate\n");
    for e in &table.entries {
        rates.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.channel,
            record.channel_names()[e.channel],
            u8::from(record.resected()[e.channel]),
            e.band,
            e.count,
            e.duration_min,
            e.rate
        ));
    }
    atomic_write(&out.join("rates.csv"), rates.as_bytes())?;
    report::write_ratios(&out.join("ratio.csv"), &ratios)?;
    for r in &ratios {
        match r.outcome.value() {
            Some(v) => eprintln!("{}: ratio {v:.3}", r.band),
            None => eprintln!("{}: no events", r.band),
        }
    }
    finish(
        manifest,
        out,
        &["rates.csv", "ratio.csv"],
        json!({ "label": label }),
    )
}

fn read_if_present<T>(path: &Path, read: impl Fn(&Path) -> Result<Vec<T>>) -> Result<Vec<T>> {
    if path.exists() {
        read(path).map_err(as_user_error)
    } else {
        Ok(Vec::new())
    }
}

pub fn report(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let (mut scores, mut ratios, mut corr) = (Vec::new(), Vec::new(), Vec::new());
    for dir in inputs {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        scores.extend(read_if_present(
            &dir.join("scores.csv"),
            report::read_scores,
        )?);
        ratios.extend(read_if_present(
            &dir.join("ratio.csv"),
            report::read_ratios,
        )?);
        corr.extend(read_if_present(
            &dir.join("correlation.csv"),
            report::read_correlations,
        )?);
    }
    let manifest = prepare(cfg, out, "report")?;
    report::write_scores(&out.join("score_vs_snr.csv"), &scores)?;
    atomic_write(
        &out.join("score_vs_snr.svg"),
        report::score_box_svg(&scores).as_bytes(),
    )?;
    report::write_ratios(&out.join("ratio_scatter.csv"), &ratios)?;
    atomic_write(
        &out.join("ratio_scatter.svg"),
        report::ratio_scatter_svg(&ratios).as_bytes(),
    )?;
    report::write_correlations(&out.join("correlation_bars.csv"), &corr)?;
    atomic_write(
        &out.join("correlation_bars.svg"),
        report::correlation_bars_svg(&corr).as_bytes(),
    )?;
    finish(
        manifest,
        out,
        &[
            "score_vs_snr.csv",
            "score_vs_snr.svg",
            "ratio_scatter.csv",
            "ratio_scatter.svg",
            "correlation_bars.csv",
            "correlation_bars.svg",
        ],
        json!({ "scores": scores.len(), "ratios": ratios.len(), "correlations": corr.len() }),
    )
}

fn level_name(snr: f64, bg: usize) -> String {
    format!("snr{snr}_bg{bg}")
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = prepare(cfg, out, "sweep")?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &snr in &cfg.sweep.snr_db {
        for &bg in &cfg.sweep.backgrounds {
            let mut synth = cfg.synth.clone();
            synth.snr_db = snr;
            synth.background_id = bg;
            let bench = build_benchmark(&synth)?;
            let result = detect_record(&bench.record, &cfg.detector)?;
            let dir = out.join(level_name(snr, bg));
            fs::create_dir_all(&dir)?;
            write_annotations(&dir.join("annotations.csv"), &bench.annotations)?;
            write_detections(&dir.join("detections.csv"), &detection_rows(&result))?;
            let labels = RunLabels {
                snr_db: Some(snr),
                background: Some(bg),
            };
            let (r, _) = score_bands(cfg, &result.detections(), &bench.annotations, labels)?;
            for row in &r {
                eprintln!(
                    "snr {snr} dB bg {bg} {}: F {:.3}",
                    row.band, row.scores.f_score
                );
            }
            rows.extend(r);
            timings.push((
                level_name(snr, bg),
                result.timings.extraction_s + result.timings.clustering_s,
            ));
        }
    }
    report::write_scores(&out.join("scores.csv"), &rows)?;
    atomic_write(
        &out.join("score_vs_snr.svg"),
        report::score_box_svg(&rows).as_bytes(),
    )?;
    write_timings(&out.join("timings.log"), &timings)?;
    finish(
        manifest,
        out,
        &["scores.csv", "score_vs_snr.svg"],
        json!({ "runs": timings.len() }),
    )
}
