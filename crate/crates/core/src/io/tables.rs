use std::path::Path;

use super::atomic_write;
use crate::annotation::{Annotation, EventKind};
use crate::clustering::Merge;
use crate::error::{Error, Result};
use crate::features::catalog;
use crate::metrics::Detection;
use crate::pipeline::PooledEvent;
use crate::signal::Band;

pub const ANNOTATION_HEADER: [&str; 5] = ["channel", "center_s", "kind", "band", "amplitude"];
pub const DETECTION_HEADER: [&str; 6] = [
    "channel",
    "center_s",
    "kind",
    "band",
    "cluster",
    "feature_row",
];

/// One detected HFO as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRow {
    pub channel: usize,
    pub center_s: f64,
    pub band: Band,
    pub cluster: usize,
    /// Row of the event in the features table.
    pub feature_row: usize,
}

impl DetectionRow {
    pub fn detection(&self) -> Detection {
        Detection {
            channel: self.channel,
            center_s: self.center_s,
            band: self.band,
        }
    }
}

fn band_label(band: Option<Band>) -> &'static str {
    band.map_or("none", Band::as_str)
}

fn finish(w: csv::Writer<Vec<u8>>, path: &Path) -> Result<()> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let mut w = writer();
    w.write_record(ANNOTATION_HEADER).map_err(csv_err)?;
    for a in annotations {
        w.write_record([
            a.channel.to_string(),
            a.center_s.to_string(),
            a.kind.to_string(),
            band_label(a.band()).to_string(),
            a.amplitude.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w, path)
}

fn open(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Data(format!("{other:?}")),
        })?;
    let found: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(Error::Data(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    line: usize,
    what: &str,
) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        Error::Data(format!(
            "line {line}: bad {what} '{}'",
            rec.get(i).unwrap_or("")
        ))
    })
}

fn check_center(center: f64, duration_s: Option<f64>, line: usize) -> Result<()> {
    let ok = center.is_finite() && center >= 0.0 && duration_s.is_none_or(|d| center <= d);
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "line {line}: center {center} s outside the recording"
        )))
    }
}

fn check_band(band: &str, kind: EventKind, line: usize) -> Result<()> {
    if band != band_label(kind.band()) {
        return Err(Error::Data(format!(
            "line {line}: band '{band}' does not fit kind '{kind}'"
        )));
    }
    Ok(())
}

/// Strict annotation reader. Centers must lie in `[0, duration_s]` when a
/// duration is given.
pub fn read_annotations(path: &Path, duration_s: Option<f64>) -> Result<Vec<Annotation>> {
    let mut r = open(path, &ANNOTATION_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let kind: EventKind = rec.get(2).unwrap_or("").parse()?;
        check_band(rec.get(3).unwrap_or(""), kind, line)?;
        let a = Annotation {
            channel: field(&rec, 0, line, "channel")?,
            center_s: field(&rec, 1, line, "center_s")?,
            kind,
            amplitude: field(&rec, 4, line, "amplitude")?,
        };
        check_center(a.center_s, duration_s, line)?;
        if !a.amplitude.is_finite() {
            return Err(Error::Data(format!(
                "line {line}: amplitude must be finite"
            )));
        }
        out.push(a);
    }
    Ok(out)
}

pub fn write_detections(path: &Path, rows: &[DetectionRow]) -> Result<()> {
    let mut w = writer();
    w.write_record(DETECTION_HEADER).map_err(csv_err)?;
    for d in rows {
        w.write_record([
            d.channel.to_string(),
            d.center_s.to_string(),
            EventKind::of_band(d.band).to_string(),
            d.band.to_string(),
            d.cluster.to_string(),
            d.feature_row.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w, path)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRow>> {
    let mut r = open(path, &DETECTION_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let kind: EventKind = rec.get(2).unwrap_or("").parse()?;
        if kind == EventKind::Spike {
            return Err(Error::Data(format!(
                "line {line}: detections cannot be spikes"
            )));
        }
        check_band(rec.get(3).unwrap_or(""), kind, line)?;
        let d = DetectionRow {
            channel: field(&rec, 0, line, "channel")?,
            center_s: field(&rec, 1, line, "center_s")?,
            band: rec.get(3).unwrap_or("").parse()?,
            cluster: field(&rec, 4, line, "cluster")?,
            feature_row: field(&rec, 5, line, "feature_row")?,
        };
        check_center(d.center_s, None, line)?;
        out.push(d);
    }
    Ok(out)
}

/// Every pooled event with its full feature vector, one row per event in
/// detector order. Events of unclustered bands have an empty cluster cell.
pub fn write_features(path: &Path, events: &[PooledEvent]) -> Result<()> {
    let mut w = writer();
    let mut header = vec![
        "row",
        "channel",
        "center_s",
        "band",
        "cluster",
        "is_hfo",
        "pixel_count",
    ];
    let names = catalog();
    header.extend(names.iter());
    w.write_record(&header).map_err(csv_err)?;
    for (i, e) in events.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            e.channel.to_string(),
            e.center_s.to_string(),
            e.band.to_string(),
            e.cluster.map_or(String::new(), |c| c.to_string()),
            u8::from(e.is_hfo).to_string(),
            e.pixel_count.to_string(),
        ];
        rec.extend(e.features.values.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w, path)
}

/// Merge trees of every clustered band.
pub fn write_merge_tree<'a>(
    path: &Path,
    trees: impl IntoIterator<Item = (Band, &'a [Merge])>,
) -> Result<()> {
    let mut w = writer();
    w.write_record(["band", "step", "node_a", "node_b", "distance", "size"])
        .map_err(csv_err)?;
    for (band, tree) in trees {
        for (i, m) in tree.iter().enumerate() {
            w.write_record([
                band.to_string(),
                i.to_string(),
                m.node_a.to_string(),
                m.node_b.to_string(),
                m.distance.to_string(),
                m.size.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w, path)
}
