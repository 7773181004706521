//! Report tables and their SVG renderings: score-vs-SNR box plots, rate
//! ratio scatter and feature correlation bars. Every plot is drawn from a
//! CSV table that is written alongside it.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::metrics::{MatchCounts, RatioOutcome, Scores};
use crate::selection::FeatureCorrelation;
use crate::signal::Band;

pub const SCORE_HEADER: [&str; 10] = [
    "snr_db",
    "background",
    "band",
    "tp",
    "fp",
    "fn",
    "sensitivity",
    "precision",
    "f_score",
    "p_value",
];
pub const RATIO_HEADER: [&str; 4] = ["label", "band", "status", "ratio"];
pub const CORRELATION_HEADER: [&str; 3] = ["rank", "feature", "r"];

/// Scores of one band of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub snr_db: Option<f64>,
    pub background: Option<usize>,
    pub band: Band,
    pub counts: MatchCounts,
    pub scores: Scores,
    pub p_value: Option<f64>,
}

/// Rate ratio of one recording ("patient") and band.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub label: String,
    pub band: Band,
    pub outcome: RatioOutcome,
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    atomic_write(path, &bytes)
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let found: Vec<&str> = r.headers().map_err(csv_err)?.iter().collect();
    if found != header {
        return Err(Error::Data(format!(
            "{}: unexpected header {}",
            path.display(),
            found.join(",")
        )));
    }
    r.records().map(|x| x.map_err(csv_err)).collect()
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let s = rec.get(i).unwrap_or("");
    s.parse()
        .map_err(|_| Error::Data(format!("bad value '{s}' in column {i}")))
}

fn parse_opt<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<Option<T>> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        Some(_) => parse(rec, i).map(Some),
    }
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_csv(
        path,
        &SCORE_HEADER,
        rows.iter().map(|r| {
            vec![
                opt(&r.snr_db),
                opt(&r.background),
                r.band.to_string(),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                r.scores.sensitivity.to_string(),
                r.scores.precision.to_string(),
                r.scores.f_score.to_string(),
                opt(&r.p_value),
            ]
        }),
    )
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_csv(path, &SCORE_HEADER)?
        .iter()
        .map(|r| {
            Ok(ScoreRow {
                snr_db: parse_opt(r, 0)?,
                background: parse_opt(r, 1)?,
                band: r.get(2).unwrap_or("").parse()?,
                counts: MatchCounts {
                    tp: parse(r, 3)?,
                    fp: parse(r, 4)?,
                    fn_: parse(r, 5)?,
                },
                scores: Scores {
                    sensitivity: parse(r, 6)?,
                    precision: parse(r, 7)?,
                    f_score: parse(r, 8)?,
                },
                p_value: parse_opt(r, 9)?,
            })
        })
        .collect()
}

pub fn write_ratios(path: &Path, rows: &[RatioRow]) -> Result<()> {
    write_csv(
        path,
        &RATIO_HEADER,
        rows.iter().map(|r| {
            let (status, value) = match r.outcome {
                RatioOutcome::Value(v) => ("value", v.to_string()),
                RatioOutcome::NoEvents => ("no_events", String::new()),
            };
            vec![r.label.clone(), r.band.to_string(), status.into(), value]
        }),
    )
}

pub fn read_ratios(path: &Path) -> Result<Vec<RatioRow>> {
    read_csv(path, &RATIO_HEADER)?
        .iter()
        .map(|r| {
            let outcome = match r.get(2).unwrap_or("") {
                "value" => RatioOutcome::Value(parse(r, 3)?),
                "no_events" => RatioOutcome::NoEvents,
                other => return Err(Error::Data(format!("unknown ratio status '{other}'"))),
            };
            Ok(RatioRow {
                label: r.get(0).unwrap_or("").to_string(),
                band: r.get(1).unwrap_or("").parse()?,
                outcome,
            })
        })
        .collect()
}

pub fn write_correlations(path: &Path, rows: &[FeatureCorrelation]) -> Result<()> {
    write_csv(
        path,
        &CORRELATION_HEADER,
        rows.iter()
            .enumerate()
            .map(|(i, c)| vec![(i + 1).to_string(), c.name.clone(), c.r.to_string()]),
    )
}

/// Correlations in file order; `index` is the row position.
pub fn read_correlations(path: &Path) -> Result<Vec<FeatureCorrelation>> {
    read_csv(path, &CORRELATION_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(FeatureCorrelation {
                index: i,
                name: r.get(1).unwrap_or("").to_string(),
                r: parse(r, 2)?,
            })
        })
        .collect()
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn band_color(band: Band) -> &'static str {
    match band {
        Band::Ripple => "#3b6ea5",
        Band::FastRipple => "#c0504d",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn placeholder(title: &str) -> String {
    let mut s = open_svg(title);
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="middle" fill="#777777" font-size="18">no events</text>"##,
        W / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Frame with a vertical axis over `[lo, hi]` and horizontal gridlines.
fn axes(s: &mut String, lo: f64, hi: f64, ylabel: &str) {
    let (x0, y0, y1) = (MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r##"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="#000000"/>"##,
        W - 20.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#000000"/>"##
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v, lo, hi);
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            W - 20.0,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn y_of(v: f64, lo: f64, hi: f64) -> f64 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    H - MARGIN - t * (H - 2.0 * MARGIN)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (a, b) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[a] + (pos - a as f64) * (sorted[b] - sorted[a])
}

fn legend(s: &mut String) {
    for (i, band) in Band::ALL.iter().enumerate() {
        let x = W - 170.0 + i as f64 * 80.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="34" width="10" height="10" fill="{}"/><text x="{}" y="43">{}</text>"#,
            band_color(*band),
            x + 14.0,
            band
        );
    }
}

/// F-score distribution per SNR level and band.
pub fn score_box_svg(rows: &[ScoreRow]) -> String {
    let title = "F-score by SNR";
    if rows.is_empty() {
        return placeholder(title);
    }
    let mut levels: Vec<Option<f64>> = rows.iter().map(|r| r.snr_db).collect();
    levels.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(y),
        (a, b) => a.is_some().cmp(&b.is_some()),
    });
    levels.dedup();
    let mut s = open_svg(title);
    axes(&mut s, 0.0, 1.0, "F-score");
    legend(&mut s);
    let slot = (W - MARGIN - 20.0) / levels.len() as f64;
    for (i, level) in levels.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let label = level.map_or("n/a".to_string(), |v| format!("{v} dB"));
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{label}</text>"#,
            H - MARGIN + 18.0
        );
        for (j, band) in Band::ALL.iter().enumerate() {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.snr_db == *level && r.band == *band)
                .map(|r| r.scores.f_score)
                .collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let bw = (slot / 4.0).min(40.0);
            let x = cx + (j as f64 - 1.0) * bw * 1.2 + bw * 0.1;
            let (lo, q1, med, q3, hi) = (
                v[0],
                quantile(&v, 0.25),
                quantile(&v, 0.5),
                quantile(&v, 0.75),
                v[v.len() - 1],
            );
            let c = band_color(*band);
            let xm = x + bw / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{xm:.1}" y1="{:.1}" x2="{xm:.1}" y2="{:.1}" stroke="{c}"/>"#,
                y_of(lo, 0.0, 1.0),
                y_of(hi, 0.0, 1.0)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="{c}" fill-opacity="0.35" stroke="{c}"/>"##,
                y_of(q3, 0.0, 1.0),
                (y_of(q1, 0.0, 1.0) - y_of(q3, 0.0, 1.0)).max(1.0)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2"/>"#,
                x + bw,
                y = y_of(med, 0.0, 1.0)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Rate ratio per recording and band, on `[-1, 1]`.
pub fn ratio_scatter_svg(rows: &[RatioRow]) -> String {
    let title = "Rate ratio per patient";
    let valued: Vec<&RatioRow> = rows
        .iter()
        .filter(|r| r.outcome.value().is_some())
        .collect();
    if valued.is_empty() {
        return placeholder(title);
    }
    let mut labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut s = open_svg(title);
    axes(&mut s, -1.0, 1.0, "rate ratio");
    legend(&mut s);
    let slot = (W - MARGIN - 20.0) / labels.len() as f64;
    for (i, label) in labels.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#,
            H - MARGIN + 18.0,
            escape(label)
        );
        for r in valued.iter().filter(|r| r.label == *label) {
            let dx = if r.band == Band::Ripple { -6.0 } else { 6.0 };
            let v = r.outcome.value().unwrap_or(0.0);
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="5" fill="{}"/>"#,
                cx + dx,
                y_of(v, -1.0, 1.0),
                band_color(r.band)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Signed correlation of each feature with the HFO label, in table order.
pub fn correlation_bars_svg(rows: &[FeatureCorrelation]) -> String {
    let title = "Feature correlation with HFO label";
    if rows.is_empty() {
        return placeholder(title);
    }
    let mut s = open_svg(title);
    axes(&mut s, -1.0, 1.0, "point-biserial r");
    let slot = (W - MARGIN - 20.0) / rows.len() as f64;
    let zero = y_of(0.0, -1.0, 1.0);
    for (i, c) in rows.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + slot * 0.1;
        let y = y_of(c.r, -1.0, 1.0);
        let fill = if c.r >= 0.0 { "#3b6ea5" } else { "#c0504d" };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}"><title>{} {:.3}</title></rect>"#,
            y.min(zero),
            slot * 0.8,
            (y - zero).abs(),
            escape(&c.name),
            c.r
        );
        let lx = x + slot * 0.4;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{}" transform="rotate(60 {lx:.1} {})" font-size="8">{}</text>"#,
            H - MARGIN + 10.0,
            H - MARGIN + 10.0,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
