use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::signal::{SignalRecord, MIN_LOAD_FS};

pub const CONTAINER_VERSION: u32 = 1;
const DTYPE: &str = "float32";
const ENDIANNESS: &str = "little";

/// JSON header of a signal container. The payload is a sibling file of
/// little-endian `f32` samples, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContainerHeader {
    pub version: u32,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub resected: Vec<bool>,
    pub n_samples: usize,
    pub duration_s: f64,
    pub dtype: String,
    pub endianness: String,
    /// Payload file name, relative to the header.
    pub payload: String,
}

fn payload_path(header_path: &Path, name: &str) -> PathBuf {
    header_path.parent().unwrap_or(Path::new(".")).join(name)
}

/// Writes `record` as `header_path` plus a `.bin` payload next to it.
/// Samples are stored as `f32`.
pub fn write_container(record: &SignalRecord, header_path: &Path) -> Result<()> {
    let payload_name = header_path
        .with_extension("bin")
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Parameter(format!("bad container path {}", header_path.display())))?;
    let header = ContainerHeader {
        version: CONTAINER_VERSION,
        fs: record.fs(),
        channel_names: record.channel_names().to_vec(),
        resected: record.resected().to_vec(),
        n_samples: record.n_samples(),
        duration_s: record.duration_s(),
        dtype: DTYPE.into(),
        endianness: ENDIANNESS.into(),
        payload: payload_name.clone(),
    };
    let mut bytes = Vec::with_capacity(4 * record.n_channels() * record.n_samples());
    for ch in record.channels() {
        for &v in ch {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    atomic_write(&payload_path(header_path, &payload_name), &bytes)?;
    let mut text = serde_json::to_string_pretty(&header).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    atomic_write(header_path, text.as_bytes())
}

fn data<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Data(msg.into()))
}

/// Loads a container and checks header/payload consistency.
pub fn read_container(header_path: &Path) -> Result<SignalRecord> {
    let text = fs::read_to_string(header_path)?;
    let h: ContainerHeader =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("container header: {e}")))?;
    if h.version != CONTAINER_VERSION {
        return data(format!("unsupported container version {}", h.version));
    }
    if h.dtype != DTYPE || h.endianness != ENDIANNESS {
        return data(format!(
            "unsupported sample encoding {}/{}",
            h.dtype, h.endianness
        ));
    }
    if !(h.fs.is_finite() && h.fs >= MIN_LOAD_FS) {
        return data(format!(
            "sampling rate {} Hz is below {MIN_LOAD_FS} Hz",
            h.fs
        ));
    }
    if h.channel_names.len() != h.resected.len() {
        return data("channel names and resected flags differ in length");
    }
    let expected = h.n_samples as f64 / h.fs;
    if (h.duration_s - expected).abs() > 1e-9 * expected.max(1.0) {
        return data(format!(
            "duration {} s does not match {} samples at {} Hz",
            h.duration_s, h.n_samples, h.fs
        ));
    }
    if Path::new(&h.payload).components().count() != 1 {
        return data("payload must be a file name next to the header");
    }
    let bytes = fs::read(payload_path(header_path, &h.payload))?;
    let n_ch = h.channel_names.len();
    if bytes.len() != 4 * n_ch * h.n_samples {
        return data(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            4 * n_ch * h.n_samples
        ));
    }
    let mut samples = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        let chunk = &bytes[4 * c * h.n_samples..4 * (c + 1) * h.n_samples];
        let ch: Vec<f64> = chunk
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        if ch.iter().any(|v| !v.is_finite()) {
            return data(format!("channel {c} contains non-finite samples"));
        }
        samples.push(ch);
    }
    SignalRecord::new(samples, h.fs, h.channel_names, h.resected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> SignalRecord {
        let s = vec![vec![0.5, -1.25, 3.0], vec![1e-3, 2.0, -7.5]];
        SignalRecord::new(s, 2048.0, vec!["a".into(), "b".into()], vec![true, false]).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.json");
        let p2 = dir.path().join("two.json");
        write_container(&record(), &p1).unwrap();
        let back = read_container(&p1).unwrap();
        write_container(&back, &p2).unwrap();
        assert_eq!(
            fs::read(dir.path().join("one.bin")).unwrap(),
            fs::read(dir.path().join("two.bin")).unwrap()
        );
        let h1 = fs::read_to_string(&p1).unwrap();
        let h2 = fs::read_to_string(&p2).unwrap();
        assert_eq!(h1.replace("one.bin", "two.bin"), h2);
        assert_eq!(back.channel_names(), record().channel_names());
        assert_eq!(back.resected(), &[true, false]);
    }

    #[test]
    fn payload_size_matches_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_container(&record(), &p).unwrap();
        assert_eq!(
            fs::metadata(dir.path().join("x.bin")).unwrap().len(),
            4 * 2 * 3
        );
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_container(&record(), &p).unwrap();
        let bin = dir.path().join("x.bin");
        let b = fs::read(&bin).unwrap();
        fs::write(&bin, &b[..b.len() - 4]).unwrap();
        assert!(matches!(read_container(&p), Err(Error::Data(_))));
    }

    #[test]
    fn low_sampling_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        let r = SignalRecord::from_channels(vec![vec![0.0; 10]], 500.0).unwrap();
        write_container(&r, &p).unwrap();
        assert!(matches!(read_container(&p), Err(Error::Data(_))));
    }
}
