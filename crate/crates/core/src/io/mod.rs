//! On-disk formats: the signal container, CSV tables, run configuration
//! and run manifests.

mod config;
mod container;
mod manifest;
mod tables;

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;

pub use config::{MetricsConfig, RunConfig, SelectionConfig, SweepConfig, ENV_PREFIX};
pub use container::{read_container, write_container, ContainerHeader, CONTAINER_VERSION};
pub use manifest::{FileDigest, Manifest};
pub use tables::{
    read_annotations, read_detections, write_annotations, write_detections, write_features,
    write_merge_tree, DetectionRow, ANNOTATION_HEADER, DETECTION_HEADER,
};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
