//! Detection of high-frequency oscillations (HFOs) in intracranial EEG by
//! time-frequency event clustering.
//!
//! The pipeline epochs each channel, bandpasses it into the ripple
//! (80-250 Hz) and fast-ripple (250-500 Hz) bands, computes a Stockwell
//! transform per epoch, segments energy blobs with Otsu thresholding and
//! connected-component labeling, describes every blob with a fixed catalog
//! of time, frequency, time-frequency and image features, and finally splits
//! the event pool into HFO and non-HFO groups by hierarchical clustering.
//!
//! Alongside the detector the crate ships the machinery needed to validate
//! it: a synthetic benchmark generator, event matching and scoring,
//! permutation tests, resection rate ratios and wrapper feature selection.

pub mod annotation;
pub mod clustering;
pub mod error;
pub mod events;
pub mod features;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod selection;
pub mod signal;
pub mod stockwell;
pub mod synth;

pub use annotation::{Annotation, EventKind};
pub use error::{Error, Result};
pub use signal::{Band, Epoch, SignalRecord};
