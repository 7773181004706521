//! Reference events (ground truth) shared by the generator, the file formats
//! and the scoring code.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::signal::Band;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Ripple,
    FastRipple,
    Spike,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Ripple, EventKind::FastRipple, EventKind::Spike];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Ripple => "ripple",
            EventKind::FastRipple => "fast_ripple",
            EventKind::Spike => "spike",
        }
    }

    /// HFO band of oscillatory kinds; spikes have none.
    pub fn band(self) -> Option<Band> {
        match self {
            EventKind::Ripple => Some(Band::Ripple),
            EventKind::FastRipple => Some(Band::FastRipple),
            EventKind::Spike => None,
        }
    }

    pub fn of_band(band: Band) -> EventKind {
        match band {
            Band::Ripple => EventKind::Ripple,
            Band::FastRipple => EventKind::FastRipple,
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "ripple" => Ok(EventKind::Ripple),
            "fast_ripple" => Ok(EventKind::FastRipple),
            "spike" => Ok(EventKind::Spike),
            other => Err(Error::Data(format!("unknown event kind '{other}'"))),
        }
    }
}

/// One annotated reference event.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub channel: usize,
    pub center_s: f64,
    pub kind: EventKind,
    /// Peak amplitude in microvolts.
    pub amplitude: f64,
}

impl Annotation {
    pub fn band(&self) -> Option<Band> {
        self.kind.band()
    }
}
