//! Event-stream files, ground-truth alignment files and a deterministic
//! synthetic traverse generator.

mod alignment;
mod binary;
mod synth;
mod text;

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alignment::{parse_alignment, parse_alignment_str, AlignmentFile, AlignmentForm};
pub use binary::{parse_event_binary, read_event_binary, write_event_binary, BINARY_MAGIC, BINARY_VERSION};
pub use synth::{synth_traverse, Pattern, SynthParams, REFRACTORY_US};
pub use text::{parse_event_text, read_event_text, write_event_text};

use crate::event_core::{check_sorted, Event, EventError, Geometry};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("no geometry in the file header and none supplied")]
    MissingGeometry,
    #[error("event stream is not time-ordered: {0}")]
    Unsorted(EventError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("not a binary event file (bad magic)")]
    BadMagic,
    #[error("unsupported binary event format version {0}")]
    VersionMismatch(u8),
    #[error("binary event file truncated in {0}")]
    Truncated(String),
    #[error("{section} checksum mismatch")]
    Checksum { section: &'static str },
    #[error("malformed binary event file: {0}")]
    Malformed(String),
    #[error("alignment line {line}: {message}")]
    Alignment { line: usize, message: String },
    #[error("alignment file mixes index and timestamp rows (line {line})")]
    MixedForms { line: usize },
    #[error("alignment pair {row}: {which} index {index} outside 0..{bound}")]
    AlignmentOutOfRange {
        row: usize,
        which: &'static str,
        index: u64,
        bound: u64,
    },
    #[error("invalid synthetic traverse parameter: {0}")]
    InvalidParameter(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventFormat {
    Text,
    Binary,
}

/// Metadata accompanying a parsed stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventFileHeader {
    pub format: EventFormat,
    pub geometry: Geometry,
    /// Absolute time subtracted from every stored timestamp.
    pub t0_us: u64,
    pub event_count: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub header: EventFileHeader,
    pub events: Vec<Event>,
}

/// What to do with a stream whose timestamps go backwards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnsortedPolicy {
    #[default]
    Reject,
    /// Stable sort by timestamp and log a warning.
    Sort,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Used when the file carries no geometry of its own.
    pub geometry: Option<Geometry>,
    pub unsorted: UnsortedPolicy,
}

/// Opens a text or binary event file, telling them apart by magic bytes.
pub fn read_events(path: impl AsRef<Path>, options: &ReadOptions) -> Result<EventStream, IngestError> {
    let path = path.as_ref();
    let mut magic = [0u8; 6];
    let is_binary = {
        use std::io::Read;
        let mut f = std::fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
        let n = f.read(&mut magic).map_err(|e| IngestError::io(path, e))?;
        n == magic.len() && &magic == BINARY_MAGIC
    };
    if is_binary {
        parse_event_binary(path, options)
    } else {
        parse_event_text(path, options)
    }
}

/// Applies the ordering policy, then shifts timestamps so `origin` (or the
/// first event when `None`) becomes zero.
pub(crate) fn finish_stream(
    mut events: Vec<Event>,
    origin: Option<u64>,
    options: &ReadOptions,
) -> Result<(Vec<Event>, u64), IngestError> {
    if let Err(e) = check_sorted(&events) {
        match options.unsorted {
            UnsortedPolicy::Reject => return Err(IngestError::Unsorted(e)),
            UnsortedPolicy::Sort => {
                log::warn!("{e}; stable-sorting the stream");
                events.sort_by_key(|e| e.t_us);
            }
        }
    }
    let origin = origin.unwrap_or_else(|| events.first().map_or(0, |e| e.t_us));
    for e in &mut events {
        e.t_us = e.t_us.checked_sub(origin).ok_or_else(|| IngestError::Parse {
            line: 0,
            column: 1,
            message: format!("timestamp {} precedes the declared origin {origin}", e.t_us),
        })?;
    }
    Ok((events, origin))
}
