//! Text event format.
//!
//! ```text
//! # geometry: 346x260
//! # t0_us: 0
//! 1503,12,40,1
//! 1507,13,40,-1
//! ```
//!
//! Comment lines start with `#`; the `geometry` and `t0_us` keys are read,
//! anything else is ignored. Each record is `t_us,x,y,p` with `p` in
//! `{1, -1}` or `{1, 0}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{finish_stream, EventFileHeader, EventFormat, EventStream, IngestError, ReadOptions};
use crate::event_core::{Event, Geometry, Polarity};

pub fn parse_event_text(path: impl AsRef<Path>, options: &ReadOptions) -> Result<EventStream, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_event_text(BufReader::new(file), options).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::io(path, source),
        other => other,
    })
}

pub fn read_event_text<R: BufRead>(reader: R, options: &ReadOptions) -> Result<EventStream, IngestError> {
    let mut geometry = None;
    let mut origin = None;
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| IngestError::io(Path::new("<stream>"), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once(':') {
                let value = value.trim();
                let bad = |message: String| IngestError::Parse {
                    line: line_no,
                    column: 1,
                    message,
                };
                match key.trim() {
                    "geometry" => geometry = Some(value.parse::<Geometry>().map_err(|e| bad(e.to_string()))?),
                    "t0_us" => {
                        origin = Some(value.parse::<u64>().map_err(|_| bad(format!("bad t0_us {value:?}")))?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        events.push(parse_record(trimmed, line_no)?);
    }
    let geometry = geometry.or(options.geometry).ok_or(IngestError::MissingGeometry)?;
    for (i, e) in events.iter().enumerate() {
        if !geometry.contains(e.x, e.y) {
            return Err(IngestError::Parse {
                line: 0,
                column: 2,
                message: format!("event {i} at ({}, {}) lies outside {geometry}", e.x, e.y),
            });
        }
    }
    let count = events.len() as u64;
    let (events, t0_us) = finish_stream(events, origin, options)?;
    Ok(EventStream {
        header: EventFileHeader {
            format: EventFormat::Text,
            geometry,
            t0_us,
            event_count: Some(count),
        },
        events,
    })
}

fn parse_record(line: &str, line_no: usize) -> Result<Event, IngestError> {
    let mut fields = line.split(',');
    let mut column = 0;
    let mut next = |name: &str| {
        column += 1;
        let col = column;
        fields
            .next()
            .map(str::trim)
            .ok_or_else(|| IngestError::Parse {
                line: line_no,
                column: col,
                message: format!("missing {name}"),
            })
            .map(|s| (s, col))
    };
    fn num<T: std::str::FromStr>(s: &str, col: usize, line: usize, name: &str) -> Result<T, IngestError> {
        s.parse().map_err(|_| IngestError::Parse {
            line,
            column: col,
            message: format!("invalid {name} {s:?}"),
        })
    }
    let (t, c) = next("timestamp")?;
    let t_us: u64 = num(t, c, line_no, "timestamp")?;
    let (x, c) = next("x")?;
    let x: u16 = num(x, c, line_no, "x")?;
    let (y, c) = next("y")?;
    let y: u16 = num(y, c, line_no, "y")?;
    let (p, c) = next("polarity")?;
    let p: i8 = num(p, c, line_no, "polarity")?;
    let polarity = Polarity::from_i8(p).ok_or_else(|| IngestError::Parse {
        line: line_no,
        column: 4,
        message: format!("polarity must be 1, -1 or 0, got {p}"),
    })?;
    if fields.next().is_some() {
        return Err(IngestError::Parse {
            line: line_no,
            column: 5,
            message: "more than four fields".into(),
        });
    }
    Ok(Event::new(x, y, t_us, polarity))
}

/// Writes events with a geometry header and a zero time origin.
pub fn write_event_text(events: &[Event], geometry: Geometry, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "# geometry: {geometry}")?;
        writeln!(w, "# t0_us: 0")?;
        for e in events {
            writeln!(w, "{},{},{},{}", e.t_us, e.x, e.y, e.polarity.as_i8())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| IngestError::io(path, e))
}
