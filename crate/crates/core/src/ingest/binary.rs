//! Fixed-record binary event format, little-endian.
//!
//! ```text
//! header (32 bytes)
//!   magic "FVPREV" [u8; 6], version u8 = 1, reserved u8 = 0,
//!   width u16, height u16, t0_us u64, event_count u64,
//!   header_crc u32 (CRC-32 of the 28 bytes above)
//! records (13 bytes each)
//!   t_us u64, x u16, y u16, p i8 (1 | -1)
//! trailer
//!   records_crc u32 (CRC-32 of all record bytes)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{finish_stream, EventFileHeader, EventFormat, EventStream, IngestError, ReadOptions};
use crate::event_core::{Event, Geometry, Polarity};

pub const BINARY_MAGIC: &[u8; 6] = b"FVPREV";
pub const BINARY_VERSION: u8 = 1;
const HEADER_LEN: usize = 32;
const RECORD_LEN: usize = 13;

pub fn write_event_binary(events: &[Event], geometry: Geometry, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(BINARY_MAGIC);
    header.push(BINARY_VERSION);
    header.push(0);
    header.extend_from_slice(&geometry.width().to_le_bytes());
    header.extend_from_slice(&geometry.height().to_le_bytes());
    header.extend_from_slice(&0u64.to_le_bytes());
    header.extend_from_slice(&(events.len() as u64).to_le_bytes());
    let crc = crc32fast::hash(&header);
    header.extend_from_slice(&crc.to_le_bytes());

    let mut write = || -> std::io::Result<()> {
        w.write_all(&header)?;
        let mut hasher = crc32fast::Hasher::new();
        let mut rec = [0u8; RECORD_LEN];
        for e in events {
            rec[..8].copy_from_slice(&e.t_us.to_le_bytes());
            rec[8..10].copy_from_slice(&e.x.to_le_bytes());
            rec[10..12].copy_from_slice(&e.y.to_le_bytes());
            rec[12] = e.polarity.as_i8() as u8;
            hasher.update(&rec);
            w.write_all(&rec)?;
        }
        w.write_all(&hasher.finalize().to_le_bytes())?;
        w.flush()
    };
    write().map_err(|e| IngestError::io(path, e))
}

pub fn parse_event_binary(path: impl AsRef<Path>, options: &ReadOptions) -> Result<EventStream, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_event_binary(BufReader::new(file), options).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::io(path, source),
        other => other,
    })
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: impl FnOnce() -> String) -> Result<(), IngestError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            IngestError::Truncated(what())
        } else {
            IngestError::io(Path::new("<stream>"), e)
        }
    })
}

/// Streams records from `reader`, verifying both checksums.
pub fn read_event_binary<R: Read>(mut reader: R, options: &ReadOptions) -> Result<EventStream, IngestError> {
    let mut header = [0u8; HEADER_LEN];
    let got = {
        let mut filled = 0;
        while filled < HEADER_LEN {
            match reader.read(&mut header[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(IngestError::io(Path::new("<stream>"), e)),
            }
        }
        filled
    };
    if got < BINARY_MAGIC.len() || &header[..6] != BINARY_MAGIC {
        return Err(IngestError::BadMagic);
    }
    if got < HEADER_LEN {
        return Err(IngestError::Truncated("header".into()));
    }
    let stored = u32::from_le_bytes(header[28..32].try_into().unwrap());
    if crc32fast::hash(&header[..28]) != stored {
        return Err(IngestError::Checksum { section: "header" });
    }
    if header[6] != BINARY_VERSION {
        return Err(IngestError::VersionMismatch(header[6]));
    }
    let width = u16::from_le_bytes([header[8], header[9]]);
    let height = u16::from_le_bytes([header[10], header[11]]);
    let geometry = Geometry::new(width, height).map_err(|e| IngestError::Malformed(e.to_string()))?;
    let t0_us = u64::from_le_bytes(header[12..20].try_into().unwrap());
    let count = u64::from_le_bytes(header[20..28].try_into().unwrap());

    let mut hasher = crc32fast::Hasher::new();
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_LEN];
    for i in 0..count {
        read_exact_or(&mut reader, &mut rec, || format!("record {i} of {count}"))?;
        hasher.update(&rec);
        let t_us = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let polarity = match rec[12] as i8 {
            1 => Polarity::On,
            -1 => Polarity::Off,
            p => return Err(IngestError::Malformed(format!("record {i}: polarity {p}"))),
        };
        if !geometry.contains(x, y) {
            return Err(IngestError::Malformed(format!("record {i}: ({x}, {y}) outside {geometry}")));
        }
        events.push(Event::new(x, y, t_us, polarity));
    }
    let mut crc = [0u8; 4];
    read_exact_or(&mut reader, &mut crc, || "trailing checksum".into())?;
    if u32::from_le_bytes(crc) != hasher.finalize() {
        return Err(IngestError::Checksum { section: "records" });
    }
    let mut extra = [0u8; 1];
    match reader.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => return Err(IngestError::Malformed("bytes after the trailing checksum".into())),
        Err(e) => return Err(IngestError::io(Path::new("<stream>"), e)),
    }
    let (events, t0_us) = finish_stream(events, Some(t0_us), options)?;
    Ok(EventStream {
        header: EventFileHeader {
            format: EventFormat::Binary,
            geometry,
            t0_us,
            event_count: Some(count),
        },
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Event> {
        (0..50)
            .map(|i| Event::new(i % 7, i % 5, i as u64 * 3, if i % 2 == 0 { Polarity::On } else { Polarity::Off }))
            .collect()
    }

    fn encode(events: &[Event]) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        write_event_binary(events, Geometry::new(8, 8).unwrap(), &p).unwrap();
        std::fs::read(p).unwrap()
    }

    #[test]
    fn round_trip_and_sizes() {
        let ev = sample();
        let bytes = encode(&ev);
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN * ev.len() + 4);
        let s = read_event_binary(&bytes[..], &ReadOptions::default()).unwrap();
        assert_eq!(s.events, ev);
        assert_eq!(s.header.event_count, Some(50));

        let empty = encode(&[]);
        assert!(read_event_binary(&empty[..], &ReadOptions::default()).unwrap().events.is_empty());
    }

    #[test]
    fn detects_damage() {
        let bytes = encode(&sample());
        let cut = HEADER_LEN + RECORD_LEN * 10 + 5;
        assert!(matches!(
            read_event_binary(&bytes[..cut], &ReadOptions::default()),
            Err(IngestError::Truncated(_))
        ));
        assert!(matches!(
            read_event_binary(&b"FVPRDBxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx"[..], &ReadOptions::default()),
            Err(IngestError::BadMagic)
        ));
        for pos in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x04;
            assert!(read_event_binary(&bad[..], &ReadOptions::default()).is_err(), "flip at {pos}");
        }
    }
}
