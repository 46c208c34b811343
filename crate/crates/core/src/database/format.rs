//! Little-endian on-disk layout of a [`ReferenceDatabase`].
//!
//! ```text
//! header (44 bytes)
//!   magic            [u8; 6]  "FVPRDB"
//!   version          u8       1
//!   flags            u8       bit 0: count frames present
//!   width, height    u16, u16
//!   duration_us      u64
//!   frame_count      u64
//!   subsample_factor u32
//!   body_len         u64
//!   header_crc       u32      CRC-32 of the 40 bytes above
//! body (body_len bytes), per frame
//!   window_index u64, t_start_us i64, traverse_id u32
//!   place tag u8 (0 | 1), place_id u64 when tag = 1
//!   layout tag u8
//!     0: n u32, then n ascending pixel indices u32
//!     1: ceil(width*height/64) packed words u64
//!   when flags bit 0: nnz u32, then nnz pairs (pixel index u32, count u32)
//! trailer
//!   body_crc u32      CRC-32 of the body
//! ```

use super::{DatabaseError, FrameMeta, ReferenceDatabase, ReferenceEntry, StoredBinary};
use crate::event_core::{word_count, BinaryFrame, CountFrame, Geometry};

pub const MAGIC: &[u8; 6] = b"FVPRDB";
pub const FORMAT_VERSION: u8 = 1;

const HEADER_LEN: usize = 44;
const FLAG_COUNTS: u8 = 1;
const LAYOUT_SPARSE: u8 = 0;
const LAYOUT_PACKED: u8 = 1;

pub(super) fn encode(db: &ReferenceDatabase) -> Vec<u8> {
    let mut body = Vec::new();
    for entry in &db.entries {
        let m = &entry.meta;
        body.extend_from_slice(&m.window_index.to_le_bytes());
        body.extend_from_slice(&m.t_start_us.to_le_bytes());
        body.extend_from_slice(&m.traverse_id.to_le_bytes());
        match m.place_id {
            Some(p) => {
                body.push(1);
                body.extend_from_slice(&p.to_le_bytes());
            }
            None => body.push(0),
        }
        match &entry.binary {
            StoredBinary::Sparse(ix) => {
                body.push(LAYOUT_SPARSE);
                body.extend_from_slice(&(ix.len() as u32).to_le_bytes());
                for i in ix {
                    body.extend_from_slice(&i.to_le_bytes());
                }
            }
            StoredBinary::Packed(f) => {
                body.push(LAYOUT_PACKED);
                for w in f.words() {
                    body.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
        if db.has_counts {
            let counts = entry.counts.as_ref().map(|c| c.counts()).unwrap_or(&[]);
            let nnz = counts.iter().filter(|&&c| c > 0).count() as u32;
            body.extend_from_slice(&nnz.to_le_bytes());
            for (i, &c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
                body.extend_from_slice(&(i as u32).to_le_bytes());
                body.extend_from_slice(&c.to_le_bytes());
            }
        }
    }

    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(if db.has_counts { FLAG_COUNTS } else { 0 });
    out.extend_from_slice(&db.geometry.width().to_le_bytes());
    out.extend_from_slice(&db.geometry.height().to_le_bytes());
    out.extend_from_slice(&db.window_duration_us.to_le_bytes());
    out.extend_from_slice(&(db.entries.len() as u64).to_le_bytes());
    out.extend_from_slice(&db.subsample_factor.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    let header_crc = crc32fast::hash(&out);
    out.extend_from_slice(&header_crc.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatabaseError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            DatabaseError::Malformed(format!("record runs past the body at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DatabaseError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DatabaseError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DatabaseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DatabaseError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, DatabaseError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<ReferenceDatabase, DatabaseError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(DatabaseError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(DatabaseError::Truncated {
            needed: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let stored = u32::from_le_bytes(bytes[HEADER_LEN - 4..HEADER_LEN].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..HEADER_LEN - 4]);
    if stored != computed {
        return Err(DatabaseError::Checksum {
            section: "header",
            stored,
            computed,
        });
    }

    let mut header = Cursor {
        bytes: &bytes[..HEADER_LEN - 4],
        pos: MAGIC.len(),
    };
    let version = header.u8()?;
    if version != FORMAT_VERSION {
        return Err(DatabaseError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let flags = header.u8()?;
    if flags & !FLAG_COUNTS != 0 {
        return Err(DatabaseError::Malformed(format!("unknown flags {flags:#04x}")));
    }
    let has_counts = flags & FLAG_COUNTS != 0;
    let width = header.u16()?;
    let height = header.u16()?;
    let geometry = Geometry::new(width, height).map_err(|e| DatabaseError::Malformed(e.to_string()))?;
    let window_duration_us = header.u64()?;
    let frame_count = header.u64()?;
    let subsample_factor = header.u32()?;
    let body_len = header.u64()?;
    if window_duration_us == 0 || !subsample_factor.is_power_of_two() {
        return Err(DatabaseError::Malformed("invalid duration or subsample factor".into()));
    }

    let needed = (HEADER_LEN as u64).saturating_add(body_len).saturating_add(4);
    if (bytes.len() as u64) < needed {
        return Err(DatabaseError::Truncated {
            needed,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > needed {
        return Err(DatabaseError::Malformed(format!(
            "{} trailing bytes after the checksum",
            bytes.len() as u64 - needed
        )));
    }
    let body_end = HEADER_LEN + body_len as usize;
    let body = &bytes[HEADER_LEN..body_end];
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DatabaseError::Checksum {
            section: "body",
            stored,
            computed,
        });
    }

    let pixels = geometry.pixel_count();
    let mut cur = Cursor { bytes: body, pos: 0 };
    let mut entries = Vec::new();
    for _ in 0..frame_count {
        let window_index = cur.u64()?;
        let t_start_us = cur.i64()?;
        let traverse_id = cur.u32()?;
        let place_id = match cur.u8()? {
            0 => None,
            1 => Some(cur.u64()?),
            t => return Err(DatabaseError::Malformed(format!("bad place tag {t}"))),
        };
        let binary = match cur.u8()? {
            LAYOUT_SPARSE => {
                let n = cur.u32()? as usize;
                let mut ix = Vec::with_capacity(n.min(pixels));
                for _ in 0..n {
                    let i = cur.u32()?;
                    if i as usize >= pixels || ix.last().is_some_and(|&p| p >= i) {
                        return Err(DatabaseError::Malformed("coordinate list not ascending or out of range".into()));
                    }
                    ix.push(i);
                }
                StoredBinary::Sparse(ix)
            }
            LAYOUT_PACKED => {
                let words = (0..word_count(pixels)).map(|_| cur.u64()).collect::<Result<Vec<_>, _>>()?;
                StoredBinary::Packed(
                    BinaryFrame::from_words(geometry, words)
                        .ok_or_else(|| DatabaseError::Malformed("bits set past the last pixel".into()))?,
                )
            }
            t => return Err(DatabaseError::Malformed(format!("bad layout tag {t}"))),
        };
        let counts = if has_counts {
            let nnz = cur.u32()? as usize;
            let mut counts = vec![0u32; pixels];
            for _ in 0..nnz {
                let i = cur.u32()? as usize;
                let c = cur.u32()?;
                if i >= pixels || c == 0 {
                    return Err(DatabaseError::Malformed("bad count entry".into()));
                }
                counts[i] = c;
            }
            Some(CountFrame::from_counts(geometry, counts).expect("length matches geometry"))
        } else {
            None
        };
        entries.push(ReferenceEntry {
            meta: FrameMeta {
                window_index,
                t_start_us,
                traverse_id,
                place_id,
            },
            binary,
            counts,
        });
    }
    if cur.pos != body.len() {
        return Err(DatabaseError::Malformed("frame records do not fill the body".into()));
    }
    let db = ReferenceDatabase {
        geometry,
        window_duration_us,
        subsample_factor,
        has_counts,
        entries,
    };
    db.check_order()?;
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_core::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mixed_db(n: usize, counts: bool, seed: u64) -> ReferenceDatabase {
        let geo = Geometry::MATCHING;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Vec::new();
        let mut meta = Vec::new();
        for i in 0..n {
            let density = if i % 3 == 0 { 0.2 } else { 0.005 };
            let c: Vec<u32> = (0..geo.pixel_count())
                .map(|_| if rng.random_bool(density) { rng.random_range(1..5) } else { 0 })
                .collect();
            let cf = CountFrame::from_counts(geo, c).unwrap();
            frames.push(if counts { Frame::Count(cf) } else { Frame::Binary(cf.binarize()) });
            let mut m = FrameMeta::new(i as u64 * 2, i as i64 * 250 - 125, (i / 400) as u32);
            m.window_index = (i % 400) as u64;
            if i % 2 == 0 {
                m.place_id = Some(i as u64 / 2);
            }
            meta.push(m);
        }
        ReferenceDatabase::build(geo, 125, frames, meta, 64).unwrap()
    }

    #[test]
    fn round_trips() {
        let geo = Geometry::new(3, 3).unwrap();
        let empty = ReferenceDatabase::build(geo, 7, vec![], vec![], 64).unwrap();
        assert_eq!(decode(&encode(&empty)).unwrap(), empty);

        for counts in [false, true] {
            let db = mixed_db(1000, counts, 4);
            assert!(db.entries().iter().any(|e| e.binary.is_sparse()));
            assert!(db.entries().iter().any(|e| !e.binary.is_sparse()));
            let bytes = encode(&db);
            assert_eq!(&bytes[..6], b"FVPRDB");
            assert_eq!(decode(&bytes).unwrap(), db);
            let sub = db.subsample(4).unwrap();
            assert_eq!(decode(&encode(&sub)).unwrap(), sub);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let db = mixed_db(50, true, 9);
        let bytes = encode(&db);
        for pos in (0..bytes.len()).step_by(7) {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(decode(&bad).is_err(), "flip at {pos} accepted");
        }
        let mut bad = bytes.clone();
        bad[HEADER_LEN + 20] ^= 1;
        assert!(matches!(decode(&bad), Err(DatabaseError::Checksum { section: "body", .. })));
        let mut bad = bytes.clone();
        bad[10] ^= 1;
        assert!(matches!(decode(&bad), Err(DatabaseError::Checksum { section: "header", .. })));
    }

    #[test]
    fn distinguishes_failures() {
        let db = mixed_db(5, false, 1);
        let bytes = encode(&db);
        assert!(matches!(decode(b"NOTADB"), Err(DatabaseError::BadMagic)));
        assert!(matches!(decode(&bytes[..20]), Err(DatabaseError::Truncated { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(DatabaseError::Truncated { .. })));

        let mut future = bytes.clone();
        future[6] = 2;
        let crc = crc32fast::hash(&future[..HEADER_LEN - 4]);
        future[HEADER_LEN - 4..HEADER_LEN].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            decode(&future),
            Err(DatabaseError::VersionMismatch { found: 2, expected: 1 })
        ));
    }
}
