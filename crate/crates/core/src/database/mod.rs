//! Reference database: hybrid coordinate-list / bit-packed storage,
//! per-traverse power-of-two subsampling and exhaustive search.

mod format;

use std::io;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{FORMAT_VERSION, MAGIC};

use crate::event_core::{BinaryFrame, CountFrame, EventError, Frame, Geometry};
use crate::exec::Execution;
use crate::similarity::{
    self, and_popcount, count_hits, rank_ascending, rank_descending, FlashScore, Matcher, PixelSet,
    SimilarityError, ZoomScore, ZoomWeighting, DEFAULT_PIXEL_SAMPLES, DEFAULT_SPARSE_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum DatabaseError {
    #[error("{0}")]
    Heterogeneous(String),
    #[error("frame {position} breaks (traverse, window) ordering")]
    Ordering { position: usize },
    #[error("subsample factor {0} is not a power of two")]
    NotPowerOfTwo(u32),
    #[error("reference database is empty")]
    Empty,
    #[error("matcher {0} needs count frames but the database stores binary frames only")]
    MissingCounts(Matcher),
    #[error("query for matcher {0} carries no count frame")]
    QueryMissingCounts(Matcher),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a reference database file (bad magic)")]
    BadMagic,
    #[error("unsupported database format version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("database file truncated: need {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("{section} checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        section: &'static str,
        stored: u32,
        computed: u32,
    },
    #[error("malformed database file: {0}")]
    Malformed(String),
}

/// Per-frame bookkeeping kept alongside each descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub window_index: u64,
    pub t_start_us: i64,
    pub traverse_id: u32,
    pub place_id: Option<u64>,
}

impl FrameMeta {
    pub fn new(window_index: u64, t_start_us: i64, traverse_id: u32) -> Self {
        Self {
            window_index,
            t_start_us,
            traverse_id,
            place_id: None,
        }
    }
}

/// Occupancy of one reference frame in whichever layout fits its density.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoredBinary {
    /// Ascending row-major indices of the active pixels.
    Sparse(Vec<u32>),
    Packed(BinaryFrame),
}

impl StoredBinary {
    pub fn from_frame(frame: &BinaryFrame, sparse_threshold: u32) -> Self {
        if frame.active_count() < sparse_threshold {
            StoredBinary::Sparse(frame.active_indices().collect())
        } else {
            StoredBinary::Packed(frame.clone().with_window(0, 0))
        }
    }

    pub fn active_count(&self) -> u32 {
        match self {
            StoredBinary::Sparse(ix) => ix.len() as u32,
            StoredBinary::Packed(f) => f.active_count(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, StoredBinary::Sparse(_))
    }

    pub fn to_frame(&self, geometry: Geometry) -> BinaryFrame {
        match self {
            StoredBinary::Sparse(ix) => BinaryFrame::from_indices(geometry, ix.iter().map(|&i| i as usize))
                .expect("stored indices are validated on construction"),
            StoredBinary::Packed(f) => f.clone(),
        }
    }

    /// Overlap with a prepared query; every layout pairing gives the same integer.
    #[inline]
    pub fn overlap(&self, query: &Query, sparse_threshold: u32) -> u32 {
        match self {
            StoredBinary::Sparse(ix) => count_hits(ix, &query.binary),
            StoredBinary::Packed(f) if query.binary.active_count() < sparse_threshold => {
                count_hits(&query.indices, f)
            }
            StoredBinary::Packed(f) => and_popcount(query.binary.words(), f.words()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceEntry {
    pub meta: FrameMeta,
    pub binary: StoredBinary,
    pub counts: Option<CountFrame>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceDatabase {
    geometry: Geometry,
    window_duration_us: u64,
    subsample_factor: u32,
    has_counts: bool,
    entries: Vec<ReferenceEntry>,
}

impl ReferenceDatabase {
    /// Builds a database from frames of one kind (all binary or all count).
    ///
    /// Frames below `sparse_threshold` active pixels are kept as coordinate
    /// lists, the rest as packed bit arrays.
    pub fn build(
        geometry: Geometry,
        window_duration_us: u64,
        frames: Vec<Frame>,
        meta: Vec<FrameMeta>,
        sparse_threshold: u32,
    ) -> Result<Self, DatabaseError> {
        if window_duration_us == 0 {
            return Err(EventError::InvalidWindow.into());
        }
        if frames.len() != meta.len() {
            return Err(DatabaseError::Heterogeneous(format!(
                "{} frames but {} metadata records",
                frames.len(),
                meta.len()
            )));
        }
        let has_counts = matches!(frames.first(), Some(Frame::Count(_)));
        let mut entries = Vec::with_capacity(frames.len());
        for (position, (frame, meta)) in frames.into_iter().zip(meta).enumerate() {
            let (binary, counts) = match frame {
                Frame::Count(c) if has_counts => (c.binarize(), Some(c)),
                Frame::Binary(b) if !has_counts => (b, None),
                _ => {
                    return Err(DatabaseError::Heterogeneous(format!(
                        "frame {position} mixes binary and count descriptors"
                    )))
                }
            };
            if binary.geometry() != geometry {
                return Err(DatabaseError::Heterogeneous(format!(
                    "frame {position} has geometry {}, database is {geometry}",
                    binary.geometry()
                )));
            }
            entries.push(ReferenceEntry {
                meta,
                binary: StoredBinary::from_frame(&binary, sparse_threshold),
                counts: counts.map(|c| c.with_window(0, 0)),
            });
        }
        let db = Self {
            geometry,
            window_duration_us,
            subsample_factor: 1,
            has_counts,
            entries,
        };
        db.check_order()?;
        Ok(db)
    }

    /// Convenience for a single traverse of frames carrying their own window metadata.
    pub fn from_frames(
        geometry: Geometry,
        window_duration_us: u64,
        traverse_id: u32,
        frames: Vec<Frame>,
        sparse_threshold: u32,
    ) -> Result<Self, DatabaseError> {
        let meta = frames
            .iter()
            .map(|f| {
                let (w, t) = match f {
                    Frame::Binary(b) => (b.window_index(), b.t_start_us()),
                    Frame::Count(c) => (c.window_index(), c.t_start_us()),
                };
                FrameMeta::new(w, t, traverse_id)
            })
            .collect();
        Self::build(geometry, window_duration_us, frames, meta, sparse_threshold)
    }

    fn check_order(&self) -> Result<(), DatabaseError> {
        for (i, pair) in self.entries.windows(2).enumerate() {
            let (a, b) = (&pair[0].meta, &pair[1].meta);
            let ok = a.traverse_id < b.traverse_id
                || (a.traverse_id == b.traverse_id && a.window_index < b.window_index);
            if !ok {
                return Err(DatabaseError::Ordering { position: i + 1 });
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn window_duration_us(&self) -> u64 {
        self.window_duration_us
    }

    pub fn subsample_factor(&self) -> u32 {
        self.subsample_factor
    }

    pub fn has_counts(&self) -> bool {
        self.has_counts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn meta(&self, index: usize) -> Option<&FrameMeta> {
        self.entries.get(index).map(|e| &e.meta)
    }

    /// Frame `index` as a binary frame with its window metadata restored.
    pub fn binary_frame(&self, index: usize) -> Option<BinaryFrame> {
        self.entries.get(index).map(|e| {
            e.binary
                .to_frame(self.geometry)
                .with_window(e.meta.window_index, e.meta.t_start_us)
        })
    }

    pub fn count_frame(&self, index: usize) -> Option<CountFrame> {
        let e = self.entries.get(index)?;
        e.counts
            .as_ref()
            .map(|c| c.clone().with_window(e.meta.window_index, e.meta.t_start_us))
    }

    pub fn count_frames(&self) -> Vec<CountFrame> {
        (0..self.len()).filter_map(|i| self.count_frame(i)).collect()
    }

    pub fn mean_active_pixels(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let total: u64 = self.entries.iter().map(|e| e.binary.active_count() as u64).sum();
        total as f64 / self.entries.len() as f64
    }

    /// Keeps every `factor`-th frame of each traverse by `log2(factor)`
    /// successive halvings, each retaining even positions.
    pub fn subsample(&self, factor: u32) -> Result<Self, DatabaseError> {
        if !factor.is_power_of_two() {
            return Err(DatabaseError::NotPowerOfTwo(factor));
        }
        let mut entries = self.entries.clone();
        for _ in 0..factor.trailing_zeros() {
            entries = halve(entries);
        }
        Ok(Self {
            entries,
            subsample_factor: self.subsample_factor.saturating_mul(factor),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Self {
        Self {
            geometry: self.geometry,
            window_duration_us: self.window_duration_us,
            subsample_factor: self.subsample_factor,
            has_counts: self.has_counts,
            entries: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), DatabaseError> {
        std::fs::write(path, format::encode(self))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, DatabaseError> {
        let bytes = std::fs::read(path)?;
        format::decode(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatabaseError> {
        format::decode(bytes)
    }
}

fn halve(entries: Vec<ReferenceEntry>) -> Vec<ReferenceEntry> {
    let mut out = Vec::with_capacity(entries.len() / 2 + 1);
    let mut position = 0usize;
    let mut traverse = None;
    for entry in entries {
        if traverse != Some(entry.meta.traverse_id) {
            traverse = Some(entry.meta.traverse_id);
            position = 0;
        }
        if position.is_multiple_of(2) {
            out.push(entry);
        }
        position += 1;
    }
    out
}

/// A query frame prepared for repeated scoring.
#[derive(Clone, Debug)]
pub struct Query {
    binary: BinaryFrame,
    indices: Vec<u32>,
    counts: Option<CountFrame>,
}

impl Query {
    pub fn from_binary(binary: BinaryFrame) -> Self {
        let indices = binary.active_indices().collect();
        Self {
            binary,
            indices,
            counts: None,
        }
    }

    pub fn from_counts(counts: CountFrame) -> Self {
        let mut q = Self::from_binary(counts.binarize());
        q.counts = Some(counts);
        q
    }

    pub fn from_frame(frame: Frame) -> Self {
        match frame {
            Frame::Binary(b) => Self::from_binary(b),
            Frame::Count(c) => Self::from_counts(c),
        }
    }

    pub fn binary(&self) -> &BinaryFrame {
        &self.binary
    }

    pub fn counts(&self) -> Option<&CountFrame> {
        self.counts.as_ref()
    }

    pub fn active_count(&self) -> u32 {
        self.binary.active_count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query_index: usize,
    /// Best first: descending for similarities, ascending for distances.
    pub ranked: Vec<Ranked>,
    /// The query had no active pixels.
    pub degenerate: bool,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl SearchResult {
    pub fn top(&self) -> Option<usize> {
        self.ranked.first().map(|r| r.index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub matcher: Matcher,
    pub zoom_weighting: ZoomWeighting,
    pub pixel_samples: usize,
    /// Seed of the random pixel set.
    pub seed: u64,
    pub sparse_threshold: u32,
    pub execution: Execution,
}

impl SearchConfig {
    pub fn new(matcher: Matcher) -> Self {
        Self {
            matcher,
            zoom_weighting: ZoomWeighting::default(),
            pixel_samples: DEFAULT_PIXEL_SAMPLES,
            seed: 0,
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            execution: Execution::default(),
        }
    }
}

/// Exhaustive linear-scan matcher over one database.
pub struct Searcher<'a> {
    db: &'a ReferenceDatabase,
    config: SearchConfig,
    pixels: Option<PixelSet>,
}

impl<'a> Searcher<'a> {
    pub fn new(db: &'a ReferenceDatabase, config: SearchConfig) -> Result<Self, DatabaseError> {
        if db.is_empty() {
            return Err(DatabaseError::Empty);
        }
        let matcher = config.matcher;
        if matcher.needs_counts() && !db.has_counts() {
            return Err(DatabaseError::MissingCounts(matcher));
        }
        let pixels = match matcher {
            Matcher::RandPixSad => Some(similarity::select_random_pixels(
                db.geometry(),
                config.pixel_samples,
                config.seed,
            )?),
            Matcher::SparseEventVpr => Some(similarity::select_variance_pixels(
                &db.count_frames(),
                config.pixel_samples,
            )?),
            _ => None,
        };
        Ok(Self { db, config, pixels })
    }

    pub fn database(&self) -> &ReferenceDatabase {
        self.db
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn pixels(&self) -> Option<&PixelSet> {
        self.pixels.as_ref()
    }

    /// Score of the query against every reference, in database order.
    pub fn scores(&self, query: &Query) -> Result<Vec<f64>, DatabaseError> {
        let matcher = self.config.matcher;
        query.binary.geometry().ensure_same(&self.db.geometry())?;
        let qa = query.active_count();
        let threshold = self.config.sparse_threshold;
        let exec = self.config.execution;
        let entries = self.db.entries();
        let scores = match matcher {
            Matcher::Flash | Matcher::FlashNoRac => {
                let compensate = matcher == Matcher::Flash;
                exec.map(entries, |_, e| {
                    let overlap = e.binary.overlap(query, threshold);
                    FlashScore::from_overlap(overlap, qa, e.binary.active_count(), compensate).weighted
                })
            }
            _ => {
                let qc = query.counts().ok_or(DatabaseError::QueryMissingCounts(matcher))?;
                let weighting = self.config.zoom_weighting;
                let pixels = self.pixels.as_ref();
                exec.map(entries, |_, e| {
                    let rc = e.counts.as_ref().expect("count database has counts everywhere");
                    let d = match matcher {
                        Matcher::Zoom | Matcher::ZoomNoRac => {
                            let sad = similarity::masked_sad(qc, rc).expect("geometry checked");
                            return ZoomScore::from_parts(
                                sad,
                                qa,
                                rc.active_count(),
                                matcher == Matcher::Zoom,
                                weighting,
                            )
                            .weighted;
                        }
                        Matcher::Sad => similarity::full_sad(qc, rc),
                        _ => similarity::pixel_sad(qc, rc, pixels.expect("pixel set prepared")),
                    };
                    d.expect("geometry checked") as f64
                })
            }
        };
        Ok(scores)
    }

    pub fn search(&self, query_index: usize, query: &Query, k: usize) -> Result<SearchResult, DatabaseError> {
        let started = Instant::now();
        let scores = self.scores(query)?;
        let ranked = select_top_k(&scores, k, self.config.matcher.higher_is_better());
        Ok(SearchResult {
            query_index,
            ranked,
            degenerate: query.active_count() == 0,
            elapsed: started.elapsed(),
        })
    }
}

/// Best `k` entries under a total order with smallest-index tie-break.
pub fn select_top_k(scores: &[f64], k: usize, higher_is_better: bool) -> Vec<Ranked> {
    let k = k.clamp(1, scores.len().max(1)).min(scores.len());
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        if higher_is_better {
            rank_descending(*a, *b)
        } else {
            rank_ascending(*a, *b)
        }
    };
    let mut items: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    if k == 1 {
        let best = items.into_iter().min_by(cmp);
        return best.map(|(index, score)| Ranked { index, score }).into_iter().collect();
    }
    if k < items.len() {
        items.select_nth_unstable_by(k - 1, cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
        .into_iter()
        .map(|(index, score)| Ranked { index, score })
        .collect()
}

/// One-shot search without keeping a [`Searcher`] around.
pub fn search(
    db: &ReferenceDatabase,
    query: &Query,
    config: SearchConfig,
    k: usize,
) -> Result<SearchResult, DatabaseError> {
    Searcher::new(db, config)?.search(0, query, k)
}
