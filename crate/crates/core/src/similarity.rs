//! Matcher scoring: overlap similarity with reference activity compensation,
//! the count-frame Zoom distance, and the SAD-family baselines.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_core::{BinaryFrame, CountFrame, Geometry};

/// Queries with fewer active pixels than this take the coordinate-list path.
pub const DEFAULT_SPARSE_THRESHOLD: u32 = 64;

/// Pixel budget of the random and variance pixel-selection baselines.
pub const DEFAULT_PIXEL_SAMPLES: usize = 150;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("geometry mismatch: query {query}, reference {reference}")]
    GeometryMismatch { query: Geometry, reference: Geometry },
    #[error("reference set is empty")]
    EmptyReferences,
    #[error("requested {requested} pixels but the frame only has {available}")]
    TooManyPixels { requested: usize, available: usize },
    #[error("pixel ({x}, {y}) lies outside {geometry}")]
    PixelOutOfBounds { x: u16, y: u16, geometry: Geometry },
    #[error("unknown matcher {0:?}")]
    UnknownMatcher(String),
}

fn same_geometry(query: Geometry, reference: Geometry) -> Result<(), SimilarityError> {
    if query == reference {
        Ok(())
    } else {
        Err(SimilarityError::GeometryMismatch { query, reference })
    }
}

/// Which overlap kernel to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlapPath {
    /// Coordinate list below `threshold` query activity, word-wise AND otherwise.
    Auto { threshold: u32 },
    Packed,
    Sparse,
}

impl Default for OverlapPath {
    fn default() -> Self {
        OverlapPath::Auto {
            threshold: DEFAULT_SPARSE_THRESHOLD,
        }
    }
}

/// Popcount of the word-wise AND of two equally sized bit arrays.
#[inline]
pub fn and_popcount(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

/// Number of listed pixel indices that are set in `frame`.
#[inline]
pub fn count_hits(indices: &[u32], frame: &BinaryFrame) -> u32 {
    indices
        .iter()
        .filter(|&&i| frame.contains_index(i as usize))
        .count() as u32
}

/// Number of pixels active in both frames.
pub fn overlap_similarity(query: &BinaryFrame, reference: &BinaryFrame) -> Result<u32, SimilarityError> {
    overlap_with_path(query, reference, OverlapPath::default())
}

pub fn overlap_with_path(
    query: &BinaryFrame,
    reference: &BinaryFrame,
    path: OverlapPath,
) -> Result<u32, SimilarityError> {
    same_geometry(query.geometry(), reference.geometry())?;
    let sparse = match path {
        OverlapPath::Auto { threshold } => query.active_count() < threshold,
        OverlapPath::Packed => false,
        OverlapPath::Sparse => true,
    };
    Ok(if sparse {
        query
            .active_indices()
            .filter(|&i| reference.contains_index(i as usize))
            .count() as u32
    } else {
        and_popcount(query.words(), reference.words())
    })
}

/// Reference activity compensation factor.
///
/// `query_active / ref_active` when the reference is strictly more active,
/// otherwise 1. An empty query against a non-empty reference gives 0.
#[inline]
pub fn rac_weight(query_active: u32, ref_active: u32) -> f64 {
    if ref_active > query_active {
        query_active as f64 / ref_active as f64
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlashScore {
    pub overlap: u32,
    pub weight: f64,
    pub weighted: f64,
}

impl FlashScore {
    pub fn from_overlap(overlap: u32, query_active: u32, ref_active: u32, compensate: bool) -> Self {
        let weight = if compensate {
            rac_weight(query_active, ref_active)
        } else {
            1.0
        };
        Self {
            overlap,
            weight,
            weighted: weight * overlap as f64,
        }
    }
}

pub fn flash_score(query: &BinaryFrame, reference: &BinaryFrame) -> Result<FlashScore, SimilarityError> {
    let overlap = overlap_similarity(query, reference)?;
    Ok(FlashScore::from_overlap(
        overlap,
        query.active_count(),
        reference.active_count(),
        true,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlashMatch {
    pub index: usize,
    pub score: FlashScore,
    /// The query had no active pixels, so every score is zero.
    pub degenerate: bool,
}

/// Highest weighted score wins; among equals the smallest index.
pub fn best_match_flash(query: &BinaryFrame, references: &[BinaryFrame]) -> Result<FlashMatch, SimilarityError> {
    let ranked = top_k_flash(query, references, 1)?;
    let (index, score) = ranked[0];
    Ok(FlashMatch {
        index,
        score,
        degenerate: query.active_count() == 0,
    })
}

/// The `k` best references in descending weighted score, ties by index.
pub fn top_k_flash(
    query: &BinaryFrame,
    references: &[BinaryFrame],
    k: usize,
) -> Result<Vec<(usize, FlashScore)>, SimilarityError> {
    if references.is_empty() {
        return Err(SimilarityError::EmptyReferences);
    }
    let mut scored = references
        .iter()
        .map(|r| flash_score(query, r))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .enumerate()
        .collect::<Vec<_>>();
    scored.sort_by(|a, b| rank_descending((a.0, a.1.weighted), (b.0, b.1.weighted)));
    scored.truncate(k.max(1));
    Ok(scored)
}

/// Ordering for similarity rankings: larger score first, then smaller index.
#[inline]
pub fn rank_descending(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Ordering for distance rankings: smaller score first, then smaller index.
#[inline]
pub fn rank_ascending(a: (usize, f64), b: (usize, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Sum of `|q - r|` over the pixels active in the query.
pub fn masked_sad(query: &CountFrame, reference: &CountFrame) -> Result<u64, SimilarityError> {
    same_geometry(query.geometry(), reference.geometry())?;
    Ok(query
        .counts()
        .iter()
        .zip(reference.counts())
        .filter(|(&q, _)| q > 0)
        .map(|(&q, &r)| q.abs_diff(r) as u64)
        .sum())
}

/// Activity weight of the Zoom distance: `ref_active / query_active` when the
/// reference is at least as active as the query, otherwise 1. An empty query
/// gets weight 1.
#[inline]
pub fn zoom_weight(query_active: u32, ref_active: u32) -> f64 {
    if query_active == 0 {
        return 1.0;
    }
    if ref_active >= query_active {
        ref_active as f64 / query_active as f64
    } else {
        1.0
    }
}

/// How the Zoom activity weight combines with the masked SAD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZoomWeighting {
    /// `w · D`: busier references look farther away.
    #[default]
    Multiply,
    /// `D / w`.
    Divide,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoomScore {
    pub masked_sad: u64,
    pub weight: f64,
    pub weighted: f64,
}

impl ZoomScore {
    pub fn from_parts(
        masked_sad: u64,
        query_active: u32,
        ref_active: u32,
        compensate: bool,
        weighting: ZoomWeighting,
    ) -> Self {
        let weight = if compensate {
            zoom_weight(query_active, ref_active)
        } else {
            1.0
        };
        let weighted = match weighting {
            ZoomWeighting::Multiply => weight * masked_sad as f64,
            ZoomWeighting::Divide => masked_sad as f64 / weight,
        };
        Self {
            masked_sad,
            weight,
            weighted,
        }
    }
}

pub fn zoom_score(
    query: &CountFrame,
    reference: &CountFrame,
    weighting: ZoomWeighting,
) -> Result<ZoomScore, SimilarityError> {
    let d = masked_sad(query, reference)?;
    Ok(ZoomScore::from_parts(
        d,
        query.active_count(),
        reference.active_count(),
        true,
        weighting,
    ))
}

/// Sum of absolute count differences over every pixel.
pub fn full_sad(query: &CountFrame, reference: &CountFrame) -> Result<u64, SimilarityError> {
    same_geometry(query.geometry(), reference.geometry())?;
    Ok(query
        .counts()
        .iter()
        .zip(reference.counts())
        .map(|(&q, &r)| q.abs_diff(r) as u64)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelOrigin {
    Random,
    Variance,
}

/// A fixed list of pixels shared by every query-reference comparison of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelSet {
    geometry: Geometry,
    indices: Vec<u32>,
    origin: PixelOrigin,
}

impl PixelSet {
    pub fn new(geometry: Geometry, coords: &[(u16, u16)], origin: PixelOrigin) -> Result<Self, SimilarityError> {
        let mut indices = Vec::with_capacity(coords.len());
        for &(x, y) in coords {
            if !geometry.contains(x, y) {
                return Err(SimilarityError::PixelOutOfBounds { x, y, geometry });
            }
            indices.push(geometry.index(x, y) as u32);
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(Self {
            geometry,
            indices,
            origin,
        })
    }

    pub fn all(geometry: Geometry, origin: PixelOrigin) -> Self {
        Self {
            geometry,
            indices: (0..geometry.pixel_count() as u32).collect(),
            origin,
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn origin(&self) -> PixelOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row-major pixel indices in ascending order.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn coords(&self) -> Vec<(u16, u16)> {
        self.indices
            .iter()
            .map(|&i| self.geometry.coords(i as usize))
            .collect()
    }
}

fn check_budget(geometry: Geometry, n: usize) -> Result<(), SimilarityError> {
    if n > geometry.pixel_count() {
        Err(SimilarityError::TooManyPixels {
            requested: n,
            available: geometry.pixel_count(),
        })
    } else {
        Ok(())
    }
}

/// `n` distinct pixels drawn uniformly; the same seed always gives the same set.
pub fn select_random_pixels(geometry: Geometry, n: usize, seed: u64) -> Result<PixelSet, SimilarityError> {
    check_budget(geometry, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<u32> = rand::seq::index::sample(&mut rng, geometry.pixel_count(), n)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    indices.sort_unstable();
    Ok(PixelSet {
        geometry,
        indices,
        origin: PixelOrigin::Random,
    })
}

/// The `n` pixels whose counts vary most across the reference frames.
///
/// Population variance; ties resolved in row-major order.
pub fn select_variance_pixels(references: &[CountFrame], n: usize) -> Result<PixelSet, SimilarityError> {
    let first = references.first().ok_or(SimilarityError::EmptyReferences)?;
    let geometry = first.geometry();
    check_budget(geometry, n)?;
    let pixels = geometry.pixel_count();
    let mut sum = vec![0u64; pixels];
    let mut sum_sq = vec![0u128; pixels];
    for frame in references {
        same_geometry(geometry, frame.geometry())?;
        for (i, &c) in frame.counts().iter().enumerate() {
            sum[i] += c as u64;
            sum_sq[i] += (c as u128) * (c as u128);
        }
    }
    // N^2 times the population variance, exact in integers.
    let frames = references.len() as u128;
    let mut order: Vec<(u128, u32)> = (0..pixels)
        .map(|i| (frames * sum_sq[i] - (sum[i] as u128) * (sum[i] as u128), i as u32))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut indices: Vec<u32> = order.into_iter().take(n).map(|(_, i)| i).collect();
    indices.sort_unstable();
    Ok(PixelSet {
        geometry,
        indices,
        origin: PixelOrigin::Variance,
    })
}

/// Sum of absolute count differences restricted to a fixed pixel set.
pub fn pixel_sad(query: &CountFrame, reference: &CountFrame, pixels: &PixelSet) -> Result<u64, SimilarityError> {
    same_geometry(query.geometry(), reference.geometry())?;
    same_geometry(query.geometry(), pixels.geometry())?;
    let (q, r) = (query.counts(), reference.counts());
    Ok(pixels
        .indices()
        .iter()
        .map(|&i| q[i as usize].abs_diff(r[i as usize]) as u64)
        .sum())
}

/// Matcher selectable from the command line and run configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    Flash,
    FlashNoRac,
    Zoom,
    ZoomNoRac,
    Sad,
    RandPixSad,
    SparseEventVpr,
}

impl Matcher {
    pub const ALL: [Matcher; 7] = [
        Matcher::Flash,
        Matcher::FlashNoRac,
        Matcher::Zoom,
        Matcher::ZoomNoRac,
        Matcher::Sad,
        Matcher::RandPixSad,
        Matcher::SparseEventVpr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Matcher::Flash => "flash",
            Matcher::FlashNoRac => "flash-no-rac",
            Matcher::Zoom => "zoom",
            Matcher::ZoomNoRac => "zoom-no-rac",
            Matcher::Sad => "sad",
            Matcher::RandPixSad => "rand-pix-sad",
            Matcher::SparseEventVpr => "sparse-event-vpr",
        }
    }

    /// Whether the matcher reads count frames rather than binary frames.
    pub fn needs_counts(self) -> bool {
        !matches!(self, Matcher::Flash | Matcher::FlashNoRac)
    }

    /// `true` for similarities (argmax), `false` for distances (argmin).
    pub fn higher_is_better(self) -> bool {
        !self.needs_counts()
    }
}

impl fmt::Display for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Matcher {
    type Err = SimilarityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Matcher::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimilarityError::UnknownMatcher(s.to_string()))
    }
}
