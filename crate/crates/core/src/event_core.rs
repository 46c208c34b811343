//! Event records, sensor geometry, temporal windowing and frame construction.
//!
//! A stream of events is cut into disjoint, left-open windows
//! `(start + i·δ, start + (i+1)·δ]`. Each window becomes either a
//! [`BinaryFrame`] (pixel occupancy, the matching descriptor) or a
//! [`CountFrame`] (per-pixel event counts, used by the SAD-style baselines).
//! Polarity is carried on [`Event`] but never influences a frame.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EventError {
    #[error("invalid geometry {width}x{height}: both sides must be at least 1")]
    InvalidGeometry { width: u32, height: u32 },
    #[error("cannot parse geometry {0:?}, expected WIDTHxHEIGHT")]
    GeometryParse(String),
    #[error("window duration must be at least 1 us")]
    InvalidWindow,
    #[error("event {index} at t={t_us}us is earlier than its predecessor at t={prev_us}us")]
    OutOfOrder { index: usize, t_us: u64, prev_us: u64 },
    #[error("event at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds { x: u16, y: u16, width: u16, height: u16 },
    #[error("downsample target {dst} exceeds source {src}")]
    UpsampleRequested { src: Geometry, dst: Geometry },
    #[error("geometry mismatch: {left} vs {right}")]
    GeometryMismatch { left: Geometry, right: Geometry },
}

/// Sign of a brightness change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    /// Accepts `1` / `-1`, and `0` as the off polarity used by some dataset exports.
    pub fn from_i8(value: i8) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 | 0 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }
}

/// One asynchronous brightness-change record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t_us: u64,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t_us: u64, polarity: Polarity) -> Self {
        Self { x, y, t_us, polarity }
    }
}

/// Sensor or frame resolution in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Geometry {
    width: u16,
    height: u16,
}

impl Geometry {
    /// DAVIS346 sensor resolution.
    pub const DAVIS346: Geometry = Geometry { width: 346, height: 260 };
    /// Resolution the matcher operates at after downsampling.
    pub const MATCHING: Geometry = Geometry { width: 86, height: 45 };

    pub fn new(width: u16, height: u16) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::InvalidGeometry {
                width: width.into(),
                height: height.into(),
            });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }

    /// Row-major linear index of `(x, y)`; the caller guarantees containment.
    #[inline]
    pub fn index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (u16, u16) {
        let w = self.width as usize;
        ((index % w) as u16, (index / w) as u16)
    }

    pub fn check(&self, event: &Event) -> Result<(), EventError> {
        if self.contains(event.x, event.y) {
            Ok(())
        } else {
            Err(EventError::OutOfBounds {
                x: event.x,
                y: event.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    pub fn ensure_same(&self, other: &Geometry) -> Result<(), EventError> {
        if self == other {
            Ok(())
        } else {
            Err(EventError::GeometryMismatch { left: *self, right: *other })
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Geometry {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || EventError::GeometryParse(s.to_string());
        let (w, h) = s.trim().split_once(['x', 'X']).ok_or_else(err)?;
        let w: u16 = w.trim().parse().map_err(|_| err())?;
        let h: u16 = h.trim().parse().map_err(|_| err())?;
        Geometry::new(w, h)
    }
}

impl TryFrom<String> for Geometry {
    type Error = EventError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Geometry> for String {
    fn from(value: Geometry) -> Self {
        value.to_string()
    }
}

/// Window length and the stream time the first window opens after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub duration_us: u64,
    /// Window `i` covers `(start_us + i·δ, start_us + (i+1)·δ]`. Signed so that an
    /// event at t = 0 can sit in window 0.
    pub start_us: i64,
}

impl WindowSpec {
    pub fn new(duration_us: u64, start_us: i64) -> Result<Self, EventError> {
        if duration_us == 0 {
            return Err(EventError::InvalidWindow);
        }
        Ok(Self { duration_us, start_us })
    }

    /// Default alignment: the largest multiple of δ strictly below the first
    /// timestamp, so the first event always lands in window 0.
    pub fn aligned(duration_us: u64, events: &[Event]) -> Result<Self, EventError> {
        if duration_us == 0 {
            return Err(EventError::InvalidWindow);
        }
        let start = match events.first() {
            Some(e) => Self::aligned_start(duration_us, e.t_us),
            None => 0,
        };
        Ok(Self { duration_us, start_us: start })
    }

    pub fn aligned_start(duration_us: u64, first_t_us: u64) -> i64 {
        let d = duration_us as i64;
        (first_t_us as i64 - 1).div_euclid(d) * d
    }

    /// Index of the window holding timestamp `t_us`, or `None` if `t_us <= start_us`.
    #[inline]
    pub fn window_of(&self, t_us: u64) -> Option<u64> {
        let offset = t_us as i128 - self.start_us as i128;
        if offset <= 0 {
            None
        } else {
            Some(((offset - 1) / self.duration_us as i128) as u64)
        }
    }

    /// Exclusive left edge of window `index`.
    pub fn window_start(&self, index: u64) -> i64 {
        self.start_us + (index as i64) * self.duration_us as i64
    }
}

/// Checks that timestamps never decrease.
pub fn check_sorted(events: &[Event]) -> Result<(), EventError> {
    match events.windows(2).position(|w| w[1].t_us < w[0].t_us) {
        Some(i) => Err(EventError::OutOfOrder {
            index: i + 1,
            t_us: events[i + 1].t_us,
            prev_us: events[i].t_us,
        }),
        None => Ok(()),
    }
}

/// Splits a sorted stream into per-window index ranges.
///
/// Window `i` holds exactly the events with `start + i·δ < t <= start + (i+1)·δ`.
/// Empty windows between populated ones are kept, so the `i`-th range always
/// belongs to window `i`. Events at or before `start_us` are not covered.
pub fn partition_windows(
    events: &[Event],
    spec: &WindowSpec,
) -> Result<Vec<Range<usize>>, EventError> {
    if spec.duration_us == 0 {
        return Err(EventError::InvalidWindow);
    }
    check_sorted(events)?;
    Ok(WindowRanges::new(events, *spec).map(|(_, r)| r).collect())
}

/// Lazy iterator over `(window_index, range)` pairs of a sorted event slice.
///
/// Assumes the slice is sorted; [`frame_stream`] checks order as it goes.
pub struct WindowRanges<'a> {
    events: &'a [Event],
    spec: WindowSpec,
    cursor: usize,
    next_window: u64,
    last_window: Option<u64>,
}

impl<'a> WindowRanges<'a> {
    pub fn new(events: &'a [Event], spec: WindowSpec) -> Self {
        let cursor = events.partition_point(|e| spec.window_of(e.t_us).is_none());
        let last_window = events.last().and_then(|e| spec.window_of(e.t_us));
        Self {
            events,
            spec,
            cursor,
            next_window: 0,
            last_window,
        }
    }

    pub fn window_count(&self) -> u64 {
        self.last_window.map_or(0, |w| w + 1)
    }
}

impl Iterator for WindowRanges<'_> {
    type Item = (u64, Range<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let last = self.last_window?;
        if self.next_window > last {
            return None;
        }
        let index = self.next_window;
        let begin = self.cursor;
        let mut end = begin;
        while end < self.events.len() {
            match self.spec.window_of(self.events[end].t_us) {
                Some(w) if w <= index => end += 1,
                _ => break,
            }
        }
        self.cursor = end;
        self.next_window += 1;
        Some((index, begin..end))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self
            .last_window
            .map_or(0, |l| (l + 1).saturating_sub(self.next_window) as usize);
        (left, Some(left))
    }
}

/// Remaps an event from `src` to the coarser `dst` grid by floor scaling.
///
/// Applied per event this is OR-pooling for binary frames and sum-pooling for
/// count frames.
pub fn downsample_event(event: &Event, src: &Geometry, dst: &Geometry) -> Result<Event, EventError> {
    if dst.width > src.width || dst.height > src.height {
        return Err(EventError::UpsampleRequested { src: *src, dst: *dst });
    }
    src.check(event)?;
    let x = (event.x as u32 * dst.width as u32 / src.width as u32) as u16;
    let y = (event.y as u32 * dst.height as u32 / src.height as u32) as u16;
    Ok(Event { x, y, ..*event })
}

pub fn downsample_events(
    events: &[Event],
    src: &Geometry,
    dst: &Geometry,
) -> Result<Vec<Event>, EventError> {
    events.iter().map(|e| downsample_event(e, src, dst)).collect()
}

const WORD_BITS: usize = 64;

pub(crate) fn word_count(pixels: usize) -> usize {
    pixels.div_ceil(WORD_BITS)
}

/// Bit-packed occupancy grid of one window.
///
/// Bit `y·width + x` is set iff at least one event of the window fell on `(x, y)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryFrame {
    geometry: Geometry,
    words: Vec<u64>,
    active_count: u32,
    window_index: u64,
    t_start_us: i64,
}

impl BinaryFrame {
    pub fn empty(geometry: Geometry) -> Self {
        Self {
            geometry,
            words: vec![0; word_count(geometry.pixel_count())],
            active_count: 0,
            window_index: 0,
            t_start_us: 0,
        }
    }

    /// Builds a frame from row-major pixel indices. Duplicates are merged.
    pub fn from_indices<I>(geometry: Geometry, indices: I) -> Result<Self, EventError>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut frame = Self::empty(geometry);
        for index in indices {
            if index >= geometry.pixel_count() {
                let (x, y) = geometry.coords(index);
                return Err(EventError::OutOfBounds {
                    x,
                    y,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            frame.insert_index(index);
        }
        Ok(frame)
    }

    /// Reassembles a frame from packed words; trailing bits past the last pixel must be zero.
    pub fn from_words(geometry: Geometry, words: Vec<u64>) -> Option<Self> {
        let pixels = geometry.pixel_count();
        if words.len() != word_count(pixels) {
            return None;
        }
        let tail = pixels % WORD_BITS;
        if tail != 0 && words[words.len() - 1] >> tail != 0 {
            return None;
        }
        let active_count = words.iter().map(|w| w.count_ones()).sum();
        Some(Self {
            geometry,
            words,
            active_count,
            window_index: 0,
            t_start_us: 0,
        })
    }

    pub fn with_window(mut self, window_index: u64, t_start_us: i64) -> Self {
        self.window_index = window_index;
        self.t_start_us = t_start_us;
        self
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn active_count(&self) -> u32 {
        self.active_count
    }

    pub fn window_index(&self) -> u64 {
        self.window_index
    }

    pub fn t_start_us(&self) -> i64 {
        self.t_start_us
    }

    #[inline]
    pub fn contains_index(&self, index: usize) -> bool {
        self.words[index / WORD_BITS] >> (index % WORD_BITS) & 1 == 1
    }

    pub fn is_set(&self, x: u16, y: u16) -> bool {
        self.geometry.contains(x, y) && self.contains_index(self.geometry.index(x, y))
    }

    /// Sets a pixel; returns `true` if it was previously clear.
    pub fn set(&mut self, x: u16, y: u16) -> Result<bool, EventError> {
        if !self.geometry.contains(x, y) {
            return Err(EventError::OutOfBounds {
                x,
                y,
                width: self.geometry.width,
                height: self.geometry.height,
            });
        }
        Ok(self.insert_index(self.geometry.index(x, y)))
    }

    #[inline]
    fn insert_index(&mut self, index: usize) -> bool {
        let word = &mut self.words[index / WORD_BITS];
        let mask = 1u64 << (index % WORD_BITS);
        if *word & mask == 0 {
            *word |= mask;
            self.active_count += 1;
            true
        } else {
            false
        }
    }

    /// Active pixel indices in ascending row-major order.
    pub fn active_indices(&self) -> ActiveIndices<'_> {
        ActiveIndices {
            words: &self.words,
            word_index: 0,
            current: self.words.first().copied().unwrap_or(0),
        }
    }
}

pub struct ActiveIndices<'a> {
    words: &'a [u64],
    word_index: usize,
    current: u64,
}

impl Iterator for ActiveIndices<'_> {
    type Item = u32;

    #[inline]
    fn next(&mut self) -> Option<u32> {
        while self.current == 0 {
            self.word_index += 1;
            if self.word_index >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_index];
        }
        let bit = self.current.trailing_zeros();
        self.current &= self.current - 1;
        Some((self.word_index * WORD_BITS) as u32 + bit)
    }
}

/// Per-pixel event counts of one window.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CountFrame {
    geometry: Geometry,
    counts: Vec<u32>,
    active_count: u32,
    window_index: u64,
    t_start_us: i64,
}

impl CountFrame {
    pub fn empty(geometry: Geometry) -> Self {
        Self {
            geometry,
            counts: vec![0; geometry.pixel_count()],
            active_count: 0,
            window_index: 0,
            t_start_us: 0,
        }
    }

    /// Wraps a row-major count buffer of the right length.
    pub fn from_counts(geometry: Geometry, counts: Vec<u32>) -> Option<Self> {
        if counts.len() != geometry.pixel_count() {
            return None;
        }
        let active_count = counts.iter().filter(|&&c| c > 0).count() as u32;
        Some(Self {
            geometry,
            counts,
            active_count,
            window_index: 0,
            t_start_us: 0,
        })
    }

    pub fn with_window(mut self, window_index: u64, t_start_us: i64) -> Self {
        self.window_index = window_index;
        self.t_start_us = t_start_us;
        self
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn active_count(&self) -> u32 {
        self.active_count
    }

    pub fn window_index(&self) -> u64 {
        self.window_index
    }

    pub fn t_start_us(&self) -> i64 {
        self.t_start_us
    }

    pub fn get(&self, x: u16, y: u16) -> u32 {
        if self.geometry.contains(x, y) {
            self.counts[self.geometry.index(x, y)]
        } else {
            0
        }
    }

    /// Total number of events binned into the frame.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    fn add_index(&mut self, index: usize) {
        let c = &mut self.counts[index];
        if *c == 0 {
            self.active_count += 1;
        }
        *c += 1;
    }

    /// Occupancy of this frame, keeping window metadata.
    pub fn binarize(&self) -> BinaryFrame {
        let mut frame = BinaryFrame::empty(self.geometry).with_window(self.window_index, self.t_start_us);
        for (i, _) in self.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            frame.insert_index(i);
        }
        frame
    }
}

pub fn build_binary_frame(window: &[Event], geometry: Geometry) -> Result<BinaryFrame, EventError> {
    let mut frame = BinaryFrame::empty(geometry);
    for e in window {
        geometry.check(e)?;
        frame.insert_index(geometry.index(e.x, e.y));
    }
    Ok(frame)
}

pub fn build_count_frame(window: &[Event], geometry: Geometry) -> Result<CountFrame, EventError> {
    let mut frame = CountFrame::empty(geometry);
    for e in window {
        geometry.check(e)?;
        frame.add_index(geometry.index(e.x, e.y));
    }
    Ok(frame)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameMode {
    Binary,
    Count,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Binary(BinaryFrame),
    Count(CountFrame),
}

impl Frame {
    pub fn window_index(&self) -> u64 {
        match self {
            Frame::Binary(f) => f.window_index(),
            Frame::Count(f) => f.window_index(),
        }
    }

    pub fn active_count(&self) -> u32 {
        match self {
            Frame::Binary(f) => f.active_count(),
            Frame::Count(f) => f.active_count(),
        }
    }

    pub fn to_binary(&self) -> BinaryFrame {
        match self {
            Frame::Binary(f) => f.clone(),
            Frame::Count(f) => f.binarize(),
        }
    }
}

/// Yields one frame per window, empty windows included. Ordering is verified
/// once up front; a disordered stream yields a single error.
pub struct FrameStream<'a> {
    events: &'a [Event],
    ranges: WindowRanges<'a>,
    geometry: Geometry,
    mode: FrameMode,
    pending: Option<EventError>,
    failed: bool,
}

impl Iterator for FrameStream<'_> {
    type Item = Result<Frame, EventError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if let Some(err) = self.pending.take() {
            self.failed = true;
            return Some(Err(err));
        }
        let (index, range) = self.ranges.next()?;
        let window = &self.events[range];
        let t_start = self.ranges.spec.window_start(index);
        let frame = match self.mode {
            FrameMode::Binary => {
                build_binary_frame(window, self.geometry).map(|f| Frame::Binary(f.with_window(index, t_start)))
            }
            FrameMode::Count => {
                build_count_frame(window, self.geometry).map(|f| Frame::Count(f.with_window(index, t_start)))
            }
        };
        if frame.is_err() {
            self.failed = true;
        }
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.failed {
            (0, Some(0))
        } else {
            self.ranges.size_hint()
        }
    }
}

pub fn frame_stream<'a>(
    events: &'a [Event],
    spec: WindowSpec,
    geometry: Geometry,
    mode: FrameMode,
) -> FrameStream<'a> {
    FrameStream {
        events,
        ranges: WindowRanges::new(events, spec),
        geometry,
        mode,
        pending: check_sorted(events).err(),
        failed: false,
    }
}

/// Builds every count frame of a stream; windows are independent so this fans
/// out over threads when the `parallel` feature is on.
pub fn count_frames(
    events: &[Event],
    spec: &WindowSpec,
    geometry: Geometry,
) -> Result<Vec<CountFrame>, EventError> {
    let ranges: Vec<(u64, Range<usize>)> = {
        check_sorted(events)?;
        WindowRanges::new(events, *spec).collect()
    };
    let build = |(index, range): &(u64, Range<usize>)| {
        build_count_frame(&events[range.clone()], geometry)
            .map(|f| f.with_window(*index, spec.window_start(*index)))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.par_iter().map(build).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.iter().map(build).collect()
    }
}
