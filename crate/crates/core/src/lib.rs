//! Event-camera place recognition from sub-millisecond binary event frames.
//!
//! Events are cut into short windows, each window becomes a bit-packed
//! occupancy frame, and a query is matched against a reference database by
//! counting overlapping active pixels, scaled down when the reference is busier
//! than the query. Count-frame baselines (Zoom, SAD, random and
//! variance-selected pixel SAD) share the same search path.
//!
//! ```
//! use flash_vpr::event_core::{frame_stream, Event, FrameMode, Geometry, Polarity, WindowSpec};
//! use flash_vpr::database::{Query, ReferenceDatabase, SearchConfig, Searcher};
//! use flash_vpr::similarity::Matcher;
//!
//! let geo = Geometry::new(8, 4).unwrap();
//! let events: Vec<Event> = (0..40)
//!     .map(|i| Event::new((i % 8) as u16, (i / 10 % 4) as u16, 1 + i * 25, Polarity::On))
//!     .collect();
//! let spec = WindowSpec::aligned(100, &events).unwrap();
//! let frames: Vec<_> = frame_stream(&events, spec, geo, FrameMode::Binary)
//!     .collect::<Result<_, _>>()
//!     .unwrap();
//! let query = Query::from_frame(frames[3].clone());
//! let db = ReferenceDatabase::from_frames(geo, 100, 0, frames, 64).unwrap();
//! let searcher = Searcher::new(&db, SearchConfig::new(Matcher::Flash)).unwrap();
//! assert_eq!(searcher.search(0, &query, 1).unwrap().top(), Some(3));
//! ```

pub mod database;
pub mod eval;
pub mod event_core;
pub mod exec;
pub mod ingest;
pub mod similarity;

pub use database::{Query, ReferenceDatabase, SearchConfig, SearchResult, Searcher};
pub use event_core::{BinaryFrame, CountFrame, Event, Frame, FrameMode, Geometry, Polarity, WindowSpec};
pub use exec::Execution;
pub use similarity::Matcher;
