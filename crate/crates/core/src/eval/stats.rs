use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::event_core::{check_sorted, Event, Geometry};

/// Average activity per accumulation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStatsRow {
    pub window_us: f64,
    pub windows: u64,
    pub mean_events: f64,
    pub mean_active_pixels: f64,
}

/// Mean events and mean active pixels per window, empty windows included.
///
/// Window sizes may be fractional microseconds; boundaries are placed on a
/// nanosecond grid so sizes such as 15.625 µs are represented exactly. As in
/// [`crate::event_core::WindowSpec::aligned`], windows are left-open and the
/// first one starts at the last multiple of the window size before the first
/// event.
pub fn event_stats(events: &[Event], windows_us: &[f64], geometry: Geometry) -> Result<Vec<EventStatsRow>, EvalError> {
    if events.is_empty() {
        return Err(EvalError::EmptyStream);
    }
    check_sorted(events)?;
    for e in events {
        geometry.check(e)?;
    }
    windows_us
        .iter()
        .map(|&w| {
            let ns = (w * 1000.0).round();
            if !(w.is_finite() && ns >= 1.0) {
                return Err(EvalError::InvalidWindow(w));
            }
            Ok(stats_for(events, w, ns as i128, geometry))
        })
        .collect()
}

fn stats_for(events: &[Event], window_us: f64, d: i128, geometry: Geometry) -> EventStatsRow {
    let t = |e: &Event| e.t_us as i128 * 1000;
    let start = (t(&events[0]) - 1).div_euclid(d) * d;
    let window_of = |e: &Event| ((t(e) - start + d - 1) / d - 1) as u64;
    // stamp[p] = 1 + last window in which pixel p was seen
    let mut stamp = vec![0u64; geometry.pixel_count()];
    let mut active = 0u64;
    for e in events {
        let w = window_of(e) + 1;
        let s = &mut stamp[geometry.index(e.x, e.y)];
        if *s != w {
            *s = w;
            active += 1;
        }
    }
    let windows = window_of(events.last().unwrap()) + 1;
    EventStatsRow {
        window_us,
        windows,
        mean_events: events.len() as f64 / windows as f64,
        mean_active_pixels: active as f64 / windows as f64,
    }
}
