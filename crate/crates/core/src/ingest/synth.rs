//! Deterministic synthetic traverses.
//!
//! A scene of per-row log-intensity profiles pans horizontally past the
//! sensor. Each pixel follows the profile at a fixed point inside its
//! footprint and fires an event every time the intensity moves one contrast
//! step `C` away from its last reference level, as a DVS pixel does. `C` is
//! set from the requested event rate. Per-pixel reference offsets and optional
//! background noise come from the noise seed, so two traverses sharing `seed`
//! but not `noise_seed` visit the same places with different event-level
//! detail.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::event_core::{Event, Geometry, Polarity};

/// Minimum spacing between two events of the same pixel.
pub const REFRACTORY_US: u64 = 100;

const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const OFFSET_SEED_SALT: u64 = 0x6a09_e667_f3bc_c909;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Bright vertical bar a quarter of the frame wide, wrapping around.
    MovingBar,
    /// Random step texture, each row with its own edges.
    RandomTexturePan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub geometry: Geometry,
    pub pattern: Pattern,
    pub speed_px_per_s: f64,
    pub duration_us: u64,
    pub event_rate_hz: f64,
    /// Scene seed.
    pub seed: u64,
    /// Per-visit seed; defaults to a value derived from `seed`.
    #[serde(default)]
    pub noise_seed: Option<u64>,
    /// Background events per second, uniformly over the sensor.
    #[serde(default)]
    pub noise_rate_hz: f64,
    /// Probability that a texture column carries an edge.
    #[serde(default = "default_edge_density")]
    pub edge_density: f64,
}

fn default_edge_density() -> f64 {
    0.01
}

impl SynthParams {
    pub fn new(geometry: Geometry, pattern: Pattern, speed_px_per_s: f64, duration_us: u64, event_rate_hz: f64, seed: u64) -> Self {
        Self {
            geometry,
            pattern,
            speed_px_per_s,
            duration_us,
            event_rate_hz,
            seed,
            noise_seed: None,
            noise_rate_hz: 0.0,
            edge_density: default_edge_density(),
        }
    }

    fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidParameter(m.to_string()));
        if !(self.speed_px_per_s.is_finite() && self.speed_px_per_s >= 0.0) {
            return bad("speed must be finite and non-negative");
        }
        if self.duration_us == 0 {
            return bad("duration must be positive");
        }
        if !(self.event_rate_hz.is_finite() && self.event_rate_hz > 0.0) {
            return bad("event rate must be positive");
        }
        if !(self.noise_rate_hz.is_finite() && self.noise_rate_hz >= 0.0) {
            return bad("noise rate must be non-negative");
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return bad("edge density must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Piecewise-linear row profiles with knots at integer scene coordinates.
enum Scene {
    Bar { period: i64, width: i64 },
    Texture { knots: usize, levels: Vec<f32> },
}

impl Scene {
    fn build(params: &SynthParams, span: f64) -> Self {
        let w = params.geometry.width() as i64;
        match params.pattern {
            Pattern::MovingBar => Scene::Bar {
                period: w,
                width: (w / 4).max(1),
            },
            Pattern::RandomTexturePan => {
                let knots = span.ceil() as usize + 2;
                let rows = params.geometry.height() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                let mut levels = Vec::with_capacity(rows * knots);
                for _ in 0..rows {
                    let mut level: f32 = rng.random_range(0.0..2.0);
                    for _ in 0..knots {
                        if rng.random_bool(params.edge_density) {
                            let step: f32 = rng.random_range(0.5..1.0);
                            level = if level + step <= 2.0 && (level - step < 0.0 || rng.random_bool(0.5)) {
                                level + step
                            } else {
                                level - step
                            };
                        }
                        levels.push(level);
                    }
                }
                Scene::Texture { knots, levels }
            }
        }
    }

    #[inline]
    fn knot(&self, row: usize, k: i64) -> f64 {
        match self {
            Scene::Bar { period, width } => {
                if k.rem_euclid(*period) < *width {
                    1.0
                } else {
                    0.0
                }
            }
            Scene::Texture { knots, levels } => levels[row * knots + (k as usize).min(knots - 1)] as f64,
        }
    }

    fn at(&self, row: usize, u: f64) -> f64 {
        let k = u.floor();
        let frac = u - k;
        let a = self.knot(row, k as i64);
        let b = self.knot(row, k as i64 + 1);
        a + (b - a) * frac
    }

    /// Mean total variation per unit of scene length, summed over rows.
    fn variation_density(&self, rows: usize) -> f64 {
        match self {
            Scene::Bar { period, .. } => rows as f64 * 2.0 / *period as f64,
            Scene::Texture { knots, levels } => {
                let tv: f64 = levels
                    .chunks(*knots)
                    .map(|row| row.windows(2).map(|p| (p[1] - p[0]).abs() as f64).sum::<f64>())
                    .sum();
                tv / (*knots - 1) as f64
            }
        }
    }
}

/// Generates one traverse; identical parameters always give an identical stream.
///
/// Timestamps lie in `(0, duration_us]`, sorted, with at most one event per
/// pixel per [`REFRACTORY_US`].
pub fn synth_traverse(params: &SynthParams) -> Result<Vec<Event>, IngestError> {
    params.validate()?;
    let geo = params.geometry;
    let duration = params.duration_us as f64;
    let noise_seed = params.noise_seed.unwrap_or(params.seed ^ NOISE_SEED_SALT);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut events = Vec::new();

    let speed = params.speed_px_per_s / 1e6;
    if speed > 0.0 {
        let span = geo.width() as f64 + speed * duration;
        let scene = Scene::build(params, span);
        let density = scene.variation_density(geo.height() as usize);
        let variation_rate = geo.width() as f64 * params.speed_px_per_s * density;
        let contrast = match scene {
            // each unit edge fires once per threshold crossed past the first
            Scene::Bar { .. } => variation_rate / (params.event_rate_hz + variation_rate),
            Scene::Texture { .. } => variation_rate / params.event_rate_hz,
        };
        if contrast > 0.0 {
            // where in the scene each pixel looks, fixed per place
            let mut offset_rng = ChaCha8Rng::seed_from_u64(params.seed ^ OFFSET_SEED_SALT);
            for y in 0..geo.height() {
                for x in 0..geo.width() {
                    let phase = noise_rng.random_range(0.0..contrast);
                    let u0 = x as f64 + offset_rng.random_range(0.0..1.0);
                    pixel_events(&scene, x, y, u0, speed, duration, contrast, phase, &mut events);
                }
            }
        }
    }

    if params.noise_rate_hz > 0.0 {
        let gaps = Exp::new(params.noise_rate_hz / 1e6).expect("positive rate");
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut noise_rng);
            if t > duration {
                break;
            }
            let x = noise_rng.random_range(0..geo.width());
            let y = noise_rng.random_range(0..geo.height());
            let p = if noise_rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
            events.push(Event::new(x, y, (t.ceil() as u64).max(1), p));
        }
    }

    events.sort_by_key(|e| (e.t_us, e.y, e.x));
    let mut last = vec![None::<u64>; geo.pixel_count()];
    events.retain(|e| {
        let slot = &mut last[geo.index(e.x, e.y)];
        match *slot {
            Some(prev) if e.t_us - prev < REFRACTORY_US => false,
            _ => {
                *slot = Some(e.t_us);
                true
            }
        }
    });
    Ok(events)
}

/// Contrast-threshold crossings of one pixel as the scene slides under it.
#[allow(clippy::too_many_arguments)]
fn pixel_events(
    scene: &Scene,
    x: u16,
    y: u16,
    u0: f64,
    speed: f64,
    duration: f64,
    contrast: f64,
    phase: f64,
    out: &mut Vec<Event>,
) {
    let row = y as usize;
    let u_end = u0 + speed * duration;
    let mut reference = scene.at(row, u0) - phase + contrast / 2.0;
    let mut u_a = u0;
    let mut l_a = scene.at(row, u0);
    let mut k = u0.floor() as i64;
    while u_a < u_end {
        let u_b = ((k + 1) as f64).min(u_end);
        let l_b = if u_b == (k + 1) as f64 {
            scene.knot(row, k + 1)
        } else {
            scene.at(row, u_b)
        };
        if l_b != l_a {
            let rising = l_b > l_a;
            loop {
                let level = if rising { reference + contrast } else { reference - contrast };
                if (rising && level > l_b) || (!rising && level < l_b) {
                    break;
                }
                let u = u_a + (level - l_a) / (l_b - l_a) * (u_b - u_a);
                let t = (u - u0) / speed;
                reference = level;
                let t_us = (t.ceil() as u64).max(1);
                if t_us as f64 <= duration {
                    let p = if rising { Polarity::On } else { Polarity::Off };
                    out.push(Event::new(x, y, t_us, p));
                }
            }
        }
        u_a = u_b;
        l_a = l_b;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_core::{frame_stream, FrameMode, WindowSpec};

    fn params(pattern: Pattern, duration_us: u64) -> SynthParams {
        SynthParams::new(Geometry::MATCHING, pattern, 2000.0, duration_us, 240_000.0, 42)
    }

    #[test]
    fn static_scene_is_silent() {
        let mut p = params(Pattern::RandomTexturePan, 100_000);
        p.speed_px_per_s = 0.0;
        assert!(synth_traverse(&p).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_stream() {
        for pattern in [Pattern::MovingBar, Pattern::RandomTexturePan] {
            let p = params(pattern, 50_000);
            let a = synth_traverse(&p).unwrap();
            assert!(!a.is_empty());
            assert_eq!(a, synth_traverse(&p).unwrap());
            let mut q = p.clone();
            q.noise_seed = Some(99);
            assert_ne!(a, synth_traverse(&q).unwrap());
        }
    }

    #[test]
    fn output_is_sorted_bounded_and_refractory() {
        let mut p = params(Pattern::RandomTexturePan, 100_000);
        p.noise_rate_hz = 5_000.0;
        let ev = synth_traverse(&p).unwrap();
        assert!(ev.windows(2).all(|w| w[0].t_us <= w[1].t_us));
        assert!(ev.iter().all(|e| e.t_us >= 1 && e.t_us <= 100_000));
        let geo = p.geometry;
        let mut last = vec![None; geo.pixel_count()];
        for e in &ev {
            let slot: &mut Option<u64> = &mut last[geo.index(e.x, e.y)];
            if let Some(prev) = *slot {
                assert!(e.t_us - prev >= REFRACTORY_US);
            }
            *slot = Some(e.t_us);
        }
    }

    #[test]
    fn event_rate_is_roughly_as_requested() {
        for pattern in [Pattern::RandomTexturePan, Pattern::MovingBar] {
            let ev = synth_traverse(&params(pattern, 200_000)).unwrap();
            let rate = ev.len() as f64 / 0.2;
            assert!(rate > 0.6 * 240_000.0 && rate < 1.1 * 240_000.0, "{pattern:?}: {rate}");
        }
    }

    #[test]
    fn moving_bar_count_scales_with_duration() {
        let a = synth_traverse(&params(Pattern::MovingBar, 500_000)).unwrap().len() as f64;
        let b = synth_traverse(&params(Pattern::MovingBar, 1_000_000)).unwrap().len() as f64;
        assert!((b / a - 2.0).abs() / 2.0 < 0.01, "{a} -> {b}");
    }

    #[test]
    fn moving_bar_activity_is_stationary() {
        let ev = synth_traverse(&params(Pattern::MovingBar, 400_000)).unwrap();
        let spec = WindowSpec::new(125, 0).unwrap();
        let active: Vec<f64> = frame_stream(&ev, spec, Geometry::MATCHING, FrameMode::Binary)
            .map(|f| f.unwrap().active_count() as f64)
            .collect();
        let half = active.len() / 2;
        let m1 = active[..half].iter().sum::<f64>() / half as f64;
        let m2 = active[half..].iter().sum::<f64>() / (active.len() - half) as f64;
        assert!((m1 - m2).abs() / m1.max(m2) < 0.2, "{m1} vs {m2}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = params(Pattern::MovingBar, 0);
        assert!(synth_traverse(&p).is_err());
        p.duration_us = 10;
        p.event_rate_hz = 0.0;
        assert!(synth_traverse(&p).is_err());
    }
}
