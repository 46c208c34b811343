//! Declarative sweep over window sizes, matchers and subsample factors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    correctness_flags, event_stats, expand_ground_truth, nearest_entry, tcm_distribution, tcm_sequence, EvalError,
    EventStatsRow,
};
use crate::database::{Query, ReferenceDatabase, SearchConfig, SearchResult, Searcher};
use crate::event_core::{downsample_events, frame_stream, Event, Frame, FrameMode, Geometry, WindowSpec};
use crate::exec::Execution;
use crate::ingest::{parse_alignment, read_events, synth_traverse, AlignmentFile, ReadOptions, SynthParams, UnsortedPolicy};
use crate::similarity::{Matcher, ZoomWeighting, DEFAULT_PIXEL_SAMPLES, DEFAULT_SPARSE_THRESHOLD};

pub const REPORT_FILES: [&str; 5] = [
    "summary.json",
    "recall_vs_window.csv",
    "tcm_cdf.csv",
    "subsample_sweep.csv",
    "event_stats.csv",
];

/// One traverse: an event file or a synthetic generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthParams>,
    /// Sensor geometry for event files without a geometry header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub traverse_id: u32,
}

impl StreamSource {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            path: Some(path.into()),
            ..Default::default()
        }
    }

    pub fn synthetic(params: SynthParams) -> Self {
        Self {
            synthetic: Some(params),
            ..Default::default()
        }
    }

    fn validate(&self, which: &str) -> Result<(), EvalError> {
        match (&self.path, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(EvalError::Config(format!(
                "{which}: exactly one of `path` and `synthetic` must be given"
            ))),
        }
    }

    /// Events and their sensor geometry.
    pub fn load(&self, unsorted: UnsortedPolicy) -> Result<(Vec<Event>, Geometry), EvalError> {
        if let Some(params) = &self.synthetic {
            return Ok((synth_traverse(params)?, params.geometry));
        }
        let path = self.path.as_ref().expect("validated");
        let stream = read_events(
            path,
            &ReadOptions {
                geometry: self.geometry,
                unsorted,
            },
        )?;
        Ok((stream.events, stream.header.geometry))
    }
}

fn default_factors() -> Vec<u32> {
    vec![1]
}
fn default_tolerance() -> u64 {
    1
}
fn default_stride() -> usize {
    1
}
fn default_pixel_samples() -> usize {
    DEFAULT_PIXEL_SAMPLES
}
fn default_sparse_threshold() -> u32 {
    DEFAULT_SPARSE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub reference: StreamSource,
    pub query: StreamSource,
    /// Matching geometry; streams are downsampled to it when it differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    pub window_sizes_us: Vec<u64>,
    pub matchers: Vec<Matcher>,
    #[serde(default = "default_factors")]
    pub subsample_factors: Vec<u32>,
    #[serde(default = "default_tolerance")]
    pub tolerance: u64,
    /// Query/reference correspondences; identity over window indices if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<PathBuf>,
    /// Evaluate every n-th query window.
    #[serde(default = "default_stride")]
    pub query_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_queries: Option<usize>,
    #[serde(default = "default_pixel_samples")]
    pub pixel_samples: usize,
    #[serde(default)]
    pub zoom_weighting: ZoomWeighting,
    #[serde(default = "default_sparse_threshold")]
    pub sparse_threshold: u32,
    /// Windows for the activity table; the sweep windows if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_windows_us: Option<Vec<f64>>,
    #[serde(default)]
    pub unsorted: UnsortedPolicy,
}

impl ExperimentConfig {
    pub fn new(reference: StreamSource, query: StreamSource, window_sizes_us: Vec<u64>, matchers: Vec<Matcher>) -> Self {
        Self {
            seed: 0,
            reference,
            query,
            geometry: None,
            window_sizes_us,
            matchers,
            subsample_factors: default_factors(),
            tolerance: default_tolerance(),
            alignment: None,
            query_stride: 1,
            max_queries: None,
            pixel_samples: DEFAULT_PIXEL_SAMPLES,
            zoom_weighting: ZoomWeighting::default(),
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            stats_windows_us: None,
            unsorted: UnsortedPolicy::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        let config: Self = toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self = toml::from_str(&text).map_err(|e| EvalError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.reference.path.as_mut().map(rebase);
        config.query.path.as_mut().map(rebase);
        config.alignment.as_mut().map(rebase);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        self.reference.validate("reference")?;
        self.query.validate("query")?;
        if self.window_sizes_us.is_empty() {
            return bad("window_sizes_us is empty".into());
        }
        if let Some(w) = self.window_sizes_us.iter().find(|&&w| w == 0) {
            return bad(format!("window size {w} µs must be positive"));
        }
        if self.matchers.is_empty() {
            return bad("matchers is empty".into());
        }
        if self.subsample_factors.is_empty() {
            return bad("subsample_factors is empty".into());
        }
        if let Some(f) = self.subsample_factors.iter().find(|f| !f.is_power_of_two()) {
            return bad(format!("subsample factor {f} is not a power of two"));
        }
        if self.query_stride == 0 {
            return bad("query_stride must be at least 1".into());
        }
        if self.max_queries == Some(0) {
            return bad("max_queries must be at least 1".into());
        }
        if self.pixel_samples == 0 {
            return bad("pixel_samples must be at least 1".into());
        }
        if let Some(ws) = &self.stats_windows_us {
            if let Some(w) = ws.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
                return bad(format!("stats window {w} µs must be positive"));
            }
        }
        Ok(())
    }

    fn needs_counts(&self) -> bool {
        self.matchers.iter().any(|m| m.needs_counts())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    /// Query window index.
    pub query_index: usize,
    pub top: Option<usize>,
    pub score: Option<f64>,
    pub correct: bool,
    pub degenerate: bool,
}

/// Results of one (window size, matcher, subsample factor) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub window_us: u64,
    pub matcher: Matcher,
    pub subsample_factor: u32,
    pub database_frames: usize,
    pub queries: usize,
    pub correct: usize,
    pub degenerate_queries: usize,
    pub recall_at_1: f64,
    pub query_period_us: u64,
    pub tcm_intervals: Vec<u64>,
    pub tcm_histogram: Vec<(u64, f64)>,
    pub tcm_cdf: Vec<(u64, f64)>,
    pub per_query: Vec<QueryOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub window_us: u64,
    pub matcher: Option<Matcher>,
    pub subsample_factor: Option<u32>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub geometry: Geometry,
    pub cells: Vec<CellReport>,
    pub failures: Vec<CellFailure>,
    pub reference_stats: Vec<EventStatsRow>,
    pub query_stats: Vec<EventStatsRow>,
}

impl EvalReport {
    pub fn cell(&self, window_us: u64, matcher: Matcher, subsample_factor: u32) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.window_us == window_us && c.matcher == matcher && c.subsample_factor == subsample_factor)
    }
}

/// Layout of `summary.json`.
#[derive(Serialize)]
pub struct SummaryFile<'a> {
    pub config: &'a ExperimentConfig,
    pub geometry: Geometry,
    pub grid_cells: usize,
    pub failed_cells: usize,
    pub cells: &'a [CellReport],
    pub failures: &'a [CellFailure],
    pub event_stats: StatsBlock<'a>,
}

#[derive(Serialize)]
pub struct StatsBlock<'a> {
    pub reference: &'a [EventStatsRow],
    pub query: &'a [EventStatsRow],
}

fn prepare(
    source: &StreamSource,
    target: Option<Geometry>,
    unsorted: UnsortedPolicy,
) -> Result<(Vec<Event>, Geometry), EvalError> {
    let (events, geometry) = source.load(unsorted)?;
    match target {
        Some(t) if t != geometry => Ok((downsample_events(&events, &geometry, &t)?, t)),
        _ => Ok((events, geometry)),
    }
}

struct WindowData {
    db: ReferenceDatabase,
    queries: Vec<(usize, Query)>,
    /// `(query position in `queries`, reference window)`.
    pairs: Vec<(usize, u64)>,
    query_period_us: u64,
}

fn build_window(
    config: &ExperimentConfig,
    window_us: u64,
    geometry: Geometry,
    reference: &[Event],
    query: &[Event],
    alignment: Option<&AlignmentFile>,
) -> Result<WindowData, EvalError> {
    let mode = if config.needs_counts() {
        FrameMode::Count
    } else {
        FrameMode::Binary
    };
    let ref_spec = WindowSpec::aligned(window_us, reference)?;
    let query_spec = WindowSpec::aligned(window_us, query)?;
    let ref_frames: Vec<Frame> = frame_stream(reference, ref_spec, geometry, mode).collect::<Result<_, _>>()?;
    let query_frames: Vec<Frame> = frame_stream(query, query_spec, geometry, mode).collect::<Result<_, _>>()?;
    let (nq, nr) = (query_frames.len() as u64, ref_frames.len() as u64);

    let mut pairs = match alignment {
        Some(a) => a.to_indices(&query_spec, &ref_spec, nq, nr)?,
        None => (0..nq.min(nr)).map(|i| (i, i)).collect(),
    };
    pairs.sort_by_key(|&(q, _)| q);
    let mut selected: Vec<u64> = pairs.iter().map(|&(q, _)| q).collect();
    selected.dedup();
    let mut selected: Vec<u64> = selected.into_iter().step_by(config.query_stride).collect();
    if let Some(max) = config.max_queries {
        selected.truncate(max);
    }

    let db = ReferenceDatabase::from_frames(
        geometry,
        window_us,
        config.reference.traverse_id,
        ref_frames,
        config.sparse_threshold,
    )?;
    let mut query_frames: Vec<Option<Frame>> = query_frames.into_iter().map(Some).collect();
    let queries: Vec<(usize, Query)> = selected
        .iter()
        .map(|&q| (q as usize, Query::from_frame(query_frames[q as usize].take().expect("distinct"))))
        .collect();
    let pairs = pairs
        .into_iter()
        .filter_map(|(q, r)| selected.binary_search(&q).ok().map(|pos| (pos, r)))
        .collect();
    Ok(WindowData {
        db,
        queries,
        pairs,
        query_period_us: window_us * config.query_stride as u64,
    })
}

fn run_cell(
    config: &ExperimentConfig,
    data: &WindowData,
    db: &ReferenceDatabase,
    window_us: u64,
    factor: u32,
    matcher: Matcher,
) -> Result<CellReport, EvalError> {
    let nominal: Vec<(usize, usize)> = data
        .pairs
        .iter()
        .map(|&(pos, r)| (pos, nearest_entry(db, r).expect("non-empty database")))
        .collect();
    let gt = expand_ground_truth(&nominal, config.tolerance, db.len())?;
    let searcher = Searcher::new(
        db,
        SearchConfig {
            matcher,
            zoom_weighting: config.zoom_weighting,
            pixel_samples: config.pixel_samples,
            seed: config.seed,
            sparse_threshold: config.sparse_threshold,
            execution: Execution::Sequential,
        },
    )?;
    let results: Vec<SearchResult> = Execution::default()
        .map(&data.queries, |pos, (_, q)| searcher.search(pos, q, 1))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let flags = correctness_flags(&results, &gt)?;
    let record = tcm_sequence(&flags, data.query_period_us);
    if record.intervals.iter().sum::<u64>() != record.times.last().copied().unwrap_or(0) {
        return Err(EvalError::Config("TCM intervals do not telescope".into()));
    }
    let dist = tcm_distribution(&record, flags.len().max(1))?;
    let correct = record.correct();
    let per_query: Vec<QueryOutcome> = results
        .iter()
        .zip(&flags)
        .map(|(r, &correct)| QueryOutcome {
            query_index: data.queries[r.query_index].0,
            top: r.top(),
            score: r.ranked.first().map(|x| x.score),
            correct,
            degenerate: r.degenerate,
        })
        .collect();
    Ok(CellReport {
        window_us,
        matcher,
        subsample_factor: factor,
        database_frames: db.len(),
        queries: flags.len(),
        correct,
        degenerate_queries: results.iter().filter(|r| r.degenerate).count(),
        recall_at_1: if flags.is_empty() {
            0.0
        } else {
            correct as f64 / flags.len() as f64
        },
        query_period_us: data.query_period_us,
        tcm_intervals: record.intervals,
        tcm_histogram: dist.histogram,
        tcm_cdf: dist.cdf,
        per_query,
    })
}

/// Runs the full grid. Source, geometry and configuration problems abort the
/// run; anything that goes wrong inside one cell is recorded in
/// [`EvalReport::failures`] and the sweep carries on.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let alignment = config.alignment.as_ref().map(parse_alignment).transpose()?;
    let (reference, ref_geo) = prepare(&config.reference, config.geometry, config.unsorted)?;
    let (query, query_geo) = prepare(&config.query, config.geometry, config.unsorted)?;
    ref_geo.ensure_same(&query_geo)?;
    let geometry = ref_geo;

    let stats_windows: Vec<f64> = match &config.stats_windows_us {
        Some(w) => w.clone(),
        None => config.window_sizes_us.iter().map(|&w| w as f64).collect(),
    };
    let reference_stats = event_stats(&reference, &stats_windows, geometry)?;
    let query_stats = event_stats(&query, &stats_windows, geometry)?;

    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &window_us in &config.window_sizes_us {
        let data = match build_window(config, window_us, geometry, &reference, &query, alignment.as_ref()) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("window {window_us} µs: {e}");
                failures.push(CellFailure {
                    window_us,
                    matcher: None,
                    subsample_factor: None,
                    error: e.to_string(),
                });
                continue;
            }
        };
        for &factor in &config.subsample_factors {
            let db = match data.db.subsample(factor) {
                Ok(db) => db,
                Err(e) => {
                    failures.push(CellFailure {
                        window_us,
                        matcher: None,
                        subsample_factor: Some(factor),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            for &matcher in &config.matchers {
                match run_cell(config, &data, &db, window_us, factor, matcher) {
                    Ok(cell) => {
                        log::info!(
                            "window {window_us} µs, {matcher}, ×{factor}: Recall@1 {:.4} over {} queries",
                            cell.recall_at_1,
                            cell.queries
                        );
                        cells.push(cell);
                    }
                    Err(e) => {
                        log::warn!("window {window_us} µs, {matcher}, ×{factor}: {e}");
                        failures.push(CellFailure {
                            window_us,
                            matcher: Some(matcher),
                            subsample_factor: Some(factor),
                            error: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    Ok(EvalReport {
        config: config.clone(),
        geometry,
        cells,
        failures,
        reference_stats,
        query_stats,
    })
}

impl EvalReport {
    pub fn summary_json(&self) -> String {
        let summary = SummaryFile {
            config: &self.config,
            geometry: self.geometry,
            grid_cells: self.cells.len() + self.failures.len(),
            failed_cells: self.failures.len(),
            cells: &self.cells,
            failures: &self.failures,
            event_stats: StatsBlock {
                reference: &self.reference_stats,
                query: &self.query_stats,
            },
        };
        let mut s = serde_json::to_string_pretty(&summary).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn recall_vs_window_csv(&self) -> String {
        let base = self.config.subsample_factors.iter().copied().min().unwrap_or(1);
        let mut out =
            String::from("window_us,matcher,subsample_factor,database_frames,queries,correct,degenerate_queries,recall_at_1\n");
        for c in self.cells.iter().filter(|c| c.subsample_factor == base) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.window_us,
                c.matcher,
                c.subsample_factor,
                c.database_frames,
                c.queries,
                c.correct,
                c.degenerate_queries,
                c.recall_at_1
            );
        }
        out
    }

    pub fn tcm_cdf_csv(&self) -> String {
        let mut out = String::from("window_us,matcher,subsample_factor,tcm_queries,tcm_us,probability,cdf\n");
        for c in &self.cells {
            for (&(tau, p), &(_, cdf)) in c.tcm_histogram.iter().zip(&c.tcm_cdf) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    c.window_us,
                    c.matcher,
                    c.subsample_factor,
                    tau,
                    tau * c.query_period_us,
                    p,
                    cdf
                );
            }
        }
        out
    }

    pub fn subsample_sweep_csv(&self) -> String {
        let base = self.config.subsample_factors.iter().copied().min().unwrap_or(1);
        let mut out = String::from("window_us,matcher,subsample_factor,database_frames,recall_at_1,relative_recall\n");
        for c in &self.cells {
            let reference = self.cell(c.window_us, c.matcher, base).map(|b| b.recall_at_1);
            let relative = match reference {
                Some(r) if r > 0.0 => (c.recall_at_1 / r).to_string(),
                _ => String::new(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.window_us, c.matcher, c.subsample_factor, c.database_frames, c.recall_at_1, relative
            );
        }
        out
    }

    pub fn event_stats_csv(&self) -> String {
        let mut out = String::from("stream,window_us,windows,mean_events,mean_active_pixels\n");
        for (name, rows) in [("reference", &self.reference_stats), ("query", &self.query_stats)] {
            for r in rows {
                let _ = writeln!(
                    out,
                    "{name},{},{},{},{}",
                    r.window_us, r.windows, r.mean_events, r.mean_active_pixels
                );
            }
        }
        out
    }
}

/// Writes the summary and the four tables into `dir`, creating it if needed.
pub fn write_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, EvalError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let contents = [
        report.summary_json(),
        report.recall_vs_window_csv(),
        report.tcm_cdf_csv(),
        report.subsample_sweep_csv(),
        report.event_stats_csv(),
    ];
    REPORT_FILES
        .iter()
        .zip(contents)
        .map(|(name, text)| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io(&path))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Pattern;

    fn synth(seed: u64, duration_us: u64) -> StreamSource {
        let mut p = SynthParams::new(Geometry::MATCHING, Pattern::RandomTexturePan, 2000.0, duration_us, 240_000.0, seed);
        p.noise_seed = Some(seed + 1);
        StreamSource::synthetic(p)
    }

    #[test]
    fn grid_shape_and_self_match() {
        let mut config = ExperimentConfig::new(
            synth(3, 50_000),
            synth(3, 50_000),
            vec![125, 500],
            vec![Matcher::Flash, Matcher::Zoom],
        );
        config.tolerance = 0;
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert!(report.failures.is_empty());
        for c in &report.cells {
            assert_eq!(c.recall_at_1, 1.0, "{} {}", c.window_us, c.matcher);
        }
        assert_eq!(report.recall_vs_window_csv().lines().count(), 5);
    }

    #[test]
    fn capability_failures_do_not_abort() {
        let mut config = ExperimentConfig::new(synth(1, 20_000), synth(1, 20_000), vec![1000], vec![Matcher::Flash]);
        config.subsample_factors = vec![1, 64];
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert_eq!(report.cell(1000, Matcher::Flash, 64).unwrap().database_frames, 1);
    }

    #[test]
    fn config_validation() {
        let text = r#"
            window_sizes_us = [125]
            matchers = ["flash", "no-such-matcher"]
            [reference]
            path = "a.txt"
            [query]
            path = "b.txt"
        "#;
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(EvalError::Config(_))));
        let text = r#"
            window_sizes_us = [125]
            matchers = ["flash"]
            subsample_factors = [3]
            [reference]
            path = "a.txt"
            [query]
            path = "b.txt"
        "#;
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(EvalError::Config(_))));
        let text = r#"
            window_sizes_us = [125]
            matchers = ["flash"]
            bogus = 1
            [reference]
            path = "a.txt"
            [query]
            path = "b.txt"
        "#;
        assert!(ExperimentConfig::from_toml_str(text).is_err());
        let text = r#"
            seed = 9
            window_sizes_us = [125, 1000]
            matchers = ["flash", "sparse-event-vpr"]
            [reference.synthetic]
            geometry = "86x45"
            pattern = "moving-bar"
            speed_px_per_s = 1000.0
            duration_us = 10000
            event_rate_hz = 100000.0
            seed = 1
            [query]
            path = "b.txt"
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.matchers, vec![Matcher::Flash, Matcher::SparseEventVpr]);
        assert_eq!(c.tolerance, 1);
    }

    #[test]
    fn missing_file_is_named() {
        let config = ExperimentConfig::new(
            StreamSource::file("/nonexistent/ref.txt"),
            synth(1, 1000),
            vec![125],
            vec![Matcher::Flash],
        );
        let err = run_experiment(&config).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ref.txt"), "{err}");
    }
}
