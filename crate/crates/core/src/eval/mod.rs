//! Ground truth, Recall@1, time between correct matches, event statistics and
//! the experiment sweep.

mod experiment;
mod stats;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{
    run_experiment, write_report, CellFailure, CellReport, EvalReport, ExperimentConfig, QueryOutcome, StreamSource,
    SummaryFile, REPORT_FILES,
};
pub use stats::{event_stats, EventStatsRow};

use crate::database::{DatabaseError, ReferenceDatabase, SearchResult};
use crate::event_core::EventError;
use crate::ingest::IngestError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0} has no ground-truth entry")]
    MissingGroundTruth(usize),
    #[error("query {query}: nominal reference {nominal} outside a database of {len} frames")]
    NominalOutOfRange { query: usize, nominal: usize, len: usize },
    #[error("total number of places must be positive")]
    NoPlaces,
    #[error("{correct} correct matches exceed {total} places")]
    TooFewPlaces { total: usize, correct: usize },
    #[error("event stream is empty")]
    EmptyStream,
    #[error("window size must be positive, got {0}")]
    InvalidWindow(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Database(#[from] DatabaseError),
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Correct reference indices per query.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tolerance: u64,
    matches: BTreeMap<usize, Vec<usize>>,
}

impl GroundTruth {
    /// Sorted correct references of `query`.
    pub fn matches(&self, query: usize) -> Option<&[usize]> {
        self.matches.get(&query).map(Vec::as_slice)
    }

    pub fn is_correct(&self, query: usize, reference: usize) -> Option<bool> {
        self.matches(query).map(|m| m.binary_search(&reference).is_ok())
    }

    pub fn queries(&self) -> impl Iterator<Item = usize> + '_ {
        self.matches.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Widens each `(query, nominal reference)` pair to
/// `nominal ± tolerance`, clipped to the database. Repeated queries take the
/// union of their windows.
pub fn expand_ground_truth(
    correspondences: &[(usize, usize)],
    tolerance: u64,
    db_len: usize,
) -> Result<GroundTruth, EvalError> {
    let mut matches: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let tol = usize::try_from(tolerance).unwrap_or(usize::MAX);
    for &(query, nominal) in correspondences {
        if nominal >= db_len {
            return Err(EvalError::NominalOutOfRange {
                query,
                nominal,
                len: db_len,
            });
        }
        let lo = nominal.saturating_sub(tol);
        let hi = nominal.saturating_add(tol).min(db_len - 1);
        matches.entry(query).or_default().extend(lo..=hi);
    }
    for m in matches.values_mut() {
        m.sort_unstable();
        m.dedup();
    }
    Ok(GroundTruth { tolerance, matches })
}

/// Database position whose window index is closest to `window_index`, ties to
/// the earlier frame. Used to carry full-rate correspondences into a
/// subsampled database.
pub fn nearest_entry(db: &ReferenceDatabase, window_index: u64) -> Option<usize> {
    let entries = db.entries();
    if entries.is_empty() {
        return None;
    }
    let pos = entries.partition_point(|e| e.meta.window_index < window_index);
    if pos == entries.len() {
        return Some(pos - 1);
    }
    if pos == 0 {
        return Some(0);
    }
    let after = entries[pos].meta.window_index - window_index;
    let before = window_index - entries[pos - 1].meta.window_index;
    Some(if before <= after { pos - 1 } else { pos })
}

/// Whether each result's top-ranked reference is correct. Degenerate queries
/// are always incorrect.
pub fn correctness_flags(results: &[SearchResult], gt: &GroundTruth) -> Result<Vec<bool>, EvalError> {
    results
        .iter()
        .map(|r| {
            let m = gt.matches(r.query_index).ok_or(EvalError::MissingGroundTruth(r.query_index))?;
            Ok(!r.degenerate && r.top().is_some_and(|top| m.binary_search(&top).is_ok()))
        })
        .collect()
}

pub fn recall_at_1(results: &[SearchResult], gt: &GroundTruth) -> Result<f64, EvalError> {
    let flags = correctness_flags(results, gt)?;
    if flags.is_empty() {
        return Ok(0.0);
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Correct-match times and the gaps between them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcmRecord {
    pub flags: Vec<bool>,
    /// 1-based positions of correct queries.
    pub times: Vec<u64>,
    /// `times[i] - times[i-1]`, with an implicit zeroth time of 0.
    pub intervals: Vec<u64>,
    pub query_period_us: u64,
}

impl TcmRecord {
    pub fn intervals_us(&self) -> Vec<u64> {
        self.intervals.iter().map(|i| i * self.query_period_us).collect()
    }

    pub fn correct(&self) -> usize {
        self.times.len()
    }
}

pub fn tcm_sequence(flags: &[bool], query_period_us: u64) -> TcmRecord {
    let times: Vec<u64> = flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(n, _)| n as u64 + 1)
        .collect();
    let mut prev = 0;
    let intervals = times
        .iter()
        .map(|&t| {
            let d = t - prev;
            prev = t;
            d
        })
        .collect();
    TcmRecord {
        flags: flags.to_vec(),
        times,
        intervals,
        query_period_us,
    }
}

/// Probability mass and cumulative distribution of the TCM intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcmDistribution {
    pub total_places: usize,
    /// `(τ, interval count)`, ascending in τ.
    pub counts: Vec<(u64, usize)>,
    /// `(τ, P(TCM = τ))`.
    pub histogram: Vec<(u64, f64)>,
    /// `(τ, fraction of places matched with TCM ≤ τ)`.
    pub cdf: Vec<(u64, f64)>,
}

impl TcmDistribution {
    pub fn probability(&self, tau: u64) -> f64 {
        self.histogram
            .binary_search_by_key(&tau, |&(t, _)| t)
            .map_or(0.0, |i| self.histogram[i].1)
    }

    pub fn cdf_at(&self, tau: u64) -> f64 {
        let upto = self.cdf.partition_point(|&(t, _)| t <= tau);
        if upto == 0 {
            0.0
        } else {
            self.cdf[upto - 1].1
        }
    }
}

pub fn tcm_distribution(record: &TcmRecord, total_places: usize) -> Result<TcmDistribution, EvalError> {
    if total_places == 0 {
        return Err(EvalError::NoPlaces);
    }
    if record.intervals.len() > total_places {
        return Err(EvalError::TooFewPlaces {
            total: total_places,
            correct: record.intervals.len(),
        });
    }
    let mut tally: BTreeMap<u64, usize> = BTreeMap::new();
    for &i in &record.intervals {
        *tally.entry(i).or_default() += 1;
    }
    let total = total_places as f64;
    let counts: Vec<(u64, usize)> = tally.into_iter().collect();
    let histogram = counts.iter().map(|&(t, c)| (t, c as f64 / total)).collect();
    let mut running = 0;
    let cdf = counts
        .iter()
        .map(|&(t, c)| {
            running += c;
            (t, running as f64 / total)
        })
        .collect();
    Ok(TcmDistribution {
        total_places,
        counts,
        histogram,
        cdf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::database::{select_top_k, Ranked};
    use proptest::prelude::*;
    use std::time::Duration;

    fn result(query_index: usize, top: usize, degenerate: bool) -> SearchResult {
        SearchResult {
            query_index,
            ranked: vec![Ranked { index: top, score: 1.0 }],
            degenerate,
            elapsed: Duration::ZERO,
        }
    }

    #[test]
    fn ground_truth_expansion() {
        let gt = expand_ground_truth(&[(0, 0), (1, 5)], 0, 100).unwrap();
        assert_eq!(gt.matches(0), Some(&[0][..]));
        let gt = expand_ground_truth(&[(0, 5)], 2, 100).unwrap();
        assert_eq!(gt.matches(0), Some(&[3, 4, 5, 6, 7][..]));
        let gt = expand_ground_truth(&[(0, 0), (1, 99)], 2, 100).unwrap();
        assert_eq!(gt.matches(0), Some(&[0, 1, 2][..]));
        assert_eq!(gt.matches(1), Some(&[97, 98, 99][..]));
        assert!(matches!(
            expand_ground_truth(&[(3, 100)], 1, 100),
            Err(EvalError::NominalOutOfRange { query: 3, nominal: 100, len: 100 })
        ));
    }

    #[test]
    fn recall_counts() {
        let gt = expand_ground_truth(&(0..5).map(|i| (i, i)).collect::<Vec<_>>(), 0, 5).unwrap();
        let all: Vec<_> = (0..5).map(|i| result(i, i, false)).collect();
        assert_eq!(recall_at_1(&all, &gt).unwrap(), 1.0);
        let none: Vec<_> = (0..5).map(|i| result(i, (i + 1) % 5, false)).collect();
        assert_eq!(recall_at_1(&none, &gt).unwrap(), 0.0);
        let some: Vec<_> = (0..5).map(|i| result(i, if i < 3 { i } else { 0 }, false)).collect();
        assert_eq!(recall_at_1(&some, &gt).unwrap(), 0.6);
        let degenerate = vec![result(0, 0, true)];
        assert_eq!(recall_at_1(&degenerate, &gt).unwrap(), 0.0);
        assert!(matches!(
            recall_at_1(&[result(9, 0, false)], &gt),
            Err(EvalError::MissingGroundTruth(9))
        ));
    }

    #[test]
    fn tcm_traces() {
        let r = tcm_sequence(&[true, true, true], 125);
        assert_eq!((r.times.clone(), r.intervals.clone()), (vec![1, 2, 3], vec![1, 1, 1]));
        assert_eq!(r.intervals_us(), vec![125, 125, 125]);
        let r = tcm_sequence(&[false, false, true, false, true], 1000);
        assert_eq!((r.times.clone(), r.intervals.clone()), (vec![3, 5], vec![3, 2]));
        let r = tcm_sequence(&[false, false, false], 1);
        assert!(r.times.is_empty() && r.intervals.is_empty());
    }

    #[test]
    fn tcm_distribution_values() {
        let d = tcm_distribution(&tcm_sequence(&[true, true, true], 1), 3).unwrap();
        assert_eq!(d.probability(1), 1.0);
        assert_eq!(d.cdf_at(1), 1.0);

        let d = tcm_distribution(&tcm_sequence(&[false, false, true, false, true], 1), 5).unwrap();
        assert_eq!(d.probability(2), 0.2);
        assert_eq!(d.probability(3), 0.2);
        assert_eq!(d.cdf_at(2), 0.2);
        assert_eq!(d.cdf_at(3), 0.4);
        assert_eq!(d.cdf_at(1), 0.0);

        let d = tcm_distribution(&tcm_sequence(&[false, false], 1), 2).unwrap();
        assert!(d.histogram.is_empty());
        assert_eq!(d.cdf_at(100), 0.0);

        assert!(matches!(
            tcm_distribution(&tcm_sequence(&[true], 1), 0),
            Err(EvalError::NoPlaces)
        ));
        assert!(matches!(
            tcm_distribution(&tcm_sequence(&[true, true], 1), 1),
            Err(EvalError::TooFewPlaces { .. })
        ));
    }

    proptest! {
        #[test]
        fn tcm_telescopes_and_cdf_is_bounded(flags in prop::collection::vec(any::<bool>(), 1..200)) {
            let r = tcm_sequence(&flags, 10);
            prop_assert_eq!(r.intervals.iter().sum::<u64>(), r.times.last().copied().unwrap_or(0));
            prop_assert!(r.intervals.iter().all(|&i| i >= 1));
            prop_assert!(r.times.windows(2).all(|w| w[0] < w[1]));
            let d = tcm_distribution(&r, flags.len()).unwrap();
            prop_assert!(d.cdf.windows(2).all(|w| w[0].1 <= w[1].1));
            let last = d.cdf.last().map_or(0.0, |c| c.1);
            prop_assert_eq!(last, r.correct() as f64 / flags.len() as f64);
            prop_assert!(last <= 1.0);
        }

        #[test]
        fn recall_is_monotone_in_tolerance(
            tops in prop::collection::vec(0usize..30, 1..40),
            t in 0u64..5,
        ) {
            let pairs: Vec<_> = (0..tops.len()).map(|q| (q, q % 30)).collect();
            let results: Vec<_> = tops.iter().enumerate().map(|(q, &top)| result(q, top, false)).collect();
            let lo = recall_at_1(&results, &expand_ground_truth(&pairs, t, 30).unwrap()).unwrap();
            let hi = recall_at_1(&results, &expand_ground_truth(&pairs, t + 1, 30).unwrap()).unwrap();
            prop_assert!(lo <= hi);
        }

        #[test]
        fn recall_ignores_monotone_rescaling(
            score_rows in prop::collection::vec(prop::collection::vec(0u32..50, 8), 1..20),
        ) {
            let pairs: Vec<_> = (0..score_rows.len()).map(|q| (q, q % 8)).collect();
            let gt = expand_ground_truth(&pairs, 0, 8).unwrap();
            let run = |f: &dyn Fn(f64) -> f64| {
                let results: Vec<_> = score_rows.iter().enumerate().map(|(q, row)| {
                    let scores: Vec<f64> = row.iter().map(|&s| f(s as f64)).collect();
                    SearchResult { query_index: q, ranked: select_top_k(&scores, 1, true), degenerate: false, elapsed: Duration::ZERO }
                }).collect::<Vec<_>>();
                recall_at_1(&results, &gt).unwrap()
            };
            prop_assert_eq!(run(&|s| s), run(&|s| 2.0 * s + 1.0));
        }
    }
}
