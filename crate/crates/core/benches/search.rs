use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use flash_vpr::database::{Query, ReferenceDatabase, SearchConfig, Searcher};
use flash_vpr::event_core::{BinaryFrame, CountFrame, Frame, Geometry};
use flash_vpr::exec::Execution;
use flash_vpr::similarity::{overlap_with_path, Matcher, OverlapPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn frame(geo: Geometry, active: usize, rng: &mut ChaCha8Rng) -> BinaryFrame {
    let picks = rand::seq::index::sample(rng, geo.pixel_count(), active);
    BinaryFrame::from_indices(geo, picks).unwrap()
}

fn binary_db(n: usize, active: usize, rng: &mut ChaCha8Rng) -> ReferenceDatabase {
    let geo = Geometry::MATCHING;
    let frames = (0..n)
        .map(|i| Frame::Binary(frame(geo, active, rng).with_window(i as u64, 0)))
        .collect();
    ReferenceDatabase::from_frames(geo, 125, 0, frames, 64).unwrap()
}

fn count_db(n: usize, active: usize, rng: &mut ChaCha8Rng) -> ReferenceDatabase {
    let geo = Geometry::MATCHING;
    let frames = (0..n)
        .map(|i| {
            let mut counts = vec![0u32; geo.pixel_count()];
            for p in rand::seq::index::sample(rng, geo.pixel_count(), active) {
                counts[p] = rng.random_range(1..4);
            }
            Frame::Count(CountFrame::from_counts(geo, counts).unwrap().with_window(i as u64, 0))
        })
        .collect();
    ReferenceDatabase::from_frames(geo, 125, 0, frames, 64).unwrap()
}

fn overlap_paths(c: &mut Criterion) {
    let geo = Geometry::MATCHING;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("overlap");
    for active in [4usize, 28, 64, 174, 500] {
        let q = frame(geo, active, &mut rng);
        let r = frame(geo, active, &mut rng);
        for (name, path) in [("packed", OverlapPath::Packed), ("sparse", OverlapPath::Sparse)] {
            group.bench_with_input(BenchmarkId::new(name, active), &active, |b, _| {
                b.iter(|| overlap_with_path(black_box(&q), black_box(&r), path).unwrap())
            });
        }
    }
    group.finish();
}

fn search_execution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let geo = Geometry::MATCHING;
    let mut group = c.benchmark_group("search");
    group.sample_size(20);
    for size in [10_000usize, 100_000] {
        let db = binary_db(size, 28, &mut rng);
        let query = Query::from_binary(frame(geo, 28, &mut rng));
        group.throughput(Throughput::Elements(size as u64));
        for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let mut config = SearchConfig::new(Matcher::Flash);
            config.execution = execution;
            let searcher = Searcher::new(&db, config).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("flash/{name}"), size), &size, |b, _| {
                b.iter(|| searcher.search(0, black_box(&query), 1).unwrap())
            });
        }
    }
    let db = count_db(2_000, 28, &mut rng);
    let query_frame = match count_db(1, 28, &mut rng).count_frame(0) {
        Some(c) => c,
        None => unreachable!("count database"),
    };
    let query = Query::from_counts(query_frame);
    group.throughput(Throughput::Elements(db.len() as u64));
    for matcher in [Matcher::Zoom, Matcher::Sad, Matcher::RandPixSad, Matcher::SparseEventVpr] {
        for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let mut config = SearchConfig::new(matcher);
            config.execution = execution;
            let searcher = Searcher::new(&db, config).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("{matcher}/{name}"), db.len()), &db.len(), |b, _| {
                b.iter(|| searcher.search(0, black_box(&query), 1).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, overlap_paths, search_execution);
criterion_main!(benches);
