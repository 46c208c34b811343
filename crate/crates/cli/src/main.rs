mod duration;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flash_vpr::database::{DatabaseError, Query, ReferenceDatabase, SearchConfig, Searcher};
use flash_vpr::eval::{event_stats, run_experiment, write_report, EvalError, ExperimentConfig};
use flash_vpr::event_core::{count_frames, downsample_events, frame_stream, Event, Frame, FrameMode, Geometry, WindowSpec};
use flash_vpr::ingest::{
    read_events, synth_traverse, write_event_binary, write_event_text, IngestError, Pattern, ReadOptions, SynthParams,
    UnsortedPolicy,
};
use flash_vpr::similarity::{Matcher, ZoomWeighting, DEFAULT_PIXEL_SAMPLES, DEFAULT_SPARSE_THRESHOLD};

/// Sub-millisecond event-camera place recognition.
#[derive(Parser, Debug)]
#[command(name = "flash-vpr", version, about)]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "FLASH_VPR_THREADS")]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Window an event stream into a reference database file.
    BuildDb(BuildDbArgs),
    /// Match the windows of a query stream against a database.
    Query(QueryArgs),
    /// Run an experiment sweep described by a TOML config.
    Eval(EvalArgs),
    /// Mean events and active pixels per window.
    Stats(StatsArgs),
    /// Keep every n-th frame of a database.
    Subsample(SubsampleArgs),
    /// Write a deterministic synthetic traverse to an event file.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// Event file (text or binary).
    #[arg(long)]
    events: PathBuf,
    /// Sensor geometry for files without a geometry header, e.g. 346x260.
    #[arg(long)]
    geometry: Option<Geometry>,
    /// Downsample to this geometry before windowing, e.g. 86x45.
    #[arg(long)]
    downsample: Option<Geometry>,
    /// Stable-sort out-of-order streams instead of rejecting them.
    #[arg(long)]
    sort_unsorted: bool,
}

#[derive(Args, Debug)]
struct BuildDbArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Window length: 125, 125us, 0.5ms, 1s.
    #[arg(long, value_parser = duration::parse_whole_us)]
    window: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Keep count frames so count-based matchers can use the database.
    #[arg(long)]
    counts: bool,
    #[arg(long, default_value_t = 0)]
    traverse_id: u32,
    /// Frames with fewer active pixels are stored as coordinate lists.
    #[arg(long, default_value_t = DEFAULT_SPARSE_THRESHOLD)]
    sparse_threshold: u32,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weighting {
    Multiply,
    Divide,
}

impl From<Weighting> for ZoomWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Multiply => ZoomWeighting::Multiply,
            Weighting::Divide => ZoomWeighting::Divide,
        }
    }
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    db: PathBuf,
    #[command(flatten)]
    stream: StreamArgs,
    /// flash, flash-no-rac, zoom, zoom-no-rac, sad, rand-pix-sad, sparse-event-vpr
    #[arg(long, default_value = "flash")]
    matcher: Matcher,
    /// Matches listed per query window.
    #[arg(short, long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: OutputFormat,
    /// Seed of the random pixel set.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PIXEL_SAMPLES)]
    pixel_samples: usize,
    #[arg(long, value_enum, default_value = "multiply")]
    zoom_weighting: Weighting,
    /// Leave out per-query wall time so output is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for summary.json and the CSV tables.
    #[arg(short, long, default_value = "results")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    stream: StreamArgs,
    /// Comma-separated window sizes; fractions of a microsecond allowed.
    #[arg(long, value_delimiter = ',', value_parser = duration::parse_us, required = true)]
    windows: Vec<f64>,
    /// Write the table here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SubsampleArgs {
    #[arg(long)]
    db: PathBuf,
    /// Power of two.
    #[arg(long)]
    factor: u32,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SceneArg {
    MovingBar,
    RandomTexturePan,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EventFileFormat {
    Text,
    Binary,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "random-texture-pan")]
    pattern: SceneArg,
    #[arg(long, default_value = "86x45")]
    geometry: Geometry,
    /// Pan speed in pixels per second.
    #[arg(long, default_value_t = 2000.0)]
    speed: f64,
    #[arg(long, value_parser = duration::parse_whole_us, default_value = "1s")]
    duration: u64,
    /// Target scene event rate per second.
    #[arg(long, default_value_t = 240_000.0)]
    rate: f64,
    /// Scene seed; traverses sharing it show the same places.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-traverse seed for pixel offsets and noise.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Background noise events per second.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, value_enum, default_value = "text")]
    format: EventFileFormat,
    #[arg(short, long)]
    output: PathBuf,
}

/// Exit status 2 for bad usage or invalid input, 1 for everything else.
enum Failure {
    Usage(String),
    Runtime(String),
    /// Standard output was closed early, e.g. piped into `head`.
    ClosedPipe,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
            Failure::ClosedPipe => 0,
        }
    }
}

fn write_failure(e: io::Error) -> Failure {
    if e.kind() == io::ErrorKind::BrokenPipe {
        Failure::ClosedPipe
    } else {
        runtime(format!("writing output: {e}"))
    }
}

fn is_missing(e: &io::Error) -> bool {
    e.kind() == io::ErrorKind::NotFound
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        match &e {
            IngestError::Io { source, .. } if is_missing(source) => Failure::Usage(e.to_string()),
            IngestError::MissingGeometry | IngestError::InvalidParameter(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<DatabaseError> for Failure {
    fn from(e: DatabaseError) -> Self {
        match &e {
            DatabaseError::MissingCounts(_) | DatabaseError::NotPowerOfTwo(_) => Failure::Usage(e.to_string()),
            DatabaseError::Io(source) if is_missing(source) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) | EvalError::ConfigFile { .. } => Failure::Usage(e.to_string()),
            EvalError::Io { ref source, .. } if is_missing(source) => Failure::Usage(e.to_string()),
            EvalError::Ingest(inner) => inner.into(),
            EvalError::Database(inner) => inner.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        configure_threads(threads);
    }

    let outcome = match cli.command {
        Command::BuildDb(a) => build_db(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
        Command::Subsample(a) => subsample(a),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Failure::Usage(m) | Failure::Runtime(m) = &f {
                eprintln!("error: {m}");
            }
            ExitCode::from(f.code())
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("could not size the thread pool: {e}");
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: usize) {
    if threads > 1 {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
}

fn load_stream(args: &StreamArgs, target: Option<Geometry>) -> Result<(Vec<Event>, Geometry), Failure> {
    let stream = read_events(
        &args.events,
        &ReadOptions {
            geometry: args.geometry,
            unsorted: if args.sort_unsorted {
                UnsortedPolicy::Sort
            } else {
                UnsortedPolicy::Reject
            },
        },
    )?;
    let source = stream.header.geometry;
    match target.or(args.downsample) {
        Some(t) if t != source => {
            let events = downsample_events(&stream.events, &source, &t).map_err(|e| Failure::Usage(e.to_string()))?;
            Ok((events, t))
        }
        _ => Ok((stream.events, source)),
    }
}

fn build_frames(events: &[Event], spec: WindowSpec, geometry: Geometry, counts: bool) -> Result<Vec<Frame>, Failure> {
    if counts {
        Ok(count_frames(events, &spec, geometry)
            .map_err(runtime)?
            .into_iter()
            .map(Frame::Count)
            .collect())
    } else {
        frame_stream(events, spec, geometry, FrameMode::Binary)
            .collect::<Result<_, _>>()
            .map_err(runtime)
    }
}

fn build_db(args: BuildDbArgs) -> Result<(), Failure> {
    let (events, geometry) = load_stream(&args.stream, None)?;
    let spec = WindowSpec::aligned(args.window, &events).map_err(|e| Failure::Usage(e.to_string()))?;
    let frames = build_frames(&events, spec, geometry, args.counts)?;
    let db = ReferenceDatabase::from_frames(geometry, args.window, args.traverse_id, frames, args.sparse_threshold)?;
    db.save(&args.output)
        .map_err(|e| runtime(format!("{}: {e}", args.output.display())))?;
    println!("frames: {}", db.len());
    println!("mean_active_pixels: {}", db.mean_active_pixels());
    println!("geometry: {geometry}");
    println!("window_us: {}", args.window);
    Ok(())
}

fn load_db(path: &Path) -> Result<ReferenceDatabase, Failure> {
    ReferenceDatabase::load(path).map_err(|e| {
        let f = Failure::from(e);
        match f {
            Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
            Failure::Runtime(m) => Failure::Runtime(format!("{}: {m}", path.display())),
            other => other,
        }
    })
}

fn query(args: QueryArgs) -> Result<(), Failure> {
    let db = load_db(&args.db)?;
    if args.matcher.needs_counts() && !db.has_counts() {
        return Err(DatabaseError::MissingCounts(args.matcher).into());
    }
    if args.k == 0 {
        return Err(Failure::Usage("-k must be at least 1".into()));
    }
    let k = if args.k > db.len() {
        log::warn!("k = {} exceeds the {} database frames; listing {}", args.k, db.len(), db.len());
        db.len()
    } else {
        args.k
    };
    let (events, geometry) = load_stream(&args.stream, Some(db.geometry()))?;
    let spec = WindowSpec::aligned(db.window_duration_us(), &events).map_err(runtime)?;
    let frames = build_frames(&events, spec, geometry, args.matcher.needs_counts())?;
    let searcher = Searcher::new(
        &db,
        SearchConfig {
            matcher: args.matcher,
            zoom_weighting: args.zoom_weighting.into(),
            pixel_samples: args.pixel_samples,
            seed: args.seed,
            ..SearchConfig::new(args.matcher)
        },
    )?;

    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let write_err = write_failure;
    if let OutputFormat::Csv = args.format {
        let header = if args.no_timing {
            "query_index,rank,reference_index,score,degenerate"
        } else {
            "query_index,rank,reference_index,score,degenerate,elapsed_us"
        };
        writeln!(out, "{header}").map_err(write_err)?;
    }
    let started = Instant::now();
    for (i, frame) in frames.into_iter().enumerate() {
        let result = searcher.search(i, &Query::from_frame(frame), k)?;
        let elapsed_us = result.elapsed.as_secs_f64() * 1e6;
        match args.format {
            OutputFormat::Csv => {
                for (rank, r) in result.ranked.iter().enumerate() {
                    write!(out, "{i},{},{},{},{}", rank + 1, r.index, r.score, result.degenerate).map_err(write_err)?;
                    if !args.no_timing {
                        write!(out, ",{elapsed_us:.1}").map_err(write_err)?;
                    }
                    writeln!(out).map_err(write_err)?;
                }
            }
            OutputFormat::Text => {
                let ranked: Vec<String> = result.ranked.iter().map(|r| format!("{} ({})", r.index, r.score)).collect();
                write!(out, "query {i}: {}", ranked.join(", ")).map_err(write_err)?;
                if result.degenerate {
                    write!(out, " [empty query]").map_err(write_err)?;
                }
                if !args.no_timing {
                    write!(out, " [{elapsed_us:.1} µs]").map_err(write_err)?;
                }
                writeln!(out).map_err(write_err)?;
            }
        }
    }
    out.flush().map_err(write_err)?;
    log::info!("searched in {:.3} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let config = ExperimentConfig::load(&args.config)?;
    let report = run_experiment(&config)?;
    write_report(&report, &args.output)?;
    println!("window_us  matcher           factor  frames  queries  recall_at_1");
    for c in &report.cells {
        println!(
            "{:<9}  {:<16}  {:<6}  {:<6}  {:<7}  {:.4}",
            c.window_us,
            c.matcher.name(),
            c.subsample_factor,
            c.database_frames,
            c.queries,
            c.recall_at_1
        );
    }
    println!(
        "{} grid cells, {} failed; reports in {}",
        report.cells.len() + report.failures.len(),
        report.failures.len(),
        args.output.display()
    );
    if report.failures.is_empty() {
        Ok(())
    } else {
        for f in &report.failures {
            eprintln!(
                "cell window {} µs, matcher {}, factor {}: {}",
                f.window_us,
                f.matcher.map_or("-".to_string(), |m| m.to_string()),
                f.subsample_factor.map_or("-".to_string(), |s| s.to_string()),
                f.error
            );
        }
        Err(Failure::Runtime(format!("{} grid cells failed", report.failures.len())))
    }
}

fn stats(args: StatsArgs) -> Result<(), Failure> {
    let windows = args.windows;
    let (events, geometry) = load_stream(&args.stream, None)?;
    let rows = event_stats(&events, &windows, geometry).map_err(|e| match e {
        EvalError::InvalidWindow(_) => Failure::Usage(e.to_string()),
        other => runtime(other),
    })?;
    let mut table = String::from("window_us,windows,mean_events,mean_active_pixels\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{},{},{}\n",
            r.window_us, r.windows, r.mean_events, r.mean_active_pixels
        ));
    }
    match &args.output {
        Some(path) => std::fs::write(path, table).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => io::stdout().write_all(table.as_bytes()).map_err(write_failure),
    }
}

fn subsample(args: SubsampleArgs) -> Result<(), Failure> {
    if !args.factor.is_power_of_two() {
        return Err(DatabaseError::NotPowerOfTwo(args.factor).into());
    }
    let db = load_db(&args.db)?;
    let out = db.subsample(args.factor)?;
    out.save(&args.output)
        .map_err(|e| runtime(format!("{}: {e}", args.output.display())))?;
    println!("frames: {} -> {}", db.len(), out.len());
    println!("subsample_factor: {}", out.subsample_factor());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let pattern = match args.pattern {
        SceneArg::MovingBar => Pattern::MovingBar,
        SceneArg::RandomTexturePan => Pattern::RandomTexturePan,
    };
    let mut params = SynthParams::new(args.geometry, pattern, args.speed, args.duration, args.rate, args.seed);
    params.noise_seed = args.noise_seed;
    params.noise_rate_hz = args.noise_rate;
    let events = synth_traverse(&params)?;
    match args.format {
        EventFileFormat::Text => write_event_text(&events, args.geometry, &args.output)?,
        EventFileFormat::Binary => write_event_binary(&events, args.geometry, &args.output)?,
    }
    println!("events: {}", events.len());
    Ok(())
}
