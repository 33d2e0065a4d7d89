//! Command-line front end: generate synthetic captures, distill them into
//! pseudonym tracks, score fingerprinting anonymity, link rotated
//! pseudonyms, and reproduce the whole desk-scale experiment in one shot.
//!
//! Exit codes: 0 success, 1 validation or data error, 2 I/O error. All
//! diagnostics go to stderr; data goes to files or stdout.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use iblab::anonymity::{fingerprinting_anonymity, histogram, render_histogram_svg, AnonymityError};
use iblab::capture::{
    build_tracks, read_capture, read_tracks, write_capture, write_tracks, CaptureError,
    PipelineConfig,
};
use iblab::linker::{evaluate_links, link_tracks, LinkError, LinkHypothesis};
use iblab::sim::{
    read_ground_truth, read_profiles, simulate, table1_profiles, write_ground_truth,
    ReceiverModel, SimError, REFERENCE_SEED,
};
use iblab::stats::{
    device_summaries, precision_epsilon, render_device_table, summarize_track, StatsError,
    TrackSummary,
};

#[derive(Parser)]
#[command(
    name = "iblab",
    version,
    about = "Passive BLE advertising analysis: timing fingerprints, anonymity scoring, pseudonym linking"
)]
struct Cli {
    /// Worker threads for parallel sections; results are identical at any
    /// count, higher values only trade determinism of timing for speed.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=512))]
    threads: u32,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture plus ground truth from device profiles.
    Simulate(SimulateArgs),
    /// Distill a capture into pseudonym tracks and summarize them.
    Analyze(AnalyzeArgs),
    /// Score the fingerprinting anonymity of a set of latency means.
    Anonymity(AnonymityArgs),
    /// Propose links between tracks across pseudonym rotations.
    Link(LinkArgs),
    /// Run the full seeded pipeline and emit every artifact into a directory.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Device profiles: `table1` for the builtin 15-handset fleet, or a
    /// JSON-lines profile file.
    #[arg(long, default_value = "table1")]
    profiles: String,

    /// Run length in seconds.
    #[arg(long, default_value_t = 7200.0)]
    duration: f64,

    /// Probability that the receiver drops each record independently.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,

    /// Receiver timestamp grid in milliseconds; 0 keeps microseconds.
    #[arg(long, default_value_t = 0.0)]
    quantization: f64,

    /// Random seed; identical flags and seed give byte-identical outputs.
    #[arg(long, default_value_t = REFERENCE_SEED)]
    seed: u64,

    /// Capture output path (JSON lines).
    #[arg(long)]
    out: PathBuf,

    /// Ground-truth output path [default: <out>.truth].
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Capture input path.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,

    /// Ground-truth file for per-device aggregation [default: <in>.truth
    /// when that file exists; per-track summary otherwise].
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Lower edge of the accepted latency window in milliseconds.
    #[arg(long, default_value_t = 220.0)]
    window_low: f64,

    /// Upper edge of the accepted latency window in milliseconds.
    #[arg(long, default_value_t = 350.0)]
    window_high: f64,

    /// Per-address session cap in seconds.
    #[arg(long, default_value_t = 600.0)]
    session_limit: f64,

    /// Minimum surviving samples per track.
    #[arg(long, default_value_t = 50)]
    min_points: usize,

    /// Write surviving tracks here (JSON lines).
    #[arg(long)]
    tracks_out: Option<PathBuf>,

    /// Write one track mean per line here.
    #[arg(long)]
    means_out: Option<PathBuf>,

    /// Report format on stdout.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct AnonymityArgs {
    /// Input file with one latency mean in milliseconds per line.
    #[arg(long)]
    means: PathBuf,

    /// Bin width in milliseconds.
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,

    /// Write the entropy-maximizing histogram as an SVG chart here.
    #[arg(long)]
    svg: Option<PathBuf>,

    /// Report format on stdout.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct LinkArgs {
    /// Track file produced by `analyze --tracks-out` (JSON lines).
    #[arg(long)]
    tracks: PathBuf,

    /// Largest track-mean difference treated as the same device, in
    /// milliseconds.
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,

    /// Largest allowed gap between one track's end and the next track's
    /// start, in seconds.
    #[arg(long, default_value_t = 30.0)]
    max_gap: f64,

    /// Ground-truth file; when given, hypotheses are also scored.
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Write hypotheses here (JSON lines) in addition to stdout.
    #[arg(long)]
    links_out: Option<PathBuf>,

    /// Report format on stdout.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Directory receiving every artifact of the run.
    #[arg(long)]
    out_dir: PathBuf,

    /// Device profiles: `table1` or a JSON-lines profile file.
    #[arg(long, default_value = "table1")]
    profiles: String,

    /// Run length in seconds; tracks keep whole pseudonym cycles.
    #[arg(long, default_value_t = 7200.0)]
    duration: f64,

    /// Probability that the receiver drops each record independently.
    #[arg(long, default_value_t = 0.05)]
    loss: f64,

    /// Random seed; identical flags and seed give byte-identical artifacts.
    #[arg(long, default_value_t = REFERENCE_SEED)]
    seed: u64,

    /// Bin width for anonymity scoring and linking, in milliseconds.
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,

    /// Linking adjacency bound in seconds.
    #[arg(long, default_value_t = 30.0)]
    max_gap: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Human-readable tables.
    Text,
    /// JSON.
    Structured,
}

enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

fn capture_err(e: CaptureError) -> CliError {
    match e {
        CaptureError::Io(inner) => CliError::Io(inner.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Io(message) => CliError::Io(message),
        other => CliError::Validation(other.to_string()),
    }
}

fn stats_err(e: StatsError) -> CliError {
    CliError::Validation(e.to_string())
}

fn anon_err(e: AnonymityError) -> CliError {
    CliError::Validation(e.to_string())
}

fn link_err(e: LinkError) -> CliError {
    CliError::Validation(e.to_string())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version displays are successful outputs; everything
            // else is a flag validation failure.
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build_global()
    {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(args) => run_simulate(args),
        Command::Analyze(args) => run_analyze(args),
        Command::Anonymity(args) => run_anonymity(args),
        Command::Link(args) => run_link(args),
        Command::Reproduce(args) => run_reproduce(args),
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| io_err(path, e))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn default_truth_path(capture: &Path) -> PathBuf {
    PathBuf::from(format!("{}.truth", capture.display()))
}

fn load_profiles(spec: &str) -> Result<Vec<iblab::sim::DeviceProfile>, CliError> {
    if spec == "table1" {
        return Ok(table1_profiles());
    }
    let path = Path::new(spec);
    read_profiles(open_reader(path)?).map_err(sim_err)
}

fn read_means(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut means = Vec::new();
    for (idx, line) in open_reader(path)?.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        let value: f64 = token.parse().map_err(|e| {
            CliError::Validation(format!("{} line {}: {e}", path.display(), idx + 1))
        })?;
        means.push(value);
    }
    Ok(means)
}

fn run_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let profiles = load_profiles(&args.profiles)?;
    let receiver = ReceiverModel {
        loss_probability: args.loss,
        quantization_ms: args.quantization,
    };
    let (records, truth) =
        simulate(&profiles, args.duration, &receiver, args.seed).map_err(sim_err)?;

    let mut capture = create_writer(&args.out)?;
    write_capture(&mut capture, &records).map_err(|e| io_err(&args.out, e))?;
    capture.flush().map_err(|e| io_err(&args.out, e))?;

    let truth_path = args.truth.unwrap_or_else(|| default_truth_path(&args.out));
    let mut truth_out = create_writer(&truth_path)?;
    write_ground_truth(&mut truth_out, &truth).map_err(sim_err)?;
    truth_out.flush().map_err(|e| io_err(&truth_path, e))?;

    eprintln!(
        "wrote {} records to {} and {} identity intervals to {}",
        records.len(),
        args.out.display(),
        truth.len(),
        truth_path.display()
    );
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let mut reader = read_capture(open_reader(&args.input)?);
    let mut records = Vec::new();
    for item in &mut reader {
        records.push(item.map_err(capture_err)?);
    }
    if reader.non_monotonic_count() > 0 {
        eprintln!(
            "note: {} records arrived out of timestamp order",
            reader.non_monotonic_count()
        );
    }

    let cfg = PipelineConfig {
        window_low_ms: args.window_low,
        window_high_ms: args.window_high,
        session_limit_s: args.session_limit,
        min_points: args.min_points,
    };
    let tracks = build_tracks(records, &cfg).map_err(capture_err)?;

    if let Some(path) = &args.tracks_out {
        let mut out = create_writer(path)?;
        write_tracks(&mut out, &tracks).map_err(|e| io_err(path, e))?;
        out.flush().map_err(|e| io_err(path, e))?;
    }

    let summaries: Vec<TrackSummary> = tracks
        .iter()
        .map(summarize_track)
        .collect::<Result<_, _>>()
        .map_err(stats_err)?;
    if let Some(path) = &args.means_out {
        let mut text = String::new();
        for s in &summaries {
            writeln!(text, "{}", s.ibl_mean_ms).expect("writing to a String cannot fail");
        }
        write_text(path, &text)?;
    }

    let truth_path = args.truth.clone().or_else(|| {
        let sibling = default_truth_path(&args.input);
        if sibling.exists() {
            eprintln!("note: using ground truth from {}", sibling.display());
            Some(sibling)
        } else {
            None
        }
    });

    match truth_path {
        Some(path) => {
            let truth = read_ground_truth(open_reader(&path)?).map_err(sim_err)?;
            let devices = device_summaries(&tracks, &truth).map_err(stats_err)?;
            match args.format {
                Format::Text => {
                    print!("{}", render_device_table(&devices));
                    if !devices.is_empty() {
                        println!(
                            "\nprecision epsilon: {:.4} ms",
                            precision_epsilon(&devices).map_err(stats_err)?
                        );
                    }
                }
                Format::Structured => {
                    let eps = if devices.is_empty() {
                        serde_json::Value::Null
                    } else {
                        precision_epsilon(&devices).map_err(stats_err)?.into()
                    };
                    let doc = serde_json::json!({
                        "devices": devices,
                        "precision_epsilon_ms": eps,
                    });
                    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
                }
            }
        }
        None => match args.format {
            Format::Text => print!("{}", render_track_table(&summaries)),
            Format::Structured => {
                let doc = serde_json::json!({ "tracks": summaries });
                println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
            }
        },
    }
    Ok(())
}

fn render_track_table(summaries: &[TrackSummary]) -> String {
    let mut out = String::from("MAC                 Samples   Mean (ms)   Stdev (ms)\n");
    for s in summaries {
        writeln!(
            out,
            "{}  {:>8}  {:>10.3}  {:>11.3}",
            s.mac, s.sample_count, s.ibl_mean_ms, s.ibl_stdev_ms
        )
        .expect("writing to a String cannot fail");
    }
    out
}

fn run_anonymity(args: AnonymityArgs) -> Result<(), CliError> {
    let means = read_means(&args.means)?;
    let report = fingerprinting_anonymity(&means, args.epsilon).map_err(anon_err)?;

    if let Some(path) = &args.svg {
        let hist = histogram(&means, args.epsilon, report.best_offset_ms).map_err(anon_err)?;
        write_text(path, &render_histogram_svg(&hist))?;
    }

    match args.format {
        Format::Text => {
            println!("points:                  {}", report.n);
            println!("epsilon:                 {} ms", report.epsilon_ms);
            println!("best offset:             {:.6} ms", report.best_offset_ms);
            println!("entropy:                 {:.4} bits", report.entropy_bits);
            println!("anonymity degree:        {:.4}", report.anonymity);
            println!("distinguishable devices: {:.1}", report.distinguishable_devices);
        }
        Format::Structured => {
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
    }
    Ok(())
}

fn run_link(args: LinkArgs) -> Result<(), CliError> {
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(CliError::Validation(format!(
            "epsilon must be positive, got {}",
            args.epsilon
        )));
    }
    if !(args.max_gap > 0.0 && args.max_gap.is_finite()) {
        return Err(CliError::Validation(format!(
            "max-gap must be positive, got {}",
            args.max_gap
        )));
    }

    let tracks = read_tracks(open_reader(&args.tracks)?).map_err(capture_err)?;
    let links = link_tracks(&tracks, args.epsilon, args.max_gap);

    if let Some(path) = &args.links_out {
        let mut out = create_writer(path)?;
        for link in &links {
            serde_json::to_writer(&mut out, link).map_err(|e| io_err(path, e))?;
            out.write_all(b"\n").map_err(|e| io_err(path, e))?;
        }
        out.flush().map_err(|e| io_err(path, e))?;
    }

    let evaluation = match &args.truth {
        Some(path) => {
            let truth = read_ground_truth(open_reader(path)?).map_err(sim_err)?;
            Some(evaluate_links(&links, &tracks, &truth).map_err(link_err)?)
        }
        None => None,
    };

    match args.format {
        Format::Text => {
            for link in &links {
                println!(
                    "{} -> {}  mean_gap {:.4} ms  time_gap {:.3} s  score {:.4}",
                    link.predecessor, link.successor, link.mean_gap_ms, link.time_gap_s, link.score
                );
            }
            if let Some(eval) = &evaluation {
                println!(
                    "true positives {}  false positives {}  false negatives {}",
                    eval.true_positives, eval.false_positives, eval.false_negatives
                );
                println!("precision {:.4}  recall {:.4}", eval.precision, eval.recall);
            }
        }
        Format::Structured => {
            let doc = match &evaluation {
                Some(eval) => serde_json::json!({ "links": links, "evaluation": eval }),
                None => serde_json::json!({ "links": links }),
            };
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        }
    }
    Ok(())
}

fn run_reproduce(args: ReproduceArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    let path = |name: &str| args.out_dir.join(name);

    let profiles = load_profiles(&args.profiles)?;
    let receiver = ReceiverModel {
        loss_probability: args.loss,
        quantization_ms: 0.0,
    };
    let (records, truth) =
        simulate(&profiles, args.duration, &receiver, args.seed).map_err(sim_err)?;

    let capture_path = path("capture.jsonl");
    let mut capture = create_writer(&capture_path)?;
    write_capture(&mut capture, &records).map_err(|e| io_err(&capture_path, e))?;
    capture.flush().map_err(|e| io_err(&capture_path, e))?;

    let truth_path = path("truth.jsonl");
    let mut truth_out = create_writer(&truth_path)?;
    write_ground_truth(&mut truth_out, &truth).map_err(sim_err)?;
    truth_out.flush().map_err(|e| io_err(&truth_path, e))?;

    // Whole pseudonym cycles are kept so that rotation adjacency, which the
    // linking step depends on, survives intact.
    let cfg = PipelineConfig {
        session_limit_s: args.duration,
        ..PipelineConfig::default()
    };
    let record_count = records.len();
    let tracks = build_tracks(records, &cfg).map_err(capture_err)?;
    let tracks_path = path("tracks.jsonl");
    let mut tracks_out = create_writer(&tracks_path)?;
    write_tracks(&mut tracks_out, &tracks).map_err(|e| io_err(&tracks_path, e))?;
    tracks_out.flush().map_err(|e| io_err(&tracks_path, e))?;

    let devices = device_summaries(&tracks, &truth).map_err(stats_err)?;
    let epsilon_hat = precision_epsilon(&devices).map_err(stats_err)?;
    let table = render_device_table(&devices);
    write_text(
        &path("summary.txt"),
        &format!("{table}\nprecision epsilon: {epsilon_hat:.4} ms\n"),
    )?;

    let summaries: Vec<TrackSummary> = tracks
        .iter()
        .map(summarize_track)
        .collect::<Result<_, _>>()
        .map_err(stats_err)?;
    let means: Vec<f64> = summaries.iter().map(|s| s.ibl_mean_ms).collect();
    let mut means_text = String::new();
    for mean in &means {
        writeln!(means_text, "{mean}").expect("writing to a String cannot fail");
    }
    write_text(&path("track_means.txt"), &means_text)?;

    let report = fingerprinting_anonymity(&means, args.epsilon).map_err(anon_err)?;
    write_text(
        &path("anonymity.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&report).expect("serializable")
        ),
    )?;
    let hist = histogram(&means, args.epsilon, report.best_offset_ms).map_err(anon_err)?;
    write_text(&path("histogram.svg"), &render_histogram_svg(&hist))?;

    let links = link_tracks(&tracks, args.epsilon, args.max_gap);
    let links_path = path("links.jsonl");
    let mut links_out = create_writer(&links_path)?;
    for link in &links {
        serde_json::to_writer(&mut links_out, link).map_err(|e| io_err(&links_path, e))?;
        links_out.write_all(b"\n").map_err(|e| io_err(&links_path, e))?;
    }
    links_out.flush().map_err(|e| io_err(&links_path, e))?;

    let evaluation = evaluate_links(&links, &tracks, &truth).map_err(link_err)?;
    write_text(
        &path("evaluation.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&evaluation).expect("serializable")
        ),
    )?;

    let report_text = render_report(
        &args, record_count, &truth, &tracks, &table, epsilon_hat, &report, &links, &evaluation,
    );
    write_text(&path("report.txt"), &report_text)?;
    print!("{report_text}");
    eprintln!("artifacts written to {}", args.out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn render_report(
    args: &ReproduceArgs,
    record_count: usize,
    truth: &[iblab::sim::GroundTruthEntry],
    tracks: &[iblab::capture::PseudonymTrack],
    table: &str,
    epsilon_hat: f64,
    anonymity: &iblab::anonymity::AnonymityReport,
    links: &[LinkHypothesis],
    evaluation: &iblab::linker::LinkEvaluation,
) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "Synthetic fleet replication").unwrap();
    writeln!(
        w,
        "run: {} s, loss {}, seed {}",
        args.duration, args.loss, args.seed
    )
    .unwrap();
    writeln!(
        w,
        "capture: {} records across {} identity intervals; {} tracks survived the pipeline",
        record_count,
        truth.len(),
        tracks.len()
    )
    .unwrap();
    writeln!(w).unwrap();
    writeln!(w, "{}", table.trim_end()).unwrap();
    writeln!(w).unwrap();
    writeln!(
        w,
        "precision epsilon (mean double stdev): {epsilon_hat:.4} ms"
    )
    .unwrap();
    writeln!(w).unwrap();
    writeln!(
        w,
        "anonymity of {} track means at epsilon {} ms:",
        anonymity.n, anonymity.epsilon_ms
    )
    .unwrap();
    writeln!(
        w,
        "  entropy {:.4} bits, degree {:.4}, distinguishable devices {:.1}",
        anonymity.entropy_bits, anonymity.anonymity, anonymity.distinguishable_devices
    )
    .unwrap();
    writeln!(w).unwrap();
    writeln!(
        w,
        "linking at epsilon {} ms, max gap {} s: {} hypotheses",
        args.epsilon,
        args.max_gap,
        links.len()
    )
    .unwrap();
    writeln!(
        w,
        "  true positives {}, false positives {}, false negatives {}",
        evaluation.true_positives, evaluation.false_positives, evaluation.false_negatives
    )
    .unwrap();
    writeln!(
        w,
        "  precision {:.4}, recall {:.4}",
        evaluation.precision, evaluation.recall
    )
    .unwrap();
    out
}
