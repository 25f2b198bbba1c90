//! `evcount`: count falling objects in event streams, run the simulated
//! feeder stand in closed loop, or generate synthetic recordings.
//!
//! Exit codes: 0 ok, 1 usage, 2 I/O or malformed input, 3 run ended by a
//! safety trip.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use evcount_core::detect::{Connectivity, DetectionParams};
use evcount_core::event::{Event, EventError, SensorGeometry};
use evcount_core::filter::ActivityFilterParams;
use evcount_core::frame::AccumulationParams;
use evcount_core::io::{EventFormat, EventReader, EventWriter};
use evcount_core::pipeline::{count_concurrent, count_sequential, CountError, PipelineParams};
use evcount_core::report::{ParamsEcho, RunReport};
use evcount_core::sim::{
    record, run_closed_loop, write_ground_truth_csv, ClosedLoopConfig, ControlParams, GrainRecord, RecordingConfig,
    SceneParams,
};
use evcount_core::track::TrackerParams;
use evcount_core::PidGains;

const SEED_ENV: &str = "EVCOUNT_SEED";

#[derive(Parser, Debug)]
#[command(name = "evcount", version, about = "Event-camera object counting and feeder flow control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count objects in a recorded event file
    Count(CountArgs),
    /// Run the simulated stand under flow control and optionally record it
    Sim(SimArgs),
    /// Run the simulated stand under flow control and print the controller trace
    ClosedLoop(ClosedLoopArgs),
    /// Record the simulated stand at a constant feeder duty
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Activity filter neighbourhood radius, pixels
    #[arg(long, default_value_t = 1)]
    filter_radius: u16,
    /// Activity filter support window, µs
    #[arg(long, default_value_t = 5000)]
    filter_window_us: u64,
    #[arg(long)]
    no_activity_filter: bool,
    /// Frame accumulation period, µs
    #[arg(long, default_value_t = 2000)]
    accumulation_us: u64,
    /// Pixel connectivity, 4 or 8
    #[arg(long, default_value_t = 8, value_parser = parse_connectivity)]
    connectivity: u8,
    /// Smallest blob kept, pixels
    #[arg(long, default_value_t = 4)]
    min_area: u32,
    /// Count-line rows as y1,y2,y3 (default: 40/50/60% of the height)
    #[arg(long, value_parser = parse_lines)]
    lines: Option<[u32; 3]>,
    #[arg(long, default_value_t = 0.1)]
    iou_threshold: f64,
    /// Frames an unmatched track survives
    #[arg(long, default_value_t = 0)]
    max_missed_frames: u32,
}

impl PipelineArgs {
    fn params(&self) -> PipelineParams {
        PipelineParams {
            activity: (!self.no_activity_filter).then_some(ActivityFilterParams {
                radius: self.filter_radius,
                window_us: self.filter_window_us,
            }),
            accumulation: AccumulationParams { period_us: self.accumulation_us },
            detection: DetectionParams {
                connectivity: Connectivity::try_from(self.connectivity).expect("validated by clap"),
                min_area: self.min_area,
            },
            tracker: TrackerParams {
                iou_threshold: self.iou_threshold,
                max_missed_frames: self.max_missed_frames,
            },
            lines: self.lines,
        }
    }
}

#[derive(Args, Debug)]
struct CountArgs {
    input: PathBuf,
    /// csv or bin; guessed from the extension when omitted
    #[arg(long)]
    format: Option<EventFormat>,
    /// Sensor width for CSV input (binary files carry their own)
    #[arg(long, default_value_t = 1280)]
    width: u16,
    #[arg(long, default_value_t = 720)]
    height: u16,
    /// Run the stages on separate threads
    #[arg(long)]
    concurrent: bool,
    /// Write the JSON report here
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug, Clone)]
struct SceneArgs {
    /// Overridden by EVCOUNT_SEED
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grains per second at full duty
    #[arg(long, default_value_t = 40.0)]
    emission_rate: f64,
    /// Background events per pixel per second
    #[arg(long, default_value_t = 0.5)]
    noise_rate: f64,
    /// Grain edge length range, "MIN-MAX" or a single size
    #[arg(long, default_value = "6-14", value_parser = parse_size_range)]
    grain_size: (u16, u16),
    /// Keep grains in separate column lanes
    #[arg(long)]
    distinct_columns: bool,
    /// Grains available to the feeder (default: unlimited)
    #[arg(long)]
    hopper: Option<u64>,
    #[arg(long, default_value_t = 1280)]
    width: u16,
    #[arg(long, default_value_t = 720)]
    height: u16,
}

impl SceneArgs {
    fn params(&self, seed: u64) -> Result<SceneParams, Failure> {
        let geometry = SensorGeometry::new(self.width, self.height).map_err(|e| Failure::Usage(e.to_string()))?;
        let p = SceneParams {
            geometry,
            emission_rate: self.emission_rate,
            noise_rate: self.noise_rate,
            grain_size: self.grain_size,
            distinct_columns: self.distinct_columns,
            hopper: self.hopper,
            slot_x: (self.width / 4, self.width * 3 / 4),
            seed,
            ..SceneParams::default()
        };
        p.validate().map_err(Failure::Usage)?;
        Ok(p)
    }
}

#[derive(Args, Debug, Clone)]
struct ControlArgs {
    /// Target flow, grains per minute
    #[arg(long, default_value_t = 200.0)]
    setpoint: f64,
    #[arg(long, default_value_t = 300)]
    duration_s: u64,
    #[arg(long, default_value_t = 2.0)]
    kp: f64,
    #[arg(long, default_value_t = 0.2)]
    ki: f64,
    #[arg(long, default_value_t = 0.1)]
    kd: f64,
    /// Control value to duty-fraction gain
    #[arg(long, default_value_t = 0.01)]
    actuation_scale: f64,
    #[arg(long, default_value_t = 10)]
    congestion_window_s: usize,
}

impl ControlArgs {
    fn params(&self) -> ControlParams {
        ControlParams {
            gains: PidGains { kp: self.kp, ki: self.ki, kd: self.kd },
            actuation_scale: self.actuation_scale,
            congestion_window_s: self.congestion_window_s,
            ..ControlParams::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RecordArgs {
    /// Write the event stream as CSV
    #[arg(long)]
    events_csv: Option<PathBuf>,
    /// Write the event stream in the binary format
    #[arg(long)]
    events_bin: Option<PathBuf>,
    /// Write the ground-truth log (grain_id,spawn_t_us,exit_t_us)
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    control: ControlArgs,
    #[command(flatten)]
    record: RecordArgs,
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct ClosedLoopArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    control: ControlArgs,
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    record: RecordArgs,
    /// Constant feeder duty in [0, 1]
    #[arg(long, conflicts_with = "rate", required_unless_present = "rate")]
    on_fraction: Option<f64>,
    /// Mean flow, grains per minute; sets the duty
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 60)]
    duration_s: u64,
}

fn parse_connectivity(s: &str) -> Result<u8, String> {
    match s {
        "4" => Ok(4),
        "8" => Ok(8),
        _ => Err(format!("connectivity must be 4 or 8, got {s}")),
    }
}

fn parse_lines(s: &str) -> Result<[u32; 3], String> {
    let rows: Vec<u32> = s
        .split(',')
        .map(|r| r.trim().parse::<u32>().map_err(|e| format!("bad row {r:?}: {e}")))
        .collect::<Result<_, _>>()?;
    rows.try_into().map_err(|_| "expected three rows, e.g. 288,360,432".to_string())
}

fn parse_size_range(s: &str) -> Result<(u16, u16), String> {
    let parse = |v: &str| v.trim().parse::<u16>().map_err(|e| format!("bad size {v:?}: {e}"));
    match s.split_once('-') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => parse(s).map(|v| (v, v)),
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn seed(cli_seed: u64) -> Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(cli_seed),
    }
}

fn write_json(report: &RunReport, path: &Path) -> Result<(), Failure> {
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Failure::Io(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_at(path))
}

fn summary(report: &RunReport) {
    let mut line = format!("count {}", report.pipeline_count);
    if let Some(t) = report.ground_truth {
        line += &format!(", ground truth {t}");
    }
    if let Some(e) = report.expected {
        line += &format!(", expected {e}");
    }
    if let Some(s) = report.safety_tripped_at_s {
        line += &format!(", safety trip at {s} s");
    }
    eprintln!(
        "{line} ({} events, {:.2} s, {:.0} events/s)",
        report.events_processed, report.wall_clock_s, report.throughput_events_per_s
    );
}

fn cmd_count(args: CountArgs) -> Result<u8, Failure> {
    let params = args.pipeline.params();
    let format = args.format.unwrap_or_else(|| EventFormat::from_path(&args.input));
    let file = File::open(&args.input).map_err(io_at(&args.input))?;
    let source: Box<dyn BufRead + Send> = Box::new(BufReader::with_capacity(1 << 20, file));
    let reader = match format {
        EventFormat::Csv => {
            let g = SensorGeometry::new(args.width, args.height).map_err(|e| Failure::Usage(e.to_string()))?;
            EventReader::csv(source, g)
        }
        EventFormat::Binary => EventReader::binary(source).map_err(|e| Failure::Io(e.to_string()))?,
    };
    let geometry = reader.geometry();
    params.validate(geometry).map_err(Failure::Usage)?;

    let started = Instant::now();
    let outcome = if args.concurrent {
        count_concurrent(reader, geometry, params.clone(), 8)
    } else {
        count_sequential(reader, geometry, params.clone())
    }
    .map_err(|e: CountError<EventError>| match e {
        CountError::Params(m) => Failure::Usage(m),
        CountError::Source(e) => Failure::Io(format!("{}: {e}", args.input.display())),
    })?;
    let duration = outcome.per_second.len() as f64;
    let report = RunReport::from_outcome(outcome, ParamsEcho::pipeline_only(params), duration, started.elapsed().as_secs_f64());

    report.write_per_second_csv(io::stdout().lock())?;
    if let Some(path) = &args.json_out {
        write_json(&report, path)?;
    }
    summary(&report);
    Ok(0)
}

/// Event sinks for the formats the user asked for.
struct Recorder {
    writers: Vec<(PathBuf, EventWriter<File>)>,
    error: Option<Failure>,
}

impl Recorder {
    fn open(args: &RecordArgs, geometry: SensorGeometry) -> Result<Self, Failure> {
        let mut writers = Vec::new();
        for (path, format) in [(&args.events_csv, EventFormat::Csv), (&args.events_bin, EventFormat::Binary)] {
            if let Some(path) = path {
                let file = File::create(path).map_err(io_at(path))?;
                let w = EventWriter::new(file, format, geometry).map_err(io_at(path))?;
                writers.push((path.clone(), w));
            }
        }
        Ok(Recorder { writers, error: None })
    }

    fn write(&mut self, events: &[Event]) {
        if self.error.is_some() {
            return;
        }
        for (path, w) in &mut self.writers {
            if let Err(e) = w.write_all(events) {
                self.error = Some(io_at(path)(e));
                return;
            }
        }
    }

    fn finish(self) -> Result<(), Failure> {
        if let Some(e) = self.error {
            return Err(e);
        }
        for (path, w) in self.writers {
            w.finish().map_err(io_at(&path))?;
        }
        Ok(())
    }
}

fn write_truth(args: &RecordArgs, records: &[GrainRecord]) -> Result<(), Failure> {
    if let Some(path) = &args.truth_out {
        let file = File::create(path).map_err(io_at(path))?;
        let mut w = BufWriter::new(file);
        write_ground_truth_csv(records, &mut w).and_then(|_| w.flush()).map_err(io_at(path))?;
    }
    Ok(())
}

fn closed_loop_config(scene: &SceneArgs, control: &ControlArgs, pipeline: &PipelineArgs) -> Result<ClosedLoopConfig, Failure> {
    if !(control.setpoint.is_finite() && control.setpoint > 0.0) {
        return Err(Failure::Usage(format!("setpoint must be positive, got {}", control.setpoint)));
    }
    let cfg = ClosedLoopConfig {
        scene: scene.params(seed(scene.seed)?)?,
        pipeline: pipeline.params(),
        control: control.params(),
        setpoint_per_min: control.setpoint,
        duration_s: control.duration_s,
    };
    cfg.control.validate().map_err(Failure::Usage)?;
    cfg.pipeline.validate(cfg.scene.geometry).map_err(Failure::Usage)?;
    Ok(cfg)
}

fn exit_for(report: &RunReport) -> u8 {
    if report.safety_tripped_at_s.is_some() {
        3
    } else {
        0
    }
}

fn cmd_sim(args: SimArgs) -> Result<u8, Failure> {
    let cfg = closed_loop_config(&args.scene, &args.control, &args.pipeline)?;
    let mut recorder = Recorder::open(&args.record, cfg.scene.geometry)?;
    let run = run_closed_loop(&cfg, |ev| recorder.write(ev)).map_err(|e| Failure::Usage(e.to_string()))?;
    recorder.finish()?;
    write_truth(&args.record, &run.ground_truth)?;

    run.report.write_per_second_csv(io::stdout().lock())?;
    if let Some(path) = &args.json_out {
        write_json(&run.report, path)?;
    }
    summary(&run.report);
    Ok(exit_for(&run.report))
}

fn cmd_closed_loop(args: ClosedLoopArgs) -> Result<u8, Failure> {
    let cfg = closed_loop_config(&args.scene, &args.control, &args.pipeline)?;
    let run = run_closed_loop(&cfg, |_| {}).map_err(|e| Failure::Usage(e.to_string()))?;
    run.report.write_control_csv(io::stdout().lock())?;
    if let Some(path) = &args.json_out {
        write_json(&run.report, path)?;
    }
    summary(&run.report);
    Ok(exit_for(&run.report))
}

fn cmd_gen(args: GenArgs) -> Result<u8, Failure> {
    let scene = args.scene.params(seed(args.scene.seed)?)?;
    let on_fraction = match (args.on_fraction, args.rate) {
        (Some(f), _) => f,
        (None, Some(r)) if r >= 0.0 => scene.on_fraction_for_rate(r),
        (None, r) => return Err(Failure::Usage(format!("rate must be >= 0, got {r:?}"))),
    };
    if !(0.0..=1.0).contains(&on_fraction) {
        return Err(Failure::Usage(format!("on-fraction {on_fraction} outside [0, 1]")));
    }
    if args.record.events_csv.is_none() && args.record.events_bin.is_none() {
        return Err(Failure::Usage("gen needs --events-csv and/or --events-bin".into()));
    }
    let cfg = RecordingConfig { scene, on_fraction, duration_s: args.duration_s };
    let mut recorder = Recorder::open(&args.record, cfg.scene.geometry)?;
    let rec = record(&cfg, |ev| recorder.write(ev)).map_err(|e| Failure::Usage(e.to_string()))?;
    recorder.finish()?;
    write_truth(&args.record, &rec.ground_truth)?;
    eprintln!("ground truth {} ({} events, {} s)", rec.truth_count, rec.events, rec.duration_s);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Count(a) => cmd_count(a),
        Command::Sim(a) => cmd_sim(a),
        Command::ClosedLoop(a) => cmd_closed_loop(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
