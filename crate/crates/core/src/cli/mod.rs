//! Command-line front end. Every command maps its failure to a fixed exit
//! code: [`EXIT_CONFIG`], [`EXIT_RUNTIME`] or [`EXIT_SCHEMA`].

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bench::{
    bench_e2e, bench_recv, bench_send, render_table, write_raw_csv, BenchError, BenchRig, E2eOptions, LatencyReport,
    BENCH_CMD_LABEL, BENCH_STATE_LABEL, DEFAULT_WARMUP,
};
use crate::blocks::{BlockError, Executor, Node, RunReport};
use crate::config::{build_workflow, open_space, BackendChoice, BlockRegistry, BuildError, BuiltWorkflow, ConfigError, WorkflowConfig};
use crate::platform::{make_platform, register_workflow_labels, PlatformKind, PlatformOptions, PlatformSpec};
use crate::replay::{analyze, GapReport, Recorder, ReplayError, Replayer, ShiftRange, Trajectory, UnfoldOptions};
use crate::state::BackendKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;

/// Environment variable that overrides the shared-memory segment name.
pub const SHM_NAME_ENV: &str = "UNICON_SHM_NAME";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Schema(_) => EXIT_SCHEMA,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        if e.is_schema_mismatch() {
            CliError::Schema(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

fn replay_error(e: ReplayError) -> CliError {
    match e {
        ReplayError::SchemaMismatch { .. } | ReplayError::UnknownLabel(_) | ReplayError::NoCommonLabels => {
            CliError::Schema(e.to_string())
        }
        _ => CliError::Config(e.to_string()),
    }
}

fn bench_error(e: BenchError) -> CliError {
    match e {
        BenchError::Block(_) | BenchError::ProducerSilent { .. } | BenchError::OffsetUnavailable(_) => {
            CliError::Runtime(e.to_string())
        }
        _ => CliError::Config(e.to_string()),
    }
}

fn parse_backend(s: &str) -> Result<BackendChoice, String> {
    s.parse()
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

/// Flags shared by the commands that execute a workflow.
#[derive(Debug, Clone, Default, Args)]
pub struct RunOverrides {
    /// inproc, shm or socket
    #[arg(long, value_parser = parse_backend)]
    pub backend: Option<BackendChoice>,
    /// Executor rate in Hz
    #[arg(long)]
    pub rate: Option<f64>,
    /// Stop after this many ticks
    #[arg(long)]
    pub ticks: Option<u64>,
    /// Config override such as run.rate=100 or platform.kind=loopback
    #[arg(long = "set", value_parser = parse_key_value)]
    pub set: Vec<(String, String)>,
    /// Write the step trace to this file
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Shared-memory segment name; defaults to $UNICON_SHM_NAME
    #[arg(skip)]
    pub shm_name: Option<String>,
}

#[derive(Debug, Parser)]
#[command(name = "statebus", version, about = "Run, record, replay, analyze and benchmark control workflows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workflow config
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Run a workflow and record labels to a trajectory file
    Record {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated labels; all labels when omitted
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Replay a recording into a workflow
    Replay {
        recording: PathBuf,
        config: PathBuf,
        /// Replay only these labels
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Record these labels while replaying
        #[arg(long, value_delimiter = ',')]
        record_labels: Vec<String>,
        /// Output file for --record-labels
        #[arg(long)]
        record: Option<PathBuf>,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Compare two recordings
    Analyze {
        a: PathBuf,
        b: PathBuf,
        /// Largest shift J of the unfolded loss
        #[arg(long)]
        max_shift: Option<usize>,
        /// Directory for report.txt and per-element CSVs
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use squared per-frame distances
        #[arg(long)]
        squared: bool,
        /// Search shifts 0..=J only
        #[arg(long)]
        non_negative: bool,
    },
    /// Measure Recv / Send / end-to-end latency
    Bench {
        #[arg(long, value_parser = parse_backend, default_value = "inproc")]
        backend: BackendChoice,
        #[arg(long, default_value = "loopback")]
        platform: PlatformKind,
        /// Recv and Send samples
        #[arg(short, long, default_value_t = 10_000)]
        n: usize,
        /// End-to-end samples at 50 Hz
        #[arg(long, default_value_t = 250)]
        e2e_samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_config(path: &Path, o: &RunOverrides) -> Result<WorkflowConfig, CliError> {
    let mut cfg = WorkflowConfig::load(path)?;
    for (k, v) in &o.set {
        cfg.set(k, v)?;
    }
    if let Some(b) = o.backend {
        cfg.run.backend = b;
    }
    if let Some(r) = o.rate {
        cfg.set("run.rate", &r.to_string())?;
    }
    if let Some(t) = o.ticks {
        cfg.run.ticks = Some(t);
    }
    Ok(cfg)
}

fn build(path: &Path, cfg: &WorkflowConfig, o: &RunOverrides) -> Result<BuiltWorkflow, CliError> {
    let space = open_space(&cfg.run, o.shm_name.as_deref()).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(build_workflow(cfg, &BlockRegistry::with_builtins(), space, &base_dir(path))?)
}

fn execute(root: &mut Node, w: &BuiltWorkflow, cfg: &WorkflowConfig, ticks: Option<u64>, o: &RunOverrides) -> Result<RunReport, CliError> {
    let mut exec = Executor::new(cfg.run.rate_hz).checked(cfg.run.checked).trace(o.trace.is_some());
    if let Some(t) = ticks {
        exec = exec.max_ticks(t);
    }
    let report = exec.run(root, &w.space).map_err(|e| match e.error {
        BlockError::Invalid(_) | BlockError::RateInvalid(_) => CliError::Config(e.error.to_string()),
        _ => CliError::Runtime(format!("{} (after {} ticks)", e.error, e.report.ticks)),
    })?;
    if let (Some(path), Some(trace)) = (&o.trace, &report.trace) {
        std::fs::write(path, trace.to_text()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(report)
}

pub fn cmd_run(config: &Path, o: &RunOverrides) -> Result<RunReport, CliError> {
    let cfg = load_config(config, o)?;
    let mut w = build(config, &cfg, o)?;
    let mut root = std::mem::replace(&mut w.root, Node::zip(Vec::new()));
    execute(&mut root, &w, &cfg, cfg.run.ticks, o)
}

fn recorder(w: &BuiltWorkflow, labels: &[String], out: &Path) -> Result<Recorder, CliError> {
    let labels = if labels.is_empty() { w.space.labels() } else { labels.to_vec() };
    Recorder::new(&w.space, &labels, out).map_err(replay_error)
}

/// Runs the workflow with a recorder zipped after its root.
pub fn cmd_record(config: &Path, labels: &[String], out: &Path, o: &RunOverrides) -> Result<RunReport, CliError> {
    let cfg = load_config(config, o)?;
    let mut w = build(config, &cfg, o)?;
    let rec = recorder(&w, labels, out)?;
    let root = std::mem::replace(&mut w.root, Node::zip(Vec::new()));
    let mut root = Node::zip(vec![root, Node::leaf(rec)]);
    execute(&mut root, &w, &cfg, cfg.run.ticks, o)
}

/// Replays `recording` ahead of the workflow's root each tick, until the
/// recording ends or `--ticks` is reached. The config's own tick limit is
/// ignored.
pub fn cmd_replay(
    recording: &Path,
    config: &Path,
    labels: &[String],
    record: Option<(&Path, &[String])>,
    o: &RunOverrides,
) -> Result<RunReport, CliError> {
    let traj = Trajectory::load(recording).map_err(replay_error)?;
    let cfg = load_config(config, o)?;
    let mut w = build(config, &cfg, o)?;
    let only = (!labels.is_empty()).then_some(labels);
    let replayer = Replayer::from_trajectory(traj, &w.space, only).map_err(replay_error)?;
    let root = std::mem::replace(&mut w.root, Node::zip(Vec::new()));
    let mut nodes = vec![Node::leaf(replayer), root];
    if let Some((out, rec_labels)) = record {
        nodes.push(Node::leaf(recorder(&w, rec_labels, out)?));
    }
    let mut root = Node::zip(nodes);
    execute(&mut root, &w, &cfg, o.ticks, o)
}

pub fn cmd_analyze(a: &Path, b: &Path, max_shift: Option<usize>, out_dir: Option<&Path>, opts: UnfoldOptions) -> Result<GapReport, CliError> {
    let ta = Trajectory::load(a).map_err(replay_error)?;
    let tb = Trajectory::load(b).map_err(replay_error)?;
    let report = analyze(&ta, &tb, max_shift, opts).map_err(replay_error)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        report.write_files(dir).map_err(replay_error)?;
    }
    Ok(report)
}

fn backend_kind(choice: BackendChoice, shm_name: Option<&str>) -> BackendKind {
    match choice {
        BackendChoice::InProcess => BackendKind::InProcess,
        BackendChoice::SharedMemory => BackendKind::SharedMemory {
            segment_name: shm_name
                .map(String::from)
                .unwrap_or_else(|| format!("statebus-bench-{}", std::process::id())),
        },
        BackendChoice::Socket => BackendKind::Socket {
            endpoint: "127.0.0.1:0".into(),
        },
    }
}

/// Recv and Send on `backend` with a 500 Hz synthetic producer, then
/// end-to-end latency against a 3-joint `platform` at 50 Hz identity
/// control. Writes `raw.csv`, `e2e_stamps.csv` and `report.txt` to `out_dir`.
pub fn cmd_bench(
    backend: BackendChoice,
    platform: PlatformKind,
    n: usize,
    e2e_samples: usize,
    out_dir: Option<&Path>,
    shm_name: Option<&str>,
) -> Result<LatencyReport, CliError> {
    let kind = backend_kind(backend, shm_name);
    let rig = BenchRig::new(&kind).map_err(bench_error)?;
    let producer = rig.spawn_producer(500.0);
    let started = std::time::Instant::now();
    let mut samples = bench_recv(&rig.reader, BENCH_STATE_LABEL, n, DEFAULT_WARMUP).map_err(bench_error)?;
    samples.extend(bench_send(&rig.reader, BENCH_CMD_LABEL, n, DEFAULT_WARMUP).map_err(bench_error)?);
    producer.stop().map_err(|e| CliError::Runtime(e.to_string()))?;

    let spec = PlatformSpec::uniform("bench_arm", &["j0", "j1", "j2"], 20.0, 0.5, 20.0, (-3.0, 3.0));
    register_workflow_labels(&rig.writer, spec.dof()).map_err(|e| CliError::Config(e.to_string()))?;
    let p = make_platform(&PlatformOptions::new(platform), &spec, &rig.writer).map_err(|e| CliError::Config(e.to_string()))?;
    let opts = E2eOptions {
        n_samples: e2e_samples,
        ..Default::default()
    };
    let e2e = bench_e2e(&rig.writer, p, &opts).map_err(bench_error)?;
    samples.extend(e2e.samples.iter().copied());

    let mut report = LatencyReport::new(backend.as_str(), spec.state_rate_hz).with_samples(&samples);
    report.platform = Some(platform.to_string());
    report.control_rate_hz = Some(opts.control_rate_hz);
    report.inferred_offset_ns = Some(e2e.offset_ns);
    report.duration = started.elapsed();
    if let Some(dir) = out_dir {
        let io = |e: std::io::Error| CliError::Config(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        write_raw_csv(&dir.join("raw.csv"), &samples).map_err(bench_error)?;
        e2e.write_stamps_csv(&dir.join("e2e_stamps.csv")).map_err(bench_error)?;
        let text = format!("{}\n{}", report.to_text(), render_table(std::slice::from_ref(&report)));
        std::fs::write(dir.join("report.txt"), text).map_err(io)?;
    }
    Ok(report)
}

/// Parses `args`, runs the command, prints its result to stdout or the error
/// to stderr, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let shm_env = std::env::var(SHM_NAME_ENV).ok();
    let with_env = |mut o: RunOverrides| {
        o.shm_name = shm_env.clone();
        o
    };
    let result: Result<String, CliError> = match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &with_env(overrides)).map(|r| r.to_string()),
        Command::Record {
            config,
            out,
            labels,
            overrides,
        } => cmd_record(&config, &labels, &out, &with_env(overrides)).map(|r| format!("{r}\nrecorded to {}", out.display())),
        Command::Replay {
            recording,
            config,
            labels,
            record_labels,
            record,
            overrides,
        } => {
            let rec = record.as_deref().map(|p| (p, record_labels.as_slice()));
            cmd_replay(&recording, &config, &labels, rec, &with_env(overrides)).map(|r| r.to_string())
        }
        Command::Analyze {
            a,
            b,
            max_shift,
            out,
            squared,
            non_negative,
        } => {
            let opts = UnfoldOptions {
                squared,
                shifts: if non_negative { ShiftRange::NonNegative } else { ShiftRange::Signed },
            };
            cmd_analyze(&a, &b, max_shift, out.as_deref(), opts).map(|r| r.to_text())
        }
        Command::Bench {
            backend,
            platform,
            n,
            e2e_samples,
            out,
        } => cmd_bench(backend, platform, n, e2e_samples, out.as_deref(), shm_env.as_deref())
            .map(|r| format!("{}\n{}", r.to_text(), render_table(std::slice::from_ref(&r)))),
    };
    match result {
        Ok(text) => {
            let _ = writeln!(std::io::stdout().lock(), "{}", text.trim_end());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("statebus: {e}");
            e.exit_code()
        }
    }
}
