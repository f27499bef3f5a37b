//! `marker-rally`: track generation, training, evaluation and trace export.
//!
//! Exit codes: 0 on success, 2 for usage or validation errors, 3 for data or
//! file errors.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use marker_rally::checkpoint::{latest_checkpoint, load_policy, load_train_state, save_checkpoint};
use marker_rally::harness::{
    combine_reports, eval_csv, eval_oval, eval_segments, run_episode, train, Algo, CenterlineFollower, EpisodeLog,
    EvalOptions, EvalReport, HarnessError, Policy, TrainConfig, TrainObserver, TrainState, REWARD_LOG_HEADER,
};
use marker_rally::sim::EnvConfig;
use marker_rally::track::{generate_oval, generate_track, Direction, NoiseConfig, SegmentSpec, Track, TrackError};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "marker-rally", version, about = "Marker-track racing: generate, train, evaluate, trace")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "MARKER_RALLY_OUT")]
    out: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for evaluation episodes.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a track and write it as JSON.
    GenTrack(GenTrackArgs),
    /// Train a DQN or TD3 agent on random two-segment tracks.
    Train(TrainArgs),
    /// Run the segment or oval evaluation suite.
    Eval(EvalArgs),
    /// Record one deterministic episode as JSON lines.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
struct GenTrackArgs {
    /// Comma-separated turn angles in degrees, e.g. `90,-45`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "oval")]
    segments: Option<String>,
    /// Generate the oval benchmark track instead.
    #[arg(long)]
    oval: bool,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
    /// Enable marker placement noise.
    #[arg(long)]
    noise: bool,
    /// Output file (default: `<out>/track.json`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algo>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Train on noisy tracks.
    #[arg(long)]
    noise: bool,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Suite {
    Segments,
    Oval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OvalDirection {
    Cw,
    Acw,
    Both,
}

#[derive(Args, Debug)]
struct PolicyArgs {
    /// Checkpoint directory, its manifest.json, or a single network file.
    checkpoint: Option<PathBuf>,
    /// Use the scripted centre-line follower instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    scripted: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long, value_enum)]
    direction: Option<OvalDirection>,
    /// Evaluate on noisy tracks.
    #[arg(long)]
    noise: bool,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    policy: PolicyArgs,
    /// Track JSON produced by `gen-track`.
    #[arg(long)]
    track: PathBuf,
    /// Start offset in track units; positive is to the right.
    #[arg(long, allow_hyphen_values = true)]
    start_offset: Option<f64>,
    /// Output file (default: `<out>/trace.jsonl`).
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse()
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: TrackError| e.to_string())
}

/// Usage or validation failure (exit code 2).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<TrackError>() {
            return match e {
                TrackError::InvalidTurnAngle(_) | TrackError::EmptySpecs => 2,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return match e {
                HarnessError::Config(_) | HarnessError::Agent(_) | HarnessError::Sim(_) => 2,
                HarnessError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 3,
            };
        }
    }
    3
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenTrackConfig {
    segments: Vec<SegmentSpec>,
    oval: bool,
    direction: Option<Direction>,
    noise: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    suite: Suite,
    direction: OvalDirection,
    noise: bool,
    env: EnvConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            suite: Suite::Segments,
            direction: OvalDirection::Both,
            noise: false,
            env: EnvConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TraceConfig {
    start_offset: f64,
    env: EnvConfig,
}

/// Everything a command can be configured with. `train.seed` is always
/// replaced by the top-level seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: u64,
    out: PathBuf,
    workers: usize,
    gen_track: GenTrackConfig,
    train: TrainConfig,
    eval: EvalConfig,
    trace: TraceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            workers: 1,
            gen_track: GenTrackConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            trace: TraceConfig::default(),
        }
    }
}

impl RunConfig {
    fn load(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &cli.out {
            cfg.out = out.clone();
        }
        if let Some(workers) = cli.workers {
            cfg.workers = workers;
        }
        if cfg.workers == 0 {
            return Err(usage("--workers must be at least 1"));
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }
}

/// Resolved settings for one command, written beside its outputs.
#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    out: &'a Path,
    workers: usize,
    #[serde(flatten)]
    settings: T,
}

fn write_resolved<T: Serialize>(cfg: &RunConfig, command: &str, settings: T) -> Result<()> {
    let resolved = Resolved {
        command,
        seed: cfg.seed,
        out: &cfg.out,
        workers: cfg.workers,
        settings,
    };
    write_output(&cfg.out.join("config_resolved.json"), &(serde_json::to_string_pretty(&resolved)? + "\n"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_gen_track(mut cfg: RunConfig, args: GenTrackArgs) -> Result<()> {
    if let Some(list) = &args.segments {
        cfg.gen_track.segments = list
            .split(',')
            .map(str::parse::<SegmentSpec>)
            .collect::<Result<_, _>>()?;
        cfg.gen_track.oval = false;
    }
    cfg.gen_track.oval |= args.oval;
    cfg.gen_track.noise |= args.noise;
    if args.direction.is_some() {
        cfg.gen_track.direction = args.direction;
    }
    let g = &cfg.gen_track;
    let noise = NoiseConfig::with_enabled(g.noise);
    let track = if g.oval {
        generate_oval(noise, cfg.seed, g.direction.unwrap_or(Direction::Anticlockwise))?
    } else {
        if g.segments.is_empty() {
            return Err(usage("pass --segments or --oval"));
        }
        if g.direction.is_some() {
            return Err(usage("--direction only applies to --oval"));
        }
        generate_track(&g.segments, noise, cfg.seed)?
    };
    let path = args.output.unwrap_or_else(|| cfg.out.join("track.json"));
    write_output(&path, &(track.to_json()? + "\n"))?;
    write_resolved(&cfg, "gen-track", serde_json::json!({ "gen_track": cfg.gen_track, "output": path }))?;
    println!(
        "wrote {}: total_length {:.6} units, {} markers + finish",
        path.display(),
        track.total_length,
        track.markers.len()
    );
    Ok(())
}

struct CliTrainer<'a> {
    cfg: &'a TrainConfig,
    checkpoints: PathBuf,
    log: fs::File,
}

impl TrainObserver for CliTrainer<'_> {
    fn on_episode(&mut self, log: &EpisodeLog) -> Result<(), HarnessError> {
        writeln!(self.log, "{}", log.csv_row())
            .and_then(|_| self.log.flush())
            .map_err(|source| HarnessError::Io {
                path: "reward_log.csv".into(),
                source,
            })?;
        if log.episode % 100 == 0 {
            eprintln!(
                "episode {}: reward {:.2}, steps {}, {}",
                log.episode, log.total_reward, log.steps, log.termination
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<(), HarnessError> {
        let path = save_checkpoint(&self.checkpoints, self.cfg, state)?;
        eprintln!("checkpoint {}", path.display());
        Ok(())
    }
}

/// Keeps reward-log rows up to `episode`, dropping anything logged after the checkpoint.
fn truncate_log(path: &Path, episode: u64) -> Result<String> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut out = String::from(REWARD_LOG_HEADER);
    out.push('\n');
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let row = EpisodeLog::parse_csv_row(line)?;
        if row.episode <= episode {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn cmd_train(mut cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(algo) = args.algo {
        t.algo = algo;
    }
    if let Some(n) = args.episodes {
        t.episodes = n;
    }
    if let Some(n) = args.max_steps {
        t.max_steps = n;
    }
    if let Some(n) = args.checkpoint_interval {
        t.checkpoint_interval = n;
    }
    t.noise |= args.noise;
    cfg.train.validate()?;

    let out = cfg.out.clone();
    let checkpoints = out.join("checkpoints");
    let log_path = out.join("reward_log.csv");
    let existing = latest_checkpoint(&checkpoints)?;
    let has_run = log_path.exists() || existing.is_some();
    if has_run && !args.resume {
        return Err(usage(format!(
            "{} already holds a training run; pass --resume to continue it or choose another --out",
            out.display()
        )));
    }
    ensure_dir(&out)?;
    write_resolved(
        &cfg,
        "train",
        serde_json::json!({ "train": cfg.train, "train_config_digest": cfg.train.digest() }),
    )?;

    let (state, log_text) = match existing.filter(|_| args.resume) {
        Some((episode, path)) => {
            let state = load_train_state(&path, &cfg.train)?;
            eprintln!("resuming from {} (episode {episode})", path.display());
            (state, truncate_log(&log_path, episode)?)
        }
        None => (TrainState::fresh(&cfg.train)?, format!("{REWARD_LOG_HEADER}\n")),
    };
    write_output(&log_path, &log_text)?;
    let log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .with_context(|| format!("cannot open {}", log_path.display()))?;
    let mut observer = CliTrainer {
        cfg: &cfg.train,
        checkpoints,
        log,
    };
    let (state, _) = train(&cfg.train, state, &mut observer)?;
    println!(
        "trained {} for {} episodes ({} steps); log at {}",
        cfg.train.algo,
        state.episode,
        state.total_steps,
        log_path.display()
    );
    Ok(())
}

fn resolve_policy(args: &PolicyArgs) -> Result<Box<dyn Policy>> {
    if args.scripted {
        return Ok(Box::new(CenterlineFollower::default()));
    }
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| usage("pass a checkpoint path or --scripted"))?;
    if !path.exists() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Box::new(load_policy(path)?))
}

fn write_report(cfg: &RunConfig, report: &EvalReport, parts: &[&EvalReport]) -> Result<()> {
    let stem = format!("eval_{}", report.suite);
    write_output(&cfg.out.join(format!("{stem}.csv")), &eval_csv(&report.episodes))?;
    let summary = if parts.is_empty() {
        serde_json::to_value(report)?
    } else {
        serde_json::json!({
            "combined": report,
            "directions": parts,
        })
    };
    write_output(
        &cfg.out.join(format!("{stem}_summary.json")),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    let s = &report.summary;
    print!(
        "{}: {} episodes, finish {:.2}%, avg distance {:.2}%",
        report.suite, s.episodes, s.finish_pct, s.avg_distance_pct
    );
    if let Some(b) = report.start_breakdown {
        print!(" (L/C/R finishes {}/{}/{})", b.left, b.centre, b.right);
    }
    println!();
    Ok(())
}

fn cmd_eval(mut cfg: RunConfig, args: EvalArgs) -> Result<()> {
    if let Some(suite) = args.suite {
        cfg.eval.suite = suite;
    }
    if let Some(direction) = args.direction {
        cfg.eval.direction = direction;
    }
    cfg.eval.noise |= args.noise;
    if cfg.eval.suite == Suite::Segments && args.direction.is_some() {
        return Err(usage("--direction only applies to --suite oval"));
    }
    cfg.eval.env.validate().map_err(|e| usage(e.to_string()))?;
    let policy = resolve_policy(&args.policy)?;
    ensure_dir(&cfg.out)?;
    write_resolved(
        &cfg,
        "eval",
        serde_json::json!({
            "eval": cfg.eval,
            "policy": policy.name(),
            "checkpoint": args.policy.checkpoint,
        }),
    )?;
    let opts = EvalOptions {
        env: cfg.eval.env,
        noise: cfg.eval.noise,
        seed: cfg.seed,
        workers: cfg.workers,
    };
    match cfg.eval.suite {
        Suite::Segments => write_report(&cfg, &eval_segments(policy.as_ref(), &opts)?, &[]),
        Suite::Oval => match cfg.eval.direction {
            OvalDirection::Cw => write_report(&cfg, &eval_oval(policy.as_ref(), Direction::Clockwise, &opts)?, &[]),
            OvalDirection::Acw => {
                write_report(&cfg, &eval_oval(policy.as_ref(), Direction::Anticlockwise, &opts)?, &[])
            }
            OvalDirection::Both => {
                let cw = eval_oval(policy.as_ref(), Direction::Clockwise, &opts)?;
                let acw = eval_oval(policy.as_ref(), Direction::Anticlockwise, &opts)?;
                let combined = combine_reports("oval", &[&cw, &acw])?;
                write_report(&cfg, &combined, &[&cw, &acw])
            }
        },
    }
}

fn cmd_trace(mut cfg: RunConfig, args: TraceArgs) -> Result<()> {
    if let Some(offset) = args.start_offset {
        cfg.trace.start_offset = offset;
    }
    let policy = resolve_policy(&args.policy)?;
    let text = fs::read_to_string(&args.track).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => usage(format!("track {} does not exist", args.track.display())),
        _ => anyhow!("cannot read track {}: {e}", args.track.display()),
    })?;
    let track = Track::from_json(&text).with_context(|| format!("track {}", args.track.display()))?;
    let mut steps = Vec::new();
    let outcome = run_episode(
        cfg.trace.env,
        Arc::new(track.clone()),
        cfg.trace.start_offset,
        policy.as_ref(),
        Some(&mut steps),
    )?;

    let header = serde_json::json!({
        "record": "header",
        "policy": policy.name(),
        "checkpoint": args.policy.checkpoint,
        "track": args.track,
        "track_meta": track.meta,
        "total_length": track.total_length,
        "start_offset": cfg.trace.start_offset,
        "steps": outcome.steps,
        "termination": outcome.termination,
        "max_progress": outcome.max_progress,
    });
    let mut body = serde_json::to_string(&header)? + "\n";
    for step in &steps {
        body.push_str(&serde_json::to_string(step)?);
        body.push('\n');
    }
    let path = args.output.unwrap_or_else(|| cfg.out.join("trace.jsonl"));
    write_output(&path, &body)?;
    write_resolved(
        &cfg,
        "trace",
        serde_json::json!({
            "trace": cfg.trace,
            "policy": policy.name(),
            "checkpoint": args.policy.checkpoint,
            "track": args.track,
            "output": path,
        }),
    )?;
    println!(
        "wrote {}: {} steps, {}, progress {:.4}",
        path.display(),
        outcome.steps,
        outcome.termination,
        outcome.max_progress
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli)?;
    match cli.command {
        Command::GenTrack(args) => cmd_gen_track(cfg, args),
        Command::Train(args) => cmd_train(cfg, args),
        Command::Eval(args) => cmd_eval(cfg, args),
        Command::Trace(args) => cmd_trace(cfg, args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
