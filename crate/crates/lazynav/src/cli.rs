//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lazynav_core::geodesy::ZoneLock;
use lazynav_core::metrics::RepeatLog;
use lazynav_core::repeat::LocalizerConfig;
use rayon::prelude::*;

use crate::replay::{self, Phase};
use crate::scenario::Scenario;
use crate::sim::{self, RepeatRun};
use crate::{graph_io, report, Error};

#[derive(Debug, Parser)]
#[command(name = "lazynav", version, about = "Lazy GNSS/vision fusion for teach-and-repeat")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a teach run and write the map graph.
    Teach(TeachArgs),
    /// Simulate repeat runs against a graph and write logs and reports.
    Repeat(RepeatArgs),
    /// Re-estimate path-tracking errors from recorded keyframe CSVs.
    Replay(ReplayArgs),
    /// Build reports from existing repeat logs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    /// `key.path=value` edit applied to the scenario JSON before validation.
    #[arg(long = "config-override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, Error> {
        Scenario::load(&self.scenario, &self.overrides)
    }
}

#[derive(Debug, Args)]
pub struct TeachArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Teach noise seed. Defaults to the scenario's.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write the teach keyframes as a replay CSV.
    #[arg(long)]
    pub export_replay: bool,
}

#[derive(Debug, Args)]
pub struct RepeatArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Graph JSON written by `teach`.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Base seed; run `i` uses `seed + i`. Defaults to the scenario's.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Runs are sequential unless this is above 1.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// CDF threshold step, m.
    #[arg(long, default_value_t = 0.5)]
    pub resolution: f64,
    /// Also write `teach_replay.csv` and one `repeat_replay_NNN.csv` per run.
    #[arg(long)]
    pub export_replay: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Teach-phase keyframe CSV.
    #[arg(long)]
    pub teach: PathBuf,
    /// Repeat-phase keyframe CSV.
    #[arg(long)]
    pub repeat: PathBuf,
    /// Scenario whose `localizer` and `uncertainty_stop_threshold` settings
    /// apply. Built-in defaults otherwise.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long = "config-override", value_name = "KEY=VALUE", requires = "scenario")]
    pub overrides: Vec<String>,
    /// Output CSV.
    #[arg(long, default_value = "estimates.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Repeat log CSVs.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    /// Checkpoint arc lengths, m.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<f64>,
    /// Take checkpoints from this scenario when `--checkpoints` is absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub resolution: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Teach(a) => cmd_teach(&a, out),
        Command::Repeat(a) => cmd_repeat(&a, out),
        Command::Replay(a) => cmd_replay(&a, out),
        Command::Report(a) => cmd_report(&a, out),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<(), csv::Error>,
) -> Result<(), Error> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).map_err(|e| Error::io(path, e.into()))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments) -> Result<(), Error> {
    writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn positive(field: &str, v: f64) -> Result<(), Error> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation { field: field.into(), reason: format!("must be finite and > 0, got {v}") })
    }
}

pub fn cmd_teach(a: &TeachArgs, out: &mut dyn Write) -> Result<(), Error> {
    let mut sc = a.scenario.load()?;
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let graph = sim::run_teach(&sc)?;
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join("graph.json");
    graph_io::write(&path, &graph, &sc.teach_hash())?;
    if a.export_replay {
        let trace = sim::teach_trace(&graph);
        write_file(&a.out_dir.join("teach_replay.csv"), |w| replay::write_records(w, &trace))?;
    }
    let covered = graph.keyframes().iter().filter(|k| !k.gnss.is_empty()).count();
    say(out, format_args!("vertices: {}", graph.len()))?;
    say(out, format_args!("gnss coverage: {:.4}", covered as f64 / graph.len() as f64))?;
    say(out, format_args!("graph: {}", path.display()))
}

/// Runs `runs` repeats with seeds `base + i`, in order.
pub fn repeat_batch(
    sc: &Scenario,
    graph: &lazynav_core::mapgraph::TeachGraph,
    base: u64,
    runs: usize,
    jobs: usize,
) -> Vec<RepeatRun> {
    let one = |i: usize| sim::run_repeat_seeded(sc, graph, base.wrapping_add(i as u64));
    if jobs <= 1 {
        return (0..runs).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| (0..runs).into_par_iter().map(one).collect())
}

pub fn cmd_repeat(a: &RepeatArgs, out: &mut dyn Write) -> Result<(), Error> {
    let sc = a.scenario.load()?;
    if a.runs == 0 {
        return Err(Error::Validation { field: "--runs".into(), reason: "must be at least 1".into() });
    }
    positive("--resolution", a.resolution)?;
    let (graph, hash) = graph_io::read(&a.graph)?;
    let expected = sc.teach_hash();
    if hash != expected {
        return Err(Error::HashMismatch { graph: hash, scenario: expected });
    }
    if graph.len() != sim::teach_poses(&sc).len() {
        return Err(Error::Validation {
            field: "graph".into(),
            reason: "vertex count does not match the scenario".into(),
        });
    }
    create_dir(&a.out_dir)?;
    let runs = repeat_batch(&sc, &graph, a.seed.unwrap_or(sc.seed), a.runs, a.jobs);
    for (i, r) in runs.iter().enumerate() {
        write_file(&a.out_dir.join(format!("run_{i:03}.csv")), |w| report::write_log(w, &r.log))?;
        if a.export_replay {
            write_file(&a.out_dir.join(format!("repeat_replay_{i:03}.csv")), |w| replay::write_records(w, &r.trace))?;
        }
        let status = if r.log.stopped() {
            "safety stop"
        } else if r.completed {
            "completed"
        } else {
            "step limit"
        };
        say(
            out,
            format_args!("run {i}: {status} at s = {:.2} m, {} keyframes", r.log.final_progress(), r.log.rows.len()),
        )?;
    }
    if a.export_replay {
        let trace = sim::teach_trace(&graph);
        write_file(&a.out_dir.join("teach_replay.csv"), |w| replay::write_records(w, &trace))?;
    }
    let logs: Vec<RepeatLog> = runs.into_iter().map(|r| r.log).collect();
    report::write_reports(&a.out_dir, &logs, &sc.checkpoints, a.resolution)
}

pub fn cmd_replay(a: &ReplayArgs, out: &mut dyn Write) -> Result<(), Error> {
    let cfg: LocalizerConfig = match &a.scenario {
        Some(p) => Scenario::load(p, &a.overrides)?.localizer_config(),
        None => LocalizerConfig::default(),
    };
    let mut teach = replay::read_file(&a.teach)?;
    let mut repeat = replay::read_file(&a.repeat)?;
    for (path, recs, want) in [(&a.teach, &teach, Phase::Teach), (&a.repeat, &repeat, Phase::Repeat)] {
        if let Some(i) = recs.iter().position(|r| r.phase != want) {
            return Err(Error::Replay { line: i as u64 + 2, reason: format!("{}: unexpected phase", path.display()) });
        }
    }
    let mut lock = ZoneLock::default();
    let with_path = |p: &Path, e: Error| match e {
        Error::Replay { line, reason } => Error::Replay { line, reason: format!("{}: {reason}", p.display()) },
        other => other,
    };
    replay::project_fixes(&mut teach, &mut lock).map_err(|e| with_path(&a.teach, e))?;
    replay::project_fixes(&mut repeat, &mut lock).map_err(|e| with_path(&a.repeat, e))?;
    let graph = replay::graph_from_records(&teach, &cfg).map_err(|e| with_path(&a.teach, e))?;
    let rows: Vec<_> =
        replay::replay(&graph, &repeat, &cfg, sim::initial_covariance()).into_iter().map(|(r, _)| r).collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(&a.out, |w| replay::write_rows(w, &rows))?;
    let gnss = rows.iter().filter(|r| r.gnss).count();
    say(
        out,
        format_args!(
            "keyframes: {}, gnss used: {gnss}, stopped: {}",
            rows.len(),
            rows.last().is_some_and(|r| r.stopped)
        ),
    )
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), Error> {
    positive("--resolution", a.resolution)?;
    let checkpoints = if !a.checkpoints.is_empty() {
        a.checkpoints.clone()
    } else if let Some(p) = &a.scenario {
        Scenario::load(p, &[])?.checkpoints
    } else {
        Vec::new()
    };
    if checkpoints.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation { field: "--checkpoints".into(), reason: "must be sorted".into() });
    }
    let logs = a.logs.iter().map(|p| report::read_log_file(p)).collect::<Result<Vec<_>, _>>()?;
    create_dir(&a.out_dir)?;
    report::write_reports(&a.out_dir, &logs, &checkpoints, a.resolution)?;
    say(out, format_args!("reports for {} logs in {}", logs.len(), a.out_dir.display()))
}
