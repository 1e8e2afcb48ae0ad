//! Command-line front end for ergoswarm scenarios.

pub mod serve;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use ergoswarm::harness::{write_outputs, FrameView, RunObserver, RunSummary, Scenario, Simulation, SnapshotFrame};
use ergoswarm::taskspec::Point2;
use ergoswarm::uibridge;
use ergoswarm::Error;

#[derive(Debug, Parser)]
#[command(name = "ergoswarm", version, about = "Decentralized ergodic swarm coverage simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write frames.jsonl, metric.csv, messages.jsonl and summary.json.
    Run(RunArgs),
    /// Parse and validate a scenario file without running it.
    Validate {
        scenario: PathBuf,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<scenario name>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Serve live frames on ws://0.0.0.0:PORT/ws while running.
    #[arg(long, value_name = "PORT")]
    pub serve: Option<u16>,
    /// Simulated seconds per wall-clock second when serving.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub speed: f64,
    /// When serving, hold tick 0 until this many consoles are connected.
    #[arg(long, default_value_t = 0)]
    pub wait_for: usize,
    /// When serving, keep the server up after the run until interrupted.
    #[arg(long)]
    pub hold: bool,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Scenario(Error),
    #[error("{0}")]
    Planner(Error),
    #[error("simulation failed: {0}")]
    Sim(Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(_) => 2,
            CliError::Planner(_) => 3,
            CliError::Sim(_) | CliError::Io(_) => 1,
        }
    }
}

fn sim_error(e: Error) -> CliError {
    match e {
        Error::PlannerDiverged { .. } => CliError::Planner(e),
        e => CliError::Sim(e),
    }
}

pub fn load(path: &std::path::Path, seed: Option<u64>) -> Result<Scenario, CliError> {
    Scenario::from_path(path, seed).map_err(CliError::Scenario)
}

/// Sleeps so frame `tick` is not emitted before `(tick+1)·dt / speed` of wall time.
struct Paced<'a, O> {
    inner: &'a mut O,
    start: Instant,
    tick_wall: Duration,
}

impl<O: RunObserver> RunObserver for Paced<'_, O> {
    fn poll_commands(&mut self, tick: u64) -> Vec<Vec<Point2>> {
        self.inner.poll_commands(tick)
    }

    fn on_frame(&mut self, frame: &SnapshotFrame, view: &FrameView<'_>) {
        let due = self.start + self.tick_wall.mul_f64((frame.tick + 1) as f64);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        self.inner.on_frame(frame, view);
    }
}

pub fn run(args: &RunArgs) -> Result<RunSummary, CliError> {
    let scenario = load(&args.scenario, args.seed)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&scenario.name));
    let sim = Simulation::new(scenario).map_err(CliError::Scenario)?;
    let (log, network) = match args.serve {
        None => sim.run_to_end(&mut ergoswarm::harness::NoObserver).map_err(sim_error)?,
        Some(port) => {
            let rt = tokio::runtime::Runtime::new()?;
            let hello = uibridge::hello(sim.scenario());
            let (bridge, mut observer) = rt.block_on(serve::start(("0.0.0.0", port), &hello))?;
            log::info!("serving on ws://{}/ws", bridge.addr());
            if args.wait_for > 0 {
                log::info!("waiting for {} console(s)", args.wait_for);
                rt.block_on(bridge.wait_for_clients(args.wait_for));
            }
            let tick_wall = Duration::from_secs_f64(sim.scenario().dt / args.speed);
            let result = sim.run_to_end(&mut Paced {
                inner: &mut observer,
                start: Instant::now(),
                tick_wall,
            });
            if args.hold && result.is_ok() {
                log::info!("run finished; serving the last frame until interrupted");
                let _ = rt.block_on(tokio::signal::ctrl_c());
            }
            drop(observer);
            rt.block_on(bridge.shutdown())?;
            result.map_err(sim_error)?
        }
    };
    Ok(write_outputs(&out, &log, &network)?)
}

fn print_summary(s: &RunSummary) {
    println!(
        "{}: {} ticks ({:.1} s), seed {}",
        s.name, s.ticks, s.duration, s.seed
    );
    println!(
        "metric: initial {:.4e}, final {:.4e}, min {:.4e}",
        s.initial_metric, s.final_metric, s.min_metric
    );
    println!(
        "disablements: {}; messages attempted {}, delivered {}, dropped {}",
        s.disablement_count, s.net.attempted, s.net.delivered, s.net.dropped
    );
}

pub fn main_with(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Run(args) => run(args).map(|s| print_summary(&s)),
        Command::Validate { scenario } => load(scenario, None).map(|s| {
            println!(
                "{}: {} agents, {} objects, {} events, {} ticks",
                s.name,
                s.agents.len(),
                s.objects.len(),
                s.events.len(),
                s.ticks
            );
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
