//! Scenario loading, the deterministic tick loop, and run outputs.

mod scenario;
mod sim;
mod summary;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub use scenario::{
    AgentEntry, AgentSpec, EventEntry, HiddenObject, NetworkSection, ObjectEntry, PlannerSection, Scenario,
    ScenarioEvent, ScenarioFile, SensingSection, SpectralSection, TaskSection, TimedEvent, WorldSection,
    SCHEMA_VERSION,
};
pub use sim::{
    grid_digest, run, run_with, AgentFrame, DisableCause, Disablement, DiscoveryRecord, FrameView, NoObserver,
    RunLog, RunObserver, Simulation, SnapshotFrame, WorldObject,
};
pub use summary::{summarize, write_frames_jsonl, write_metric_csv, AgentProximity, ObjectProximity, RunSummary};

use crate::swarmnet::Network;

/// Writes `frames.jsonl`, `summary.json`, `metric.csv` and `messages.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, log: &RunLog, network: &Network) -> std::io::Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    write_frames_jsonl(&log.frames, BufWriter::new(File::create(dir.join("frames.jsonl"))?))?;
    write_metric_csv(&log.frames, BufWriter::new(File::create(dir.join("metric.csv"))?))?;
    network.write_log_jsonl(BufWriter::new(File::create(dir.join("messages.jsonl"))?))?;
    let summary = summarize(log).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let file = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(file, &summary)?;
    Ok(summary)
}
