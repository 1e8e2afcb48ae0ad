use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::AgentId;
use crate::error::{Error, Result};
use crate::swarmnet::NetStats;
use crate::taskspec::{ObjectKind, Point2};

use super::sim::{Disablement, RunLog, SnapshotFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProximity {
    pub agent: AgentId,
    /// Seconds spent within `radius` of the object.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectProximity {
    pub kind: ObjectKind,
    pub location: Point2,
    pub radius: f64,
    pub agents: Vec<AgentProximity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub ticks: u64,
    pub duration: f64,
    pub initial_metric: f64,
    pub final_metric: f64,
    pub min_metric: f64,
    pub proximity: Vec<ObjectProximity>,
    pub disablement_count: usize,
    pub disablements: Vec<Disablement>,
    pub net: NetStats,
}

fn distance(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Condenses a run log. Proximity counts live agents only, one `dt` per frame.
pub fn summarize(log: &RunLog) -> Result<RunSummary> {
    let (first, last) = match (log.frames.first(), log.frames.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyTrajectory),
    };
    let min_metric = log
        .frames
        .iter()
        .map(|f| f.swarm_metric)
        .fold(f64::INFINITY, f64::min);
    let proximity = log
        .objects
        .iter()
        .map(|o| {
            let radius = match o.kind {
                ObjectKind::Dd => log.dd_radius,
                ObjectKind::Ee => log.sensing_radius,
            };
            let agents = first
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| AgentProximity {
                    agent: a.id,
                    time: time_within(&log.frames, i, o.location, radius, log.dt),
                })
                .collect();
            ObjectProximity {
                kind: o.kind,
                location: o.location,
                radius,
                agents,
            }
        })
        .collect();
    Ok(RunSummary {
        name: log.name.clone(),
        seed: log.seed,
        ticks: log.frames.len() as u64,
        duration: last.time,
        initial_metric: first.swarm_metric,
        final_metric: last.swarm_metric,
        min_metric,
        proximity,
        disablement_count: log.disablements.len(),
        disablements: log.disablements.clone(),
        net: log.net.clone(),
    })
}

fn time_within(frames: &[SnapshotFrame], agent: usize, at: Point2, radius: f64, dt: f64) -> f64 {
    frames
        .iter()
        .filter(|f| {
            let a = &f.agents[agent];
            a.alive && distance(a.position(), at) <= radius
        })
        .count() as f64
        * dt
}

pub fn write_frames_jsonl<W: Write>(frames: &[SnapshotFrame], mut w: W) -> std::io::Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// `tick,time,agent_<id>...,swarm` with per-agent fused metrics.
pub fn write_metric_csv<W: Write>(frames: &[SnapshotFrame], mut w: W) -> std::io::Result<()> {
    let Some(first) = frames.first() else {
        return Ok(());
    };
    write!(w, "tick,time")?;
    for a in &first.agents {
        write!(w, ",agent_{}", a.id)?;
    }
    writeln!(w, ",swarm")?;
    for f in frames {
        write!(w, "{},{}", f.tick, f.time)?;
        for a in &f.agents {
            write!(w, ",{}", a.metric)?;
        }
        writeln!(w, ",{}", f.swarm_metric)?;
    }
    Ok(())
}
