//! Wire protocol and tick-loop adapter for live operator consoles.
//!
//! Transport is left to the caller: [`BridgeObserver`] plugs into the
//! simulation as a [`RunObserver`], hands each serialized frame to a publish
//! callback, and drains validated commands from a channel at tick start.

use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::controller::AgentId;
use crate::dynamics::ModelKind;
use crate::error::Result;
use crate::harness::{FrameView, RunObserver, Scenario, SnapshotFrame};
use crate::spectral::{reconstruct_display, DensityGrid, Spectrum};
use crate::taskspec::{AgentRole, Point2};

pub const PROTOCOL_VERSION: u32 = 1;

/// Cells per axis in streamed grids.
pub const MAX_FRAME_CELLS: usize = 50;

/// Coordinates this far outside the unit square are clamped; beyond it they are rejected.
pub const COMMAND_TOLERANCE: f64 = 1e-6;

/// Grid values with the first axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPayload {
    pub resolution: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<&DensityGrid> for GridPayload {
    fn from(g: &DensityGrid) -> Self {
        GridPayload {
            resolution: g.resolution().to_vec(),
            values: g.values().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Phi,
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub id: AgentId,
    pub model: ModelKind,
    pub role: AgentRole,
}

/// Messages sent to consoles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        scenario: String,
        seed: u64,
        dt: f64,
        ticks: u64,
        agents: Vec<RosterEntry>,
    },
    Frame {
        frame: SnapshotFrame,
        phi: GridPayload,
        reconstruction: GridPayload,
    },
    /// `tick` is the first frame that reflects the command.
    Ack { nonce: String, tick: u64 },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nonce: Option<String>,
        reason: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        offenders: Vec<usize>,
    },
    Grid { kind: GridKind, grid: GridPayload },
}

impl ServerMessage {
    pub fn error(nonce: Option<String>, reason: impl Into<String>) -> Self {
        ServerMessage::Error {
            nonce,
            reason: reason.into(),
            offenders: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// Messages accepted from consoles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Command { points: Vec<Point2>, nonce: String },
    GridRequest { kind: GridKind },
}

/// Parses a console message, or builds the error reply for it.
pub fn parse_client(text: &str) -> std::result::Result<ClientMessage, ServerMessage> {
    serde_json::from_str(text).map_err(|e| {
        let nonce = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("nonce").and_then(|n| n.as_str()).map(str::to_owned));
        ServerMessage::error(nonce, format!("malformed message: {e}"))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub reason: String,
    pub offenders: Vec<usize>,
}

impl Rejection {
    pub fn into_message(self, nonce: Option<String>) -> ServerMessage {
        ServerMessage::Error {
            nonce,
            reason: self.reason,
            offenders: self.offenders,
        }
    }
}

/// Clamps near-boundary points into the unit square and rejects the rest.
pub fn validate_points(points: &[Point2]) -> std::result::Result<Vec<Point2>, Rejection> {
    if points.is_empty() {
        return Err(Rejection {
            reason: "empty command".into(),
            offenders: Vec::new(),
        });
    }
    let ok = |v: f64| v.is_finite() && (-COMMAND_TOLERANCE..=1.0 + COMMAND_TOLERANCE).contains(&v);
    let offenders: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !(ok(p[0]) && ok(p[1])))
        .map(|(i, _)| i)
        .collect();
    if !offenders.is_empty() {
        return Err(Rejection {
            reason: format!("{} point(s) outside the unit square", offenders.len()),
            offenders,
        });
    }
    Ok(points
        .iter()
        .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)])
        .collect())
}

pub fn hello(scenario: &Scenario) -> ServerMessage {
    ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        dt: scenario.dt,
        ticks: scenario.ticks,
        agents: scenario
            .agents
            .iter()
            .map(|a| RosterEntry {
                id: a.id,
                model: a.model.kind(),
                role: a.role,
            })
            .collect(),
    }
}

/// Full-resolution grids from the most recent frame.
#[derive(Debug, Clone)]
pub struct GridSnapshot {
    pub phi: DensityGrid,
    pub swarm: Spectrum,
}

impl GridSnapshot {
    pub fn grid(&self, kind: GridKind) -> Result<DensityGrid> {
        match kind {
            GridKind::Phi => Ok(self.phi.clone()),
            GridKind::Reconstruction => reconstruct_display(&self.swarm, self.phi.resolution()),
        }
    }
}

pub type LatestGrids = Arc<Mutex<Option<GridSnapshot>>>;

/// Answers a `grid_request` from the latest snapshot.
pub fn grid_reply(latest: &LatestGrids, kind: GridKind) -> ServerMessage {
    let snap = latest.lock().unwrap_or_else(|e| e.into_inner()).clone();
    match snap.map(|s| s.grid(kind)) {
        Some(Ok(g)) => ServerMessage::Grid {
            kind,
            grid: GridPayload::from(&g),
        },
        Some(Err(e)) => ServerMessage::error(None, e.to_string()),
        None => ServerMessage::error(None, "no frame yet"),
    }
}

pub fn frame_message(frame: &SnapshotFrame, view: &FrameView<'_>) -> Result<ServerMessage> {
    let recon = reconstruct_display(view.swarm, view.phi.resolution())?;
    Ok(ServerMessage::Frame {
        frame: frame.clone(),
        phi: GridPayload::from(&view.phi.downsample(MAX_FRAME_CELLS)),
        reconstruction: GridPayload::from(&recon.downsample(MAX_FRAME_CELLS)),
    })
}

/// A validated command waiting for the tick loop.
pub struct CommandRequest {
    pub nonce: String,
    pub points: Vec<Point2>,
    pub reply: Box<dyn FnOnce(ServerMessage) + Send>,
}

/// Observer that streams frames out and feeds commands in.
pub struct BridgeObserver<F> {
    commands: Receiver<CommandRequest>,
    publish: F,
    latest: LatestGrids,
}

impl<F: FnMut(u64, Arc<str>)> BridgeObserver<F> {
    /// `publish` receives each frame's tick and its JSON text.
    pub fn new(commands: Receiver<CommandRequest>, latest: LatestGrids, publish: F) -> Self {
        BridgeObserver {
            commands,
            publish,
            latest,
        }
    }
}

impl<F: FnMut(u64, Arc<str>)> RunObserver for BridgeObserver<F> {
    /// Acks every drained command; the simulation keeps the last one.
    fn poll_commands(&mut self, tick: u64) -> Vec<Vec<Point2>> {
        let mut out = Vec::new();
        loop {
            match self.commands.try_recv() {
                Ok(req) => {
                    (req.reply)(ServerMessage::Ack { nonce: req.nonce, tick });
                    out.push(req.points);
                }
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
        out
    }

    fn on_frame(&mut self, frame: &SnapshotFrame, view: &FrameView<'_>) {
        *self.latest.lock().unwrap_or_else(|e| e.into_inner()) = Some(GridSnapshot {
            phi: view.phi.clone(),
            swarm: view.swarm.clone(),
        });
        match frame_message(frame, view) {
            Ok(msg) => (self.publish)(frame.tick, Arc::from(msg.to_json())),
            Err(e) => log::warn!("skipping frame {}: {e}", frame.tick),
        }
    }
}

impl<F> Drop for BridgeObserver<F> {
    fn drop(&mut self) {
        while let Ok(req) = self.commands.try_recv() {
            (req.reply)(ServerMessage::error(Some(req.nonce), "simulation finished"));
        }
    }
}
