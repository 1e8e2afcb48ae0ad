use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{plan, AgentId, ErgodicMemory, Plan};
use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::spectral::{decompose_density, ergodic_metric, DensityGrid, SpectralConfig, Spectrum};
use crate::swarmnet::{
    broadcast_discovery, NetStats, Network, Outgoing, Payload, Recipient, SwarmMessage, OPERATOR,
};
use crate::taskspec::{compile_density, AgentRole, ObjectKind, Point2, TaskSpec, SAME_LOCATION_TOL};

use super::scenario::{AgentSpec, Scenario, ScenarioEvent};

/// A known or hidden object in the world, unit coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub kind: ObjectKind,
    pub location: Point2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRecord {
    pub tick: u64,
    pub agent: AgentId,
    pub kind: ObjectKind,
    pub location: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisableCause {
    Dd,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disablement {
    pub agent: AgentId,
    pub tick: u64,
    pub cause: DisableCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub id: AgentId,
    pub role: AgentRole,
    pub alive: bool,
    pub state: AgentState,
    /// Planned positions over the horizon, starting at the pre-move state.
    pub predicted_path: Vec<Point2>,
    pub phi_digest: String,
    /// Ergodic metric of the agent's fused statistics against its own target.
    pub metric: f64,
    /// Seconds spent within the DD radius of any DD, cumulative.
    pub dwell: f64,
    pub known: Vec<WorldObject>,
}

impl AgentFrame {
    pub fn position(&self) -> Point2 {
        [self.state.0[0], self.state.0[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFrame {
    pub tick: u64,
    pub time: f64,
    pub agents: Vec<AgentFrame>,
    /// Metric of all agents' pooled statistics against the swarm target.
    pub swarm_metric: f64,
    /// Same, pooled over live agents only; `None` once every agent is down.
    pub live_metric: Option<f64>,
    pub discoveries: Vec<DiscoveryRecord>,
    pub active_command: Option<Vec<Point2>>,
}

/// Extra per-frame data handed to observers but not logged.
pub struct FrameView<'a> {
    /// Swarm target density on the compile grid.
    pub phi: &'a DensityGrid,
    /// Pooled statistics of every agent.
    pub swarm: &'a Spectrum,
}

/// Hooks for live consumers of a run.
pub trait RunObserver {
    /// Operator commands to inject at the start of `tick`, oldest first.
    fn poll_commands(&mut self, _tick: u64) -> Vec<Vec<Point2>> {
        Vec::new()
    }

    fn on_frame(&mut self, _frame: &SnapshotFrame, _view: &FrameView<'_>) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub name: String,
    pub seed: u64,
    pub dt: f64,
    pub sensing_radius: f64,
    pub dd_radius: f64,
    pub initial_states: Vec<AgentState>,
    /// Every object ever present, with its final kind.
    pub objects: Vec<WorldObject>,
    pub frames: Vec<SnapshotFrame>,
    pub disablements: Vec<Disablement>,
    pub net: NetStats,
}

#[derive(Debug, Clone)]
struct PendingDiscovery {
    kind: ObjectKind,
    location: Point2,
    first_tick: u64,
    acked: BTreeSet<AgentId>,
}

#[derive(Debug, Clone)]
struct AgentRuntime {
    spec: AgentSpec,
    state: AgentState,
    alive: bool,
    task: TaskSpec,
    phi_grid: DensityGrid,
    phi: Spectrum,
    digest: String,
    task_dirty: bool,
    memory: ErgodicMemory,
    plan: Option<(u64, Plan)>,
    dwell: BTreeMap<usize, f64>,
    pending: Vec<PendingDiscovery>,
}

impl AgentRuntime {
    fn position(&self) -> Point2 {
        [self.state.0[0], self.state.0[1]]
    }

    fn dwell_total(&self) -> f64 {
        self.dwell.values().fold(0.0, |a, b| a + b)
    }

    fn known(&self) -> Vec<WorldObject> {
        let ee = self.task.ee_points().iter().map(|p| WorldObject {
            kind: ObjectKind::Ee,
            location: p.location,
        });
        let dd = self.task.dd_points().iter().map(|p| WorldObject {
            kind: ObjectKind::Dd,
            location: p.location,
        });
        ee.chain(dd).collect()
    }
}

fn distance(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Hex SHA-256 of the grid values.
pub fn grid_digest(grid: &DensityGrid) -> String {
    let mut h = Sha256::new();
    for v in grid.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed for the noise of a command issued at `tick`; shared by every agent.
fn command_seed(seed: u64, tick: u64) -> u64 {
    seed ^ tick.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn compile_target(
    task: &TaskSpec,
    scenario: &Scenario,
    cfg: &Arc<SpectralConfig>,
) -> Result<(DensityGrid, Spectrum)> {
    let grid = compile_density(task, scenario.grid_resolution, scenario.seed)?;
    let spectrum = decompose_density(&grid, cfg)?;
    Ok((grid, spectrum))
}

/// Stateful tick-by-tick simulation of one scenario.
pub struct Simulation {
    scenario: Scenario,
    cfg: Arc<SpectralConfig>,
    tick: u64,
    agents: Vec<AgentRuntime>,
    world: Vec<WorldObject>,
    ever: Vec<WorldObject>,
    network: Network,
    global_task: TaskSpec,
    global_grid: DensityGrid,
    global_phi: Spectrum,
    discoveries: Vec<DiscoveryRecord>,
    disablements: Vec<Disablement>,
    active_command: Option<Vec<Point2>>,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let cfg = Arc::new(SpectralConfig::new(
            scenario.coeffs_per_dim,
            2,
            vec![1.0, 1.0],
            scenario.metric_weight,
        )?);
        let base = TaskSpec::new(AgentRole::Regular)
            .with_variance(scenario.variance)?
            .with_noise_bound(scenario.noise_bound)?
            .with_command_mode(scenario.command_mode);
        let mut agents = Vec::with_capacity(scenario.agents.len());
        for spec in &scenario.agents {
            let task = base.clone().with_role(spec.role);
            let (phi_grid, phi) = compile_target(&task, &scenario, &cfg)?;
            agents.push(AgentRuntime {
                state: spec.start.clone(),
                alive: true,
                digest: grid_digest(&phi_grid),
                task,
                phi_grid,
                phi,
                task_dirty: false,
                memory: ErgodicMemory::new(cfg.clone()),
                plan: None,
                dwell: BTreeMap::new(),
                pending: Vec::new(),
                spec: spec.clone(),
            });
        }
        let (global_grid, global_phi) = compile_target(&base, &scenario, &cfg)?;
        let world: Vec<WorldObject> = scenario
            .objects
            .iter()
            .map(|o| WorldObject {
                kind: o.kind,
                location: o.location,
            })
            .collect();
        Ok(Self {
            network: Network::new(scenario.net.clone()),
            cfg,
            tick: 0,
            agents,
            ever: world.clone(),
            world,
            global_task: base,
            global_grid,
            global_phi,
            discoveries: Vec::new(),
            disablements: Vec::new(),
            active_command: None,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.scenario.ticks
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Target density and spectrum an agent is currently planning against.
    pub fn agent_target(&self, id: AgentId) -> Option<(&DensityGrid, &Spectrum)> {
        self.agents
            .iter()
            .find(|a| a.spec.id == id)
            .map(|a| (&a.phi_grid, &a.phi))
    }

    pub fn agent_memory(&self, id: AgentId) -> Option<&ErgodicMemory> {
        self.agents.iter().find(|a| a.spec.id == id).map(|a| &a.memory)
    }

    fn live_ids(&self) -> BTreeSet<AgentId> {
        self.agents.iter().filter(|a| a.alive).map(|a| a.spec.id).collect()
    }

    fn disable(&mut self, idx: usize, cause: DisableCause) {
        let agent = &mut self.agents[idx];
        if !agent.alive {
            return;
        }
        agent.alive = false;
        agent.plan = None;
        agent.pending.clear();
        self.disablements.push(Disablement {
            agent: agent.spec.id,
            tick: self.tick,
            cause,
        });
    }

    fn register_global(&mut self, kind: ObjectKind, location: Point2, agent: AgentId) -> Result<()> {
        if !self.global_task.knows(kind, &location) {
            self.global_task = self.global_task.register_discovery(kind, location)?;
            self.discoveries.push(DiscoveryRecord {
                tick: self.tick,
                agent,
                kind,
                location,
            });
            self.refresh_global()?;
        }
        Ok(())
    }

    fn refresh_global(&mut self) -> Result<()> {
        let (grid, phi) = compile_target(&self.global_task, &self.scenario, &self.cfg)?;
        self.global_grid = grid;
        self.global_phi = phi;
        Ok(())
    }

    /// Phase 1. Returns the command to send this tick, if any.
    fn fire_events(&mut self, bridge: Vec<Vec<Point2>>) -> Result<Option<Vec<Point2>>> {
        let tick = self.tick;
        let mut command = None;
        let due: Vec<ScenarioEvent> = self
            .scenario
            .events
            .iter()
            .filter(|e| e.tick == tick)
            .map(|e| e.event.clone())
            .collect();
        for event in due {
            match event {
                ScenarioEvent::UserCommand(points) => command = Some(points),
                ScenarioEvent::AgentFailure(id) => {
                    if let Some(idx) = self.agents.iter().position(|a| a.spec.id == id) {
                        self.disable(idx, DisableCause::Failure);
                    }
                }
                ScenarioEvent::EeToDd(location) => {
                    let mut found = false;
                    for o in self.world.iter_mut() {
                        if o.kind == ObjectKind::Ee
                            && distance(o.location, location) <= SAME_LOCATION_TOL
                        {
                            o.kind = ObjectKind::Dd;
                            found = true;
                        }
                    }
                    if !found {
                        self.world.push(WorldObject {
                            kind: ObjectKind::Dd,
                            location,
                        });
                    }
                    for e in self.ever.iter_mut() {
                        if distance(e.location, location) <= SAME_LOCATION_TOL {
                            e.kind = ObjectKind::Dd;
                        }
                    }
                    if !found {
                        self.ever.push(WorldObject {
                            kind: ObjectKind::Dd,
                            location,
                        });
                    }
                }
            }
        }
        if let Some(last) = bridge.into_iter().last() {
            command = Some(last);
        }
        if let Some(points) = &command {
            let seed = command_seed(self.scenario.seed, tick);
            self.global_task = self.global_task.add_user_command(points, seed)?;
            self.refresh_global()?;
            self.active_command = Some(points.clone());
        }
        Ok(command)
    }

    /// Phase 2: sensing, local registration and (re)broadcast of discoveries.
    fn sense(&mut self) -> Result<BTreeMap<AgentId, Vec<Outgoing>>> {
        let tick = self.tick;
        let live = self.live_ids();
        let radius = self.scenario.sensing_radius;
        let mut outboxes: BTreeMap<AgentId, Vec<Outgoing>> = BTreeMap::new();
        let mut found = Vec::new();
        for idx in 0..self.agents.len() {
            if !self.agents[idx].alive {
                continue;
            }
            let pos = self.agents[idx].position();
            for o in &self.world {
                if distance(pos, o.location) <= radius && !self.agents[idx].task.knows(o.kind, &o.location) {
                    found.push((idx, *o));
                }
            }
        }
        for (idx, o) in found {
            let id = self.agents[idx].spec.id;
            let agent = &mut self.agents[idx];
            agent.task = agent.task.register_discovery(o.kind, o.location)?;
            agent.task_dirty = true;
            agent.pending.push(PendingDiscovery {
                kind: o.kind,
                location: o.location,
                first_tick: tick,
                acked: BTreeSet::new(),
            });
            outboxes.entry(id).or_default().extend(broadcast_discovery(
                id,
                live.iter().copied(),
                o.kind,
                o.location,
                tick,
            ));
            self.register_global(o.kind, o.location, id)?;
        }
        let period = self.scenario.rebroadcast_ticks;
        for agent in self.agents.iter_mut().filter(|a| a.alive) {
            let id = agent.spec.id;
            agent
                .pending
                .retain(|p| !live.iter().all(|&r| r == id || p.acked.contains(&r)));
            for p in &agent.pending {
                if tick > p.first_tick && (tick - p.first_tick) % period == 0 {
                    let missing = live.iter().copied().filter(|r| !p.acked.contains(r));
                    outboxes.entry(id).or_default().extend(broadcast_discovery(
                        id, missing, p.kind, p.location, tick,
                    ));
                }
            }
        }
        Ok(outboxes)
    }

    /// Phase 3: DD proximity accounting on the pre-move states.
    fn account_dwell(&mut self) {
        let dt = self.scenario.dt;
        let radius = self.scenario.dd_radius;
        let limit = self.scenario.dd_dwell;
        let mut disabled = Vec::new();
        for (idx, agent) in self.agents.iter_mut().enumerate() {
            if !agent.alive || agent.spec.role == AgentRole::DdBlocker {
                continue;
            }
            let pos = agent.position();
            for (oi, o) in self.world.iter().enumerate() {
                if o.kind == ObjectKind::Dd && distance(pos, o.location) <= radius {
                    *agent.dwell.entry(oi).or_insert(0.0) += dt;
                }
            }
            if agent.dwell.values().any(|&d| d >= limit) {
                disabled.push(idx);
            }
        }
        for idx in disabled {
            self.disable(idx, DisableCause::Dd);
        }
    }

    /// Phase 4: network exchange and inbox application.
    fn exchange(
        &mut self,
        mut outboxes: BTreeMap<AgentId, Vec<Outgoing>>,
        command: Option<Vec<Point2>>,
    ) -> Result<()> {
        let tick = self.tick;
        let now = tick as f64 * self.scenario.dt;
        for agent in self.agents.iter().filter(|a| a.alive) {
            outboxes.entry(agent.spec.id).or_default().push(Outgoing {
                to: Recipient::All,
                message: SwarmMessage {
                    sender: agent.spec.id,
                    sent_tick: tick,
                    payload: Payload::SpectrumShare {
                        spectrum: agent.memory.own().clone(),
                        elapsed: agent.memory.elapsed(),
                    },
                },
            });
        }
        if let Some(points) = command {
            outboxes.entry(OPERATOR).or_default().push(Outgoing {
                to: Recipient::All,
                message: SwarmMessage {
                    sender: OPERATOR,
                    sent_tick: tick,
                    payload: Payload::UserCommand { points },
                },
            });
        }
        let live = self.live_ids();
        let inboxes = self.network.exchange(&live, &outboxes, tick);
        let mut acks = Vec::new();
        for (id, inbox) in inboxes {
            let Some(idx) = self.agents.iter().position(|a| a.spec.id == id) else {
                continue;
            };
            let agent = &mut self.agents[idx];
            for msg in inbox {
                match msg.payload {
                    Payload::SpectrumShare { spectrum, elapsed } => {
                        agent.memory.receive(msg.sender, spectrum, elapsed, now)?;
                    }
                    Payload::Discovery { kind, location } => {
                        if !agent.task.knows(kind, &location) {
                            agent.task = agent.task.register_discovery(kind, location)?;
                            agent.task_dirty = true;
                        }
                        acks.push((msg.sender, id, kind, location));
                    }
                    Payload::UserCommand { points } => {
                        let seed = command_seed(self.scenario.seed, msg.sent_tick);
                        agent.task = agent.task.add_user_command(&points, seed)?;
                        agent.task_dirty = true;
                    }
                    Payload::AgentDisabled => {}
                }
            }
        }
        for (sender, receiver, kind, location) in acks {
            if let Some(a) = self.agents.iter_mut().find(|a| a.spec.id == sender) {
                for p in a.pending.iter_mut() {
                    if p.kind == kind && distance(p.location, location) <= SAME_LOCATION_TOL {
                        p.acked.insert(receiver);
                    }
                }
            }
        }
        Ok(())
    }

    /// Phase 5 and 6: recompile targets, plan, step and accumulate.
    fn plan_and_move(&mut self) -> Result<Vec<Vec<Point2>>> {
        let tick = self.tick;
        let now = tick as f64 * self.scenario.dt;
        let dt = self.scenario.dt;
        let scenario = &self.scenario;
        let cfg = &self.cfg;
        let params = &scenario.planner;
        let period = params.replan_period as u64;
        let results: Vec<Result<Vec<Point2>>> = self
            .agents
            .par_iter_mut()
            .map(|agent| {
                if !agent.alive {
                    return Ok(Vec::new());
                }
                let id = agent.spec.id;
                let wrap = |source: Error| Error::PlannerDiverged {
                    agent: id,
                    tick,
                    source: Box::new(source),
                };
                if agent.task_dirty {
                    let (grid, phi) = compile_target(&agent.task, scenario, cfg)?;
                    agent.digest = grid_digest(&grid);
                    agent.phi_grid = grid;
                    agent.phi = phi;
                    agent.task_dirty = false;
                }
                let reuse = match &agent.plan {
                    Some((planned, p)) => {
                        let offset = (tick - planned) as usize;
                        tick % period != 0 && offset < p.controls.len()
                    }
                    None => false,
                };
                if !reuse {
                    let p = plan(&agent.spec.model, &agent.state, &agent.memory, &agent.phi, params, now)
                        .map_err(wrap)?;
                    agent.plan = Some((tick, p));
                }
                let (planned, p) = agent.plan.as_ref().expect("plan present");
                let offset = (tick - planned) as usize;
                let u = p.controls[offset].clone();
                let path: Vec<Point2> = p.path[offset..].iter().map(|s| [s.0[0], s.0[1]]).collect();
                let before = agent.position();
                agent.state = agent.spec.model.step(&agent.state, &u, dt).map_err(wrap)?;
                agent.memory.accumulate_own(&before, dt).map_err(wrap)?;
                Ok(path)
            })
            .collect();
        results.into_iter().collect()
    }

    fn pooled(&self, live_only: bool) -> Option<Spectrum> {
        let items: Vec<(&Spectrum, f64)> = self
            .agents
            .iter()
            .filter(|a| (a.alive || !live_only) && a.memory.elapsed() > 0.0)
            .map(|a| (a.memory.own(), a.memory.elapsed()))
            .collect();
        if items.is_empty() {
            return None;
        }
        Spectrum::weighted_mean(items).ok()
    }

    /// Advances one tick and returns its frame.
    pub fn step(&mut self, observer: &mut dyn RunObserver) -> Result<SnapshotFrame> {
        if self.is_finished() {
            return Err(Error::InvalidScenario("simulation already finished".into()));
        }
        let tick = self.tick;
        let bridge = observer.poll_commands(tick);
        let command = self.fire_events(bridge)?;
        let outboxes = self.sense()?;
        self.account_dwell();
        self.exchange(outboxes, command)?;
        let paths = self.plan_and_move()?;

        let time = (tick + 1) as f64 * self.scenario.dt;
        let swarm = self
            .pooled(false)
            .unwrap_or_else(|| Spectrum::zeros(self.cfg.clone()));
        let swarm_metric = ergodic_metric(&swarm, &self.global_phi)?;
        let live_metric = match self.pooled(true) {
            Some(s) => Some(ergodic_metric(&s, &self.global_phi)?),
            None => None,
        };
        let agents = self
            .agents
            .iter()
            .zip(paths)
            .map(|(a, path)| {
                let fused = a.memory.fuse(time, self.scenario.planner.staleness);
                Ok(AgentFrame {
                    id: a.spec.id,
                    role: a.spec.role,
                    alive: a.alive,
                    state: a.state.clone(),
                    predicted_path: path,
                    phi_digest: a.digest.clone(),
                    metric: ergodic_metric(&fused.spectrum, &a.phi)?,
                    dwell: a.dwell_total(),
                    known: a.known(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let frame = SnapshotFrame {
            tick,
            time,
            agents,
            swarm_metric,
            live_metric,
            discoveries: self.discoveries.clone(),
            active_command: self.active_command.clone(),
        };
        observer.on_frame(
            &frame,
            &FrameView {
                phi: &self.global_grid,
                swarm: &swarm,
            },
        );
        self.tick += 1;
        Ok(frame)
    }

    fn into_log(self, frames: Vec<SnapshotFrame>) -> RunLog {
        RunLog {
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            dt: self.scenario.dt,
            sensing_radius: self.scenario.sensing_radius,
            dd_radius: self.scenario.dd_radius,
            initial_states: self.scenario.agents.iter().map(|a| a.start.clone()).collect(),
            objects: self.ever,
            frames,
            disablements: self.disablements,
            net: self.network.stats().clone(),
        }
    }

    /// Runs to completion, returning the log and the network for its delivery trace.
    pub fn run_to_end(mut self, observer: &mut dyn RunObserver) -> Result<(RunLog, Network)> {
        let mut frames = Vec::with_capacity(self.scenario.ticks as usize);
        while !self.is_finished() {
            frames.push(self.step(observer)?);
        }
        let network = self.network.clone();
        Ok((self.into_log(frames), network))
    }
}

/// Runs a scenario headless.
pub fn run(scenario: Scenario) -> Result<RunLog> {
    run_with(scenario, &mut NoObserver)
}

pub fn run_with(scenario: Scenario, observer: &mut dyn RunObserver) -> Result<RunLog> {
    Ok(Simulation::new(scenario)?.run_to_end(observer)?.0)
}
