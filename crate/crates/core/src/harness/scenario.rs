//! Scenario files (TOML, `schema = 1`) and their validated form.
//!
//! All locations in the file are world coordinates inside `[world]`; they are
//! converted to the unit square on load.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{AgentId, PlannerParams, DEFAULT_STALENESS};
use crate::dynamics::{AgentModel, AgentState, Bound, ModelKind};
use crate::error::{Error, Result};
use crate::swarmnet::{NetModel, Topology};
use crate::taskspec::{
    AgentRole, CommandMode, ObjectKind, Point2, WorkspaceTransform, DEFAULT_NOISE_BOUND,
    DEFAULT_RESOLUTION, DEFAULT_VARIANCE,
};

pub const SCHEMA_VERSION: u32 = 1;

fn default_world_min() -> Point2 {
    [0.0, 0.0]
}
fn default_world_max() -> Point2 {
    [1.0, 1.0]
}
fn default_coeffs() -> usize {
    10
}
fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}
fn default_metric_weight() -> f64 {
    crate::controller::DEFAULT_METRIC_WEIGHT
}
fn default_horizon() -> f64 {
    crate::controller::DEFAULT_HORIZON
}
fn default_dt() -> f64 {
    crate::controller::DEFAULT_PLAN_DT
}
fn default_r() -> Vec<f64> {
    vec![crate::controller::DEFAULT_CONTROL_WEIGHT; 2]
}
fn one_usize() -> usize {
    1
}
fn default_staleness() -> f64 {
    DEFAULT_STALENESS
}
fn default_variance() -> Point2 {
    [DEFAULT_VARIANCE; 2]
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_BOUND
}
fn default_radius() -> f64 {
    0.1
}
fn default_dwell() -> f64 {
    3.0
}
fn default_rebroadcast() -> u64 {
    10
}
fn default_command_mode() -> CommandMode {
    CommandMode::Replace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    #[serde(default = "default_world_min")]
    pub min: Point2,
    #[serde(default = "default_world_max")]
    pub max: Point2,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            min: default_world_min(),
            max: default_world_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    #[serde(default = "default_coeffs")]
    pub coeffs_per_dim: usize,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    #[serde(default = "default_metric_weight")]
    pub metric_weight: f64,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            coeffs_per_dim: default_coeffs(),
            grid_resolution: default_resolution(),
            metric_weight: default_metric_weight(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_r")]
    pub control_weight: Vec<f64>,
    #[serde(default = "one_usize")]
    pub replan_period: usize,
    #[serde(default = "default_staleness")]
    pub staleness: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            dt: default_dt(),
            control_weight: default_r(),
            replan_period: 1,
            staleness: default_staleness(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "full_topology")]
    pub topology: Topology,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub latency: u64,
}

fn full_topology() -> Topology {
    Topology::Full
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            topology: Topology::Full,
            drop_probability: 0.0,
            latency: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default = "default_variance")]
    pub variance: Point2,
    #[serde(default = "default_noise")]
    pub noise_bound: f64,
    #[serde(default = "default_command_mode")]
    pub command_mode: CommandMode,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            variance: default_variance(),
            noise_bound: default_noise(),
            command_mode: CommandMode::Replace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_radius")]
    pub dd_radius: f64,
    #[serde(default = "default_dwell")]
    pub dd_dwell: f64,
    #[serde(default = "default_rebroadcast")]
    pub rebroadcast_ticks: u64,
}

impl Default for SensingSection {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            dd_radius: default_radius(),
            dd_dwell: default_dwell(),
            rebroadcast_ticks: default_rebroadcast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub id: AgentId,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_role")]
    pub role: AgentRole,
    /// World position; drawn uniformly from the seeded generator when absent.
    #[serde(default)]
    pub start: Option<Point2>,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub velocity: Point2,
    #[serde(default)]
    pub bounds: Option<Vec<Bound>>,
}

fn default_model() -> ModelKind {
    ModelKind::SingleIntegrator
}
fn default_role() -> AgentRole {
    AgentRole::Regular
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub kind: ObjectKind,
    pub location: Point2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EventEntry {
    UserCommand { time: f64, points: Vec<Point2> },
    AgentFailure { time: f64, agent: AgentId },
    EeToDd { time: f64, location: Point2 },
}

impl EventEntry {
    fn time(&self) -> f64 {
        match self {
            EventEntry::UserCommand { time, .. }
            | EventEntry::AgentFailure { time, .. }
            | EventEntry::EeToDd { time, .. } => *time,
        }
    }
}

/// On-disk scenario layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub world: WorldSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub sensing: SensingSection,
    pub agents: Vec<AgentEntry>,
    #[serde(default)]
    pub objects: Vec<ObjectEntry>,
    #[serde(default)]
    pub events: Vec<EventEntry>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: AgentId,
    pub model: AgentModel,
    pub role: AgentRole,
    pub start: AgentState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenObject {
    pub kind: ObjectKind,
    pub location: Point2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioEvent {
    UserCommand(Vec<Point2>),
    AgentFailure(AgentId),
    EeToDd(Point2),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub tick: u64,
    pub event: ScenarioEvent,
}

/// Validated scenario in unit coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub transform: WorkspaceTransform,
    pub ticks: u64,
    pub dt: f64,
    pub coeffs_per_dim: usize,
    pub grid_resolution: usize,
    pub metric_weight: f64,
    pub planner: PlannerParams,
    pub net: NetModel,
    pub variance: Point2,
    pub noise_bound: f64,
    pub command_mode: CommandMode,
    pub sensing_radius: f64,
    pub dd_radius: f64,
    pub dd_dwell: f64,
    pub rebroadcast_ticks: u64,
    pub agents: Vec<AgentSpec>,
    pub objects: Vec<HiddenObject>,
    pub events: Vec<TimedEvent>,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidScenario(msg.into()))
}

fn positive(v: f64, what: &str) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return invalid(format!("{what} must be positive"));
    }
    Ok(())
}

impl Scenario {
    pub fn from_path(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        Self::from_file(ScenarioFile::load(path)?, seed_override)
    }

    pub fn from_toml(text: &str, seed_override: Option<u64>) -> Result<Self> {
        Self::from_file(ScenarioFile::parse(text)?, seed_override)
    }

    pub fn from_file(file: ScenarioFile, seed_override: Option<u64>) -> Result<Self> {
        if file.schema != SCHEMA_VERSION {
            return invalid(format!("unsupported schema {} (expected {SCHEMA_VERSION})", file.schema));
        }
        let seed = seed_override.unwrap_or(file.seed);
        let transform = WorkspaceTransform::new(file.world.min, file.world.max)
            .map_err(|e| Error::InvalidScenario(e.to_string()))?;
        let to_unit = |p: Point2, what: &str| -> Result<Point2> {
            let q = transform.world_to_unit(p);
            if q.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
                return invalid(format!("{what} {p:?} lies outside the world box"));
            }
            Ok(q)
        };

        positive(file.duration, "duration")?;
        let planner = PlannerParams {
            horizon: file.planner.horizon,
            plan_dt: file.planner.dt,
            control_weight: file.planner.control_weight.clone(),
            metric_weight: file.spectral.metric_weight,
            replan_period: file.planner.replan_period,
            staleness: file.planner.staleness,
        };
        planner
            .validate()
            .map_err(|e| Error::InvalidScenario(e.to_string()))?;
        let dt = planner.plan_dt;
        let ticks = (file.duration / dt).round() as u64;
        if ticks == 0 {
            return invalid("duration shorter than one tick");
        }
        if file.spectral.coeffs_per_dim == 0 || file.spectral.grid_resolution == 0 {
            return invalid("spectral sizes must be positive");
        }
        positive(file.sensing.radius, "sensing radius")?;
        positive(file.sensing.dd_radius, "dd radius")?;
        positive(file.sensing.dd_dwell, "dd dwell")?;
        positive(file.task.noise_bound, "noise bound")?;
        positive(file.task.variance[0], "variance")?;
        positive(file.task.variance[1], "variance")?;
        if file.sensing.rebroadcast_ticks == 0 {
            return invalid("rebroadcast period must be >= 1 tick");
        }

        let net = NetModel {
            topology: file.network.topology.clone(),
            drop_probability: file.network.drop_probability,
            latency: file.network.latency,
            seed: seed ^ 0x6e65_7477_6f72_6b00,
        };
        net.validate().map_err(Error::InvalidScenario)?;

        if file.agents.is_empty() {
            return invalid("scenario needs at least one agent");
        }
        let mut ids = BTreeSet::new();
        let mut start_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7374_6172_7473_0000);
        let mut agents = Vec::with_capacity(file.agents.len());
        for entry in &file.agents {
            if !ids.insert(entry.id) {
                return invalid(format!("duplicate agent id {}", entry.id));
            }
            let model = match &entry.bounds {
                Some(b) => AgentModel::with_bounds(entry.model, b.clone())
                    .map_err(|e| Error::InvalidScenario(e.to_string()))?,
                None => AgentModel::new(entry.model),
            };
            // Always draw so that adding a start to one agent leaves the
            // others' random starts unchanged.
            let drawn = [
                start_rng.random_range(0.05..0.95),
                start_rng.random_range(0.05..0.95),
            ];
            let pos = match entry.start {
                Some(p) => to_unit(p, "agent start")?,
                None => drawn,
            };
            let state = match entry.model {
                ModelKind::SingleIntegrator => vec![pos[0], pos[1]],
                ModelKind::DoubleIntegrator => {
                    vec![pos[0], pos[1], entry.velocity[0], entry.velocity[1]]
                }
                ModelKind::DifferentialDrive => vec![pos[0], pos[1], entry.heading],
            };
            if state.iter().any(|v| !v.is_finite()) {
                return invalid(format!("agent {} has a non-finite start state", entry.id));
            }
            agents.push(AgentSpec {
                id: entry.id,
                model,
                role: entry.role,
                start: AgentState(state),
            });
        }

        let objects = file
            .objects
            .iter()
            .map(|o| {
                Ok(HiddenObject {
                    kind: o.kind,
                    location: to_unit(o.location, "object")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut events = Vec::with_capacity(file.events.len());
        for e in &file.events {
            let time = e.time();
            if !(time.is_finite() && time >= 0.0 && time <= file.duration) {
                return invalid(format!("event time {time} outside [0, duration]"));
            }
            let tick = (time / dt).round() as u64;
            let event = match e {
                EventEntry::UserCommand { points, .. } => {
                    if points.is_empty() {
                        return invalid("user command with no points");
                    }
                    ScenarioEvent::UserCommand(
                        points
                            .iter()
                            .map(|p| to_unit(*p, "command point"))
                            .collect::<Result<_>>()?,
                    )
                }
                EventEntry::AgentFailure { agent, .. } => {
                    if !ids.contains(agent) {
                        return invalid(format!("failure event names unknown agent {agent}"));
                    }
                    ScenarioEvent::AgentFailure(*agent)
                }
                EventEntry::EeToDd { location, .. } => {
                    ScenarioEvent::EeToDd(to_unit(*location, "conversion location")?)
                }
            };
            events.push(TimedEvent { tick, event });
        }
        events.sort_by_key(|e| e.tick);

        Ok(Scenario {
            name: file.name.clone(),
            seed,
            transform,
            ticks,
            dt,
            coeffs_per_dim: file.spectral.coeffs_per_dim,
            grid_resolution: file.spectral.grid_resolution,
            metric_weight: file.spectral.metric_weight,
            planner,
            net,
            variance: file.task.variance,
            noise_bound: file.task.noise_bound,
            command_mode: file.task.command_mode,
            sensing_radius: file.sensing.radius,
            dd_radius: file.sensing.dd_radius,
            dd_dwell: file.sensing.dd_dwell,
            rebroadcast_ticks: file.sensing.rebroadcast_ticks,
            agents,
            objects,
            events,
        })
    }

    pub fn duration(&self) -> f64 {
        self.ticks as f64 * self.dt
    }
}
