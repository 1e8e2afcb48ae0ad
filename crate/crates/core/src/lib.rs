//! Decentralized ergodic coverage for simulated robot swarms.
//!
//! Agents plan receding-horizon controls that steer the swarm's time-averaged
//! statistics toward a target density built from discovered objects, agent
//! roles, and operator commands. Only basis coefficients are exchanged.

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod spectral;
pub mod swarmnet;
pub mod taskspec;
pub mod uibridge;

pub use controller::{AgentId, ErgodicMemory, Plan, PlannerParams};
pub use dynamics::{AgentModel, AgentState, ModelKind};
pub use error::{Error, Result};
pub use spectral::{DensityGrid, SpectralConfig, Spectrum, TimedPoint};
pub use taskspec::{AgentRole, ObjectKind, Point2, TaskSpec, WorkspaceTransform};
