//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use ergoswarm::controller::ErgodicMemory;
use ergoswarm::harness::Scenario;
use ergoswarm::spectral::{decompose_density, SpectralConfig, Spectrum};
use ergoswarm::taskspec::{compile_density, ObjectKind};
use ergoswarm::{AgentRole, TaskSpec};

pub fn config(k: usize) -> Arc<SpectralConfig> {
    Arc::new(SpectralConfig::unit(k, 2).unwrap())
}

/// Target with one EE and one DD.
pub fn mixed_target(cfg: &Arc<SpectralConfig>) -> Spectrum {
    let spec = TaskSpec::new(AgentRole::Regular)
        .register_discovery(ObjectKind::Ee, [0.25, 0.7])
        .unwrap()
        .register_discovery(ObjectKind::Dd, [0.6, 0.4])
        .unwrap();
    decompose_density(&compile_density(&spec, 50, 0).unwrap(), cfg).unwrap()
}

/// Memory after `steps` ticks along a diagonal sweep.
pub fn warm_memory(cfg: &Arc<SpectralConfig>, steps: usize) -> ErgodicMemory {
    let mut mem = ErgodicMemory::new(cfg.clone());
    for i in 0..steps {
        let s = i as f64 / steps as f64;
        mem.accumulate_own(&[s, (3.0 * s).fract()], 0.1).unwrap();
    }
    mem
}

pub fn swarm_scenario(agents: usize, duration: f64) -> Scenario {
    let mut text = format!("schema = 1\nname = \"bench\"\nduration = {duration}\nseed = 3\n");
    for i in 0..agents {
        text += &format!("[[agents]]\nid = {i}\n");
    }
    text += "[[objects]]\nkind = \"ee\"\nlocation = [0.3, 0.3]\n";
    text += "[[objects]]\nkind = \"dd\"\nlocation = [0.7, 0.6]\n";
    Scenario::from_toml(&text, None).unwrap()
}
