use std::sync::Arc;

use ergoswarm::controller::{plan, ErgodicMemory, PlannerParams};
use ergoswarm::harness::{run, Scenario};
use ergoswarm::spectral::{decompose_density, trajectory_spectrum, SpectralConfig, Spectrum, TimedPoint};
use ergoswarm::taskspec::compile_density;
use ergoswarm::{AgentModel, AgentRole, AgentState, ModelKind, ObjectKind, TaskSpec};
use proptest::prelude::*;

fn cfg() -> Arc<SpectralConfig> {
    Arc::new(SpectralConfig::unit(6, 2).unwrap())
}

fn target(cfg: &Arc<SpectralConfig>, ee: [f64; 2]) -> Spectrum {
    let spec = TaskSpec::new(AgentRole::Regular)
        .register_discovery(ObjectKind::Ee, ee)
        .unwrap();
    decompose_density(&compile_density(&spec, 30, 0).unwrap(), cfg).unwrap()
}

fn state(kind: ModelKind, x: f64, y: f64, extra: f64) -> AgentState {
    match kind {
        ModelKind::SingleIntegrator => AgentState(vec![x, y]),
        ModelKind::DoubleIntegrator => AgentState(vec![x, y, extra, -extra]),
        ModelKind::DifferentialDrive => AgentState(vec![x, y, extra * 10.0]),
    }
}

fn kinds() -> impl Strategy<Value = ModelKind> {
    prop_oneof![
        Just(ModelKind::SingleIntegrator),
        Just(ModelKind::DoubleIntegrator),
        Just(ModelKind::DifferentialDrive),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn controls_stay_in_bounds(
        kind in kinds(),
        x in 0.0f64..=1.0,
        y in 0.0f64..=1.0,
        extra in -0.3f64..0.3,
        history in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..30),
        ee in (0.0f64..=1.0, 0.0f64..=1.0),
        q in prop_oneof![Just(1e-3), Just(1.0), Just(1e6)],
    ) {
        let c = cfg();
        let model = AgentModel::new(kind);
        let mut mem = ErgodicMemory::new(c.clone());
        for &(hx, hy) in &history {
            mem.accumulate_own(&[hx, hy], 0.1).unwrap();
        }
        let params = PlannerParams { metric_weight: q, ..PlannerParams::default() };
        let p = plan(&model, &state(kind, x, y, extra), &mem, &target(&c, [ee.0, ee.1]), &params, mem.elapsed()).unwrap();
        for u in &p.controls {
            for (v, b) in u.iter().zip(model.bounds()) {
                prop_assert!(*v >= b.lo && *v <= b.hi, "{v} outside [{}, {}]", b.lo, b.hi);
            }
        }
        for s in &p.path {
            prop_assert!(s.as_slice()[..2].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn plans_depend_on_peers_only_through_their_spectra(
        a in (0.0f64..=1.0, 0.0f64..=1.0),
        b in (0.0f64..=1.0, 0.0f64..=1.0),
        x in (0.05f64..0.95, 0.05f64..0.95),
    ) {
        let c = cfg();
        let seg = |p: (f64, f64)| TimedPoint::new(vec![p.0, p.1], 0.5);
        // Two distinct histories with bit-identical spectra.
        let s1 = trajectory_spectrum(&[seg(a), seg(b)], &c).unwrap();
        let s2 = trajectory_spectrum(&[seg(b), seg(a)], &c).unwrap();
        prop_assert_eq!(&s1, &s2);

        let model = AgentModel::new(ModelKind::SingleIntegrator);
        let phi = target(&c, [0.3, 0.7]);
        let mk = |peer: usize, s: &Spectrum| {
            let mut m = ErgodicMemory::new(c.clone());
            m.accumulate_own(&[0.2, 0.2], 0.1).unwrap();
            m.receive(peer, s.clone(), 1.0, 0.1).unwrap();
            m
        };
        let x0 = AgentState(vec![x.0, x.1]);
        let params = PlannerParams::default();
        let p1 = plan(&model, &x0, &mk(3, &s1), &phi, &params, 0.1).unwrap();
        let p2 = plan(&model, &x0, &mk(8, &s2), &phi, &params, 0.1).unwrap();
        prop_assert_eq!(p1.controls, p2.controls);
        prop_assert_eq!(p1.unclamped, p2.unclamped);
    }
}

fn agent_block(id: usize, start: [f64; 2]) -> String {
    format!("[[agents]]\nid = {id}\nstart = [{}, {}]\n", start[0], start[1])
}

#[test]
fn partitioned_agent_plans_like_a_solo_agent() {
    let starts = [[0.2, 0.3], [0.75, 0.6], [0.4, 0.9]];
    let mut text = "schema = 1\nduration = 8.0\nseed = 9\n[network]\ndrop_probability = 1.0\n".to_string();
    for (i, s) in starts.iter().enumerate() {
        text += &agent_block(i, *s);
    }
    let group = run(Scenario::from_toml(&text, None).unwrap()).unwrap();
    assert_eq!(group.net.delivered, 0);
    for (i, s) in starts.iter().enumerate() {
        let solo_text = format!("schema = 1\nduration = 8.0\nseed = 9\n{}", agent_block(i, *s));
        let solo = run(Scenario::from_toml(&solo_text, None).unwrap()).unwrap();
        for (g, s) in group.frames.iter().zip(&solo.frames) {
            assert_eq!(g.agents[i].state, s.agents[0].state, "agent {i} tick {}", g.tick);
            assert_eq!(g.agents[i].predicted_path, s.agents[0].predicted_path);
            assert_eq!(g.agents[i].metric, s.agents[0].metric);
        }
    }
}
