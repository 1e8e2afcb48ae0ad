use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use ergoswarm::controller::{plan, PlannerParams};
use ergoswarm::spectral::decompose_density;
use ergoswarm::taskspec::compile_density;
use ergoswarm::{AgentModel, AgentRole, AgentState, ModelKind, TaskSpec};
use ergoswarm_bench::{config, mixed_target, warm_memory};

fn bench_plan(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan");
    for k in [5, 10, 15] {
        let cfg = config(k);
        let phi = mixed_target(&cfg);
        let mem = warm_memory(&cfg, 200);
        let params = PlannerParams::default();
        for kind in [ModelKind::SingleIntegrator, ModelKind::DifferentialDrive] {
            let model = AgentModel::new(kind);
            let x0 = match kind {
                ModelKind::SingleIntegrator => AgentState(vec![0.4, 0.55]),
                _ => AgentState(vec![0.4, 0.55, 0.3]),
            };
            group.bench_with_input(BenchmarkId::new(format!("{kind:?}"), k), &k, |b, _| {
                b.iter(|| plan(&model, black_box(&x0), &mem, &phi, &params, 20.0).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_decompose(c: &mut Criterion) {
    let spec = TaskSpec::new(AgentRole::Regular);
    let mut group = c.benchmark_group("decompose");
    for res in [25, 50, 100] {
        let grid = compile_density(&spec, res, 0).unwrap();
        let cfg = config(10);
        group.bench_with_input(BenchmarkId::from_parameter(res), &res, |b, _| {
            b.iter(|| decompose_density(black_box(&grid), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_memory(c: &mut Criterion) {
    let cfg = config(10);
    let mut mem = warm_memory(&cfg, 10);
    c.bench_function("accumulate_own", |b| {
        b.iter(|| mem.accumulate_own(black_box(&[0.3, 0.8]), 0.1).unwrap())
    });
}

criterion_group!(benches, bench_plan, bench_decompose, bench_memory);
criterion_main!(benches);
