use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use respo_bench::{gridworlds, short_run};
use respo_core::harness::acceptance::drone_trainer;
use respo_core::env::{DroneFeatures, DroneTunnel, DroneTunnelSpec};
use respo_core::learner::{train_multiconstraint, MultiKind};
use respo_core::{train, LearnerKind, OneHot};

const STEPS: u64 = 20_000;

fn tabular(c: &mut Criterion) {
    let (_, mdp) = gridworlds().remove(0);
    let mut group = c.benchmark_group("train_grid5");
    group.throughput(Throughput::Elements(STEPS));
    for kind in [LearnerKind::Respo, LearnerKind::ScalarLagrangian { chi: 0.0 }, LearnerKind::Rcrl] {
        let config = short_run(kind, STEPS);
        group.bench_function(BenchmarkId::from_parameter(kind.name()), |b| {
            b.iter(|| train(&mdp, OneHot { n_states: mdp.n_states() }, &config, 1, 0, None).unwrap())
        });
    }
    group.finish();
}

fn tunnel(c: &mut Criterion) {
    let env = DroneTunnel::new(DroneTunnelSpec::default()).unwrap();
    let mut config = drone_trainer(MultiKind::Respo);
    config.base.max_steps = Some(STEPS);
    let mut group = c.benchmark_group("train_tunnel");
    group.throughput(Throughput::Elements(STEPS));
    group.sample_size(10);
    group.bench_function("respo", |b| {
        b.iter(|| train_multiconstraint(&env, DroneFeatures::lattice(&env, 0), &config, 1, 0, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, tabular, tunnel);
criterion_main!(benches);
