use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use respo_bench::{double_integrator, gridworlds, uniform};
use respo_core::oracle::{optimal_ref, policy_eval, ref_fixed_point, Signal};

fn gridworld_oracles(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle");
    for (name, mdp) in gridworlds() {
        let pi = uniform(&mdp);
        group.bench_with_input(BenchmarkId::new("policy_eval", name), &mdp, |b, m| {
            b.iter(|| policy_eval(m, &pi, Signal::Cost).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("ref_fixed_point", name), &mdp, |b, m| {
            b.iter(|| ref_fixed_point(m, &pi, 0.99).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("optimal_ref", name), &mdp, |b, m| b.iter(|| optimal_ref(m).unwrap()));
    }
    group.finish();
}

fn double_integrator_oracle(c: &mut Criterion) {
    let mdp = double_integrator();
    let mut group = c.benchmark_group("oracle_double_integrator");
    group.sample_size(10);
    group.bench_function("optimal_ref_41x41", |b| b.iter(|| optimal_ref(&mdp).unwrap()));
    group.finish();
}

criterion_group!(benches, gridworld_oracles, double_integrator_oracle);
criterion_main!(benches);
