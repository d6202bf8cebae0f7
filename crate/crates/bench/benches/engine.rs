use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dwlight::evolution::{evolve_g2, propagate, run, step_unitary, RunOptions};
use dwlight::lattice::{presets, LatticeSpec};
use dwlight::InitialState;
use dwlight_bench::transport_fixture;

fn tensor_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolve_g2");
    for n in [8usize, 16, 32] {
        let spec = LatticeSpec::new(n, presets::U, presets::V, vec![n / 2 - 1]).unwrap();
        let sched = dwlight::lattice::move_schedule(&spec, 0, dwlight::Direction::Right, &presets::bend()).unwrap();
        let p = step_unitary(&sched, 1.0, 1e-3).unwrap();
        let (_, t) = InitialState::Squeezed { sites: vec![n / 2 - 1], r: 0.8, phase: 0.0 }.prepare(n).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| evolve_g2(black_box(&t), &p).unwrap()));
    }
    group.finish();
}

fn single_step(c: &mut Criterion) {
    let (sched, _, _) = transport_fixture().unwrap();
    c.bench_function("step_unitary/32", |b| b.iter(|| step_unitary(black_box(&sched), 2.0, 1e-3).unwrap()));
}

fn full_move(c: &mut Criterion) {
    let (sched, m, t) = transport_fixture().unwrap();
    let mut group = c.benchmark_group("wall_move");
    group.sample_size(10);
    group.bench_function("propagate/32", |b| b.iter(|| propagate(black_box(&sched), 0.0, sched.total_length(), 1e-2).unwrap()));
    let opts = RunOptions { dz: 1e-2, audit: false, ..Default::default() };
    group.bench_function("run/32", |b| b.iter(|| run(black_box(&sched), &m, &t, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, tensor_update, single_step, full_move);
criterion_main!(benches);
