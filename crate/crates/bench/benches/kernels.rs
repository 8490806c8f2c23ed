use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use qni_bench::pulsed_state;
use qni_core::noise::StepNoise;
use qni_core::scenario::ScenarioConfig;
use qni_core::{
    fwm_step, run_bench, DispersionCoefficients, MaterialParams, NoiseSource, SpectralPhasePlan, Workspace,
};

fn step(c: &mut Criterion) {
    let params = MaterialParams::table_defaults();
    let mut noise = StepNoise::zeros(256);
    NoiseSource::new(1).fill_step(0, 0, 0, 0.01, &mut noise);
    let state = pulsed_state(256, 4e8);
    c.bench_function("fwm_step_256", |b| {
        b.iter_batched_ref(
            || state.clone(),
            |s| fwm_step(s, &params, 0.01, &noise).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn noise(c: &mut Criterion) {
    let src = NoiseSource::new(7);
    let mut buf = StepNoise::zeros(256);
    let mut k = 0usize;
    c.bench_function("noise_fill_256", |b| {
        b.iter(|| {
            k = (k + 1) % 1000;
            src.fill_step(3, 0, k, 0.01, &mut buf);
            black_box(&buf);
        })
    });
}

fn dispersion(c: &mut Criterion) {
    let plan = SpectralPhasePlan::new(256, 2.0, DispersionCoefficients::from_material(-100.0, 0.489, 0.01)).unwrap();
    let mut grid = pulsed_state(256, 1.0).pump;
    let mut scratch = Vec::new();
    c.bench_function("dispersion_256", |b| b.iter(|| plan.apply_in_place(&mut grid, &mut scratch).unwrap()));
}

fn trajectory(c: &mut Criterion) {
    let mut cfg = ScenarioConfig::default();
    cfg.layout.steps_per_stage = 50;
    let setup = cfg.build_setup().unwrap();
    let noise = NoiseSource::new(1);
    let mut ws = Workspace::new(setup.shape.bins);
    let mut t = 0;
    let mut group = c.benchmark_group("bench");
    group.sample_size(10);
    group.bench_function("pulsed_trajectory_256x50", |b| {
        b.iter(|| {
            t += 1;
            black_box(run_bench(t, &setup, &noise, &mut ws).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, step, noise, dispersion, trajectory);
criterion_main!(benches);
