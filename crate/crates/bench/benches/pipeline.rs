use std::hint::black_box;

use absa_core::harness::config::{ExperimentConfig, Scheme};
use absa_core::harness::rng::{phase_rng, Phase};
use absa_core::harness::run_pipeline;
use absa_core::metrics::comm_metrics;
use absa_core::quantizer::kmedian;
use absa_core::solver::{q_learning_train, value_iteration, LearnConfig};
use absa_core::{GridSpec, GridWorld};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn world(side: usize) -> GridWorld {
    GridWorld::new(GridSpec::square(side, side + 1), 2).unwrap()
}

fn bench_value_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("value_iteration");
    for side in [4, 8] {
        let w = world(side);
        group.bench_with_input(BenchmarkId::from_parameter(side), &w, |b, w| {
            b.iter(|| value_iteration(w, 1e-10).unwrap())
        });
    }
    group.finish();
}

fn bench_kmedian(c: &mut Criterion) {
    let (_, pi) = value_iteration(&world(8), 1e-10).unwrap();
    let labels = pi.as_slice().to_vec();
    let mut group = c.benchmark_group("kmedian");
    for k in [2, 5, 16] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| kmedian(black_box(&labels), k).unwrap())
        });
    }
    group.finish();
}

fn bench_q_learning(c: &mut Criterion) {
    let w = world(4);
    let cfg = LearnConfig {
        episodes: 2_000,
        ..LearnConfig::default()
    };
    let mut group = c.benchmark_group("q_learning");
    group.sample_size(10);
    group.bench_function("4x4_2k_episodes", |b| {
        b.iter(|| q_learning_train(&w, &cfg, &mut phase_rng(0, Phase::Solve)).unwrap())
    });
    group.finish();
}

fn bench_comm_metrics(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        grid: GridSpec::square(8, 22),
        scheme: Scheme::Hoc,
        budget: vec![2],
        eval_episodes: 2_000,
        ..ExperimentConfig::default()
    };
    let log = run_pipeline(&cfg, 0).unwrap().log;
    c.bench_function("comm_metrics/hoc_8x8", |b| b.iter(|| comm_metrics(black_box(&log)).unwrap()));
}

fn bench_pipeline(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.learn.episodes = 5_000;
    cfg.controller.tabular.episodes = 2_000;
    cfg.map_episodes = 1_000;
    cfg.eval_episodes = 200;
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("absa2_4x4_desk_small", |b| b.iter(|| run_pipeline(&cfg, 0).unwrap()));
    group.finish();
}

criterion_group!(
    benches,
    bench_value_iteration,
    bench_kmedian,
    bench_q_learning,
    bench_comm_metrics,
    bench_pipeline
);
criterion_main!(benches);
