use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sgame_bench::energy_model;
use sgame_core::energy::{run_episode, EpisodeConfig, StorageMode, TariffMode};

fn episode(c: &mut Criterion) {
    let model = energy_model();
    let cfg = EpisodeConfig {
        days: 1,
        seed: 7,
        storage: StorageMode::Hold,
        tariff: TariffMode::Flat,
        initial_bucket: model.buckets() / 2,
    };
    c.bench_function("episode/one_day_hold", |b| b.iter(|| run_episode(black_box(&model), &cfg).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = episode
}
criterion_main!(benches);
