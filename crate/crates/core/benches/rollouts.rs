use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dfc::agents::{RobotPolicy, TrainConfig};
use dfc::codec::{CodebookEnsemble, FeatureMap};
use dfc::config::RunConfig;
use dfc::par;
use dfc::pipeline::{collect_dataset, fit_codec};
use dfc::rollout::{run_indexed, RunOptions, Selector, System};
use dfc::seed::{SeedTree, Stream};

fn setup() -> (RunConfig, FeatureMap, CodebookEnsemble, RobotPolicy) {
    let mut cfg = RunConfig::default();
    cfg.codec.dataset_size = 5_000;
    let records = collect_dataset(&cfg).unwrap();
    let (features, ensemble) = fit_codec(&cfg, &records).unwrap();
    let train = TrainConfig::default();
    let robot = RobotPolicy::new(6, 8, 6, &train, &mut SeedTree::new(1).rng(Stream::Init, 0)).unwrap();
    (cfg, features, ensemble, robot)
}

fn rollouts(c: &mut Criterion) {
    let (cfg, features, ensemble, robot) = setup();
    let sys = System {
        env: &cfg.env,
        features: &features,
        ensemble: &ensemble,
        robot: &robot,
        regressor: None,
    };
    let seeds = SeedTree::new(7);
    let opts = RunOptions::default();
    let episode = |i: usize| run_indexed(&sys, Selector::Fixed(6), &opts, &seeds, i as u64).unwrap().0.len();

    let mut group = c.benchmark_group("rollouts");
    for n in [8usize, 64] {
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| par::map_sequential(n, episode))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| par::map_parallel(n, episode))
        });
    }
    group.finish();
}

criterion_group!(benches, rollouts);
criterion_main!(benches);
