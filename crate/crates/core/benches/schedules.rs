//! Level-parallel vs sequential TAO passes on simulator data.
//!
//! Without the `parallel` feature both variants run the sequential schedule.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use costtao::dataset::{label_traces, TiePolicy};
use costtao::simulator::{generate, ScenarioConfig};
use costtao::tao::{self, InitPolicy, TaoConfig};

fn schedules(c: &mut Criterion) {
    let cfg = ScenarioConfig {
        n_packets: 400,
        ..ScenarioConfig::default()
    };
    let ds = label_traces(&generate(&cfg).unwrap(), TiePolicy::Drop)
        .unwrap()
        .standardize()
        .unwrap();
    let mut group = c.benchmark_group("tao_train");
    group.sample_size(10);
    for depth in [2, 4, 6] {
        for parallel in [false, true] {
            let tc = TaoConfig {
                depth,
                lambda: 0.01,
                init_policy: InitPolicy::Cart,
                max_passes: 5,
                parallel,
                ..TaoConfig::default()
            };
            let name = if parallel { "parallel" } else { "sequential" };
            group.bench_with_input(BenchmarkId::new(name, depth), &tc, |b, tc| {
                b.iter(|| tao::train(black_box(&ds), tc).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, schedules);
criterion_main!(benches);
