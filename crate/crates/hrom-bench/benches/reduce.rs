//! Sketch-and-realize stage timing across core orders on a fixed synthetic
//! multichannel dataset.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hrom::{fixed_order_era, synthesize, EraOptions, Geometry, SynthConfig};

fn reduce_stage(c: &mut Criterion) {
    let data = synthesize(&SynthConfig {
        geometry: Geometry::Semicircle,
        m: 8,
        p: 8,
        n_modes: 8,
        n_samples: 1024,
        sample_rate: 16000.0,
        seed: 9,
    })
    .unwrap();
    let mut group = c.benchmark_group("reduce");
    group.sample_size(10);
    for r in [16usize, 32, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(r), &r, |b, &r| {
            b.iter(|| {
                fixed_order_era(
                    &data.sequence,
                    r,
                    &EraOptions {
                        gamma: 1.0,
                        block: 4,
                        power: 1,
                        seed: 0,
                    },
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, reduce_stage);
criterion_main!(benches);
