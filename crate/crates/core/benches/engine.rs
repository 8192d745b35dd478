//! Parallel versus sequential dispatch on a 3×3 convolution and one full
//! training step. Both paths produce bitwise-identical results.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use drunet_core::data::{synth_generate, SynthSpec};
use drunet_core::engine::ops::{conv2d, ConvParams};
use drunet_core::engine::ConvGeometry;
use drunet_core::exec::set_parallel;
use drunet_core::params::Initializer;
use drunet_core::training::train_step;
use drunet_core::{build_network, BlockKind, NetworkConfig, Shape, Tensor};

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn conv(c: &mut Criterion) {
    let mut init = Initializer::new(0);
    let x: Tensor<f32> = init.he_normal(Shape::new(4, 16, 64, 64), 1);
    let w = init.he_normal(Shape::new(16, 16, 3, 3), 144);
    let p = ConvParams::new(w, Tensor::zeros(Shape::vector(16)), ConvGeometry::same(3)).unwrap();
    let mut group = c.benchmark_group("conv3x3_4x16x64x64");
    for (name, on) in MODES {
        set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| conv2d(&x, &p).unwrap())
        });
    }
    set_parallel(true);
    group.finish();
}

fn step(c: &mut Criterion) {
    let cfg = NetworkConfig::new(BlockKind::Dru).with_base(8).with_size(64, 64);
    let (net, params) = build_network::<f32>(&cfg, 0).unwrap();
    let data = synth_generate(&SynthSpec {
        n: 2,
        height: 64,
        width: 64,
        classes: 2,
        seed: 0,
    })
    .unwrap();
    let batch: Vec<_> = data.iter().collect();
    let mut group = c.benchmark_group("dru_train_step_b2_64x64");
    group.sample_size(10);
    for (name, on) in MODES {
        set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut p = params.clone();
                train_step(&net, &mut p, &batch).unwrap()
            })
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, conv, step);
criterion_main!(benches);
