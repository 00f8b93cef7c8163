use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use edgeneck_core::exec::Exec;
use edgeneck_core::kernels::{conv2d_with, ConvSpec};
use edgeneck_core::{Pipeline, PipelineConfig, Tensor};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let cases = [
        ("3x3_64ch_64px", [1, 64, 64, 64], [64, 64, 3, 3], ConvSpec::default().padding(1, 1)),
        ("1x7_d7_32ch_64px", [1, 32, 64, 64], [32, 32, 1, 7], ConvSpec::same(1, 7, 7, 7)),
        ("depthwise_sobel_256ch", [1, 256, 64, 64], [256, 1, 3, 3], ConvSpec::default().padding(1, 1).groups(256)),
    ];
    for (name, xs, ws, spec) in cases {
        let x = Tensor::<f32>::uniform(xs, -1.0, 1.0, 1);
        let w = Tensor::<f32>::uniform(ws, -1.0, 1.0, 2);
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(mode, name), &exec, |b, &exec| {
                b.iter(|| conv2d_with(exec, black_box(&x), &w, None, &spec).unwrap())
            });
        }
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline_forward");
    group.sample_size(10);
    let pipe = Pipeline::new(PipelineConfig::default()).unwrap();
    let store = pipe.init_params::<f32>(7).unwrap();
    let image = Tensor::<f32>::uniform([1, 3, 256, 256], 0.0, 1.0, 3);
    for (mode, exec) in MODES {
        group.bench_function(mode, |b| {
            Exec::set_current(exec);
            b.iter(|| pipe.run(&store, black_box(&image)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, pipeline);
criterion_main!(benches);
