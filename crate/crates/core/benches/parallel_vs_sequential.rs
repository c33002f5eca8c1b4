use std::hint::black_box;

use cnn_scene_char::data::synth::{generate, SynthOptions};
use cnn_scene_char::experiment::ExperimentConfig;
use cnn_scene_char::network::Network;
use cnn_scene_char::optim::batch_gradient;
use cnn_scene_char::par::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn batch_gradients(c: &mut Criterion) {
    let samples = generate(
        &SynthOptions {
            classes: 27,
            per_class: 2,
            seed: 0,
        },
        Execution::Sequential,
    )
    .expect("synthetic samples");
    let batch: Vec<_> = samples.iter().take(32).map(|s| (&s.image, s.label)).collect();

    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for (filter, stride) in [(3, 1), (5, 2)] {
        let config = ExperimentConfig {
            filter_size: filter,
            stride,
            ..ExperimentConfig::default()
        };
        let net = Network::init(config.network_spec([1, 50, 50], 27).expect("valid spec"), 0).expect("init");
        let cell = format!("{filter}x{filter}_s{stride}");
        for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
            group.bench_with_input(BenchmarkId::new(name, &cell), &exec, |b, &exec| {
                b.iter(|| batch_gradient(black_box(&net), black_box(&batch), exec).expect("gradient"))
            });
        }
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let samples = generate(&SynthOptions { classes: 27, per_class: 4, seed: 1 }, Execution::Sequential).expect("samples");
    let net = Network::init(ExperimentConfig::default().network_spec([1, 50, 50], 27).expect("spec"), 0).expect("init");
    let mut group = c.benchmark_group("predict_108");
    group.sample_size(10);
    for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_function(name, |b| {
            b.iter(|| cnn_scene_char::par::map(exec, &samples, |s| net.predict(&s.image).expect("predict")))
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, forward);
criterion_main!(benches);
