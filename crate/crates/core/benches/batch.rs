//! One training step's batch gradient and a dev-set evaluation, run
//! sequentially and on the rayon pool.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mcpred::config::ModelConfig;
use mcpred::corpus::synth::{generate_synthetic, SynthConfig, Task};
use mcpred::corpus::text::MaskSet;
use mcpred::corpus::vocab::build_vocabulary;
use mcpred::exec::Execution;
use mcpred::model::Model;
use mcpred::prepare::{prepare_corpus, PreparedSample};
use mcpred::train::{batch_gradient, evaluate_accuracy};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let raw = generate_synthetic(&SynthConfig::new(Task::Combined, 64), 1).unwrap().samples;
    let vocab = build_vocabulary(&raw, 1).unwrap();
    let cfg = ModelConfig::small();
    let samples = prepare_corpus(&raw, &vocab, &cfg, &MaskSet::none(), Execution::Sequential).unwrap();
    let (model, store) = Model::init(&cfg, vocab.len(), 1).unwrap();
    let batch: Vec<&PreparedSample> = samples.iter().collect();

    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_gradient(&model, &store, black_box(&batch), 1e-6, None, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_accuracy(&model, &store, black_box(&samples), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
