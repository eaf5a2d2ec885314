//! Training-loop properties on synthetic data.

use mcpred::config::{ModelConfig, TrainConfig};
use mcpred::corpus::synth::{generate_synthetic, SynthConfig, Task};
use mcpred::corpus::text::MaskSet;
use mcpred::corpus::vocab::build_vocabulary;
use mcpred::exec::Execution;
use mcpred::model::Model;
use mcpred::prepare::prepare_corpus;
use mcpred::train::{evaluate_accuracy, fit, MetricRow};

fn epoch_means(rows: &[MetricRow]) -> Vec<f64> {
    let epochs = rows.last().map_or(0, |r| r.epoch);
    (1..=epochs)
        .map(|e| {
            let losses: Vec<f64> = rows.iter().filter(|r| r.epoch == e).map(|r| r.train_loss).collect();
            losses.iter().sum::<f64>() / losses.len() as f64
        })
        .collect()
}

#[test]
fn memorization_loss_curve_is_non_increasing_over_windows() {
    let raw = generate_synthetic(&SynthConfig::new(Task::Combined, 100), 6).unwrap().samples;
    let vocab = build_vocabulary(&raw, 1).unwrap();
    let cfg = ModelConfig::small();
    let samples = prepare_corpus(&raw, &vocab, &cfg, &MaskSet::none(), Execution::Sequential).unwrap();
    let tc =
        TrainConfig { batch_size: 20, lr_main: 3e-3, lr_text: 3e-4, epochs: 40, seed: 6, ..TrainConfig::default() };
    let (_, outcome) = fit(&cfg, &tc, vocab.len(), &samples, None, Execution::Sequential).unwrap();
    let means = epoch_means(&outcome.metrics);
    let window: Vec<f64> = means.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (t, pair) in window.windows(2).enumerate() {
        assert!(pair[1] <= pair[0] * 1.01, "window {t}: {} -> {} ({means:?})", pair[0], pair[1]);
    }
    assert!(window.last().unwrap() < &window[0]);
}

#[test]
fn uninformative_model_scores_chance_on_balanced_data() {
    // All-zero parameters give every candidate the same score, so the
    // prediction is always candidate 0; gold positions are uniform.
    let raw = generate_synthetic(&SynthConfig::new(Task::Multichain, 10_000), 12).unwrap().samples;
    let vocab = build_vocabulary(&raw, 1).unwrap();
    let cfg = ModelConfig { use_text: false, ..ModelConfig::tiny() };
    let samples = prepare_corpus(&raw, &vocab, &cfg, &MaskSet::none(), Execution::Parallel).unwrap();
    let (model, mut store) = Model::init(&cfg, vocab.len(), 1).unwrap();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().fill(0.0);
    }
    let acc = evaluate_accuracy(&model, &store, &samples, Execution::Parallel).unwrap();
    assert!((acc - 0.2).abs() <= 0.012, "{acc}");
}
