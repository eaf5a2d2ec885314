//! Loss, Adam with two learning-rate groups, the training loop and
//! accuracy evaluation.

use std::io::Write;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{ModelConfig, TrainConfig};
use crate::corpus::synth::{generate_synthetic, SynthConfig, Task};
use crate::corpus::text::MaskSet;
use crate::corpus::vocab::build_vocabulary;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::Model;
use crate::nn::gradcheck::{check_graph, GradcheckReport};
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::Dropout;
use crate::nn::params::{GradBuffer, Gradients, ParamGroup, ParamStore};
use crate::prepare::prepare_corpus;
use crate::prepare::PreparedSample;
use crate::rng;
use crate::scoring::{candidate_distribution, predict};

/// `-(1/N) Σ log Pr(gold) + λ ‖Θ‖²`.
pub fn compute_loss(gold_log_probs: &[f64], params: &ParamStore, lambda: f64) -> Result<f64> {
    if gold_log_probs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(bad) = gold_log_probs.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gold log-probability {bad}")));
    }
    let data = -gold_log_probs.iter().sum::<f64>() / gold_log_probs.len() as f64;
    Ok(data + lambda * params.sum_squares())
}

/// Adam moments mirroring the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: GradBuffer,
    pub v: GradBuffer,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        OptimizerState { m: GradBuffer::zeros_like(params), v: GradBuffer::zeros_like(params), step: 0 }
    }
}

/// One bias-corrected Adam update. Text-encoder parameters use `lr_text`,
/// everything else `lr_main`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &GradBuffer,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let ids: Vec<_> = params.ids().collect();
    if grads.values.len() != ids.len() || state.m.values.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moments",
            ids.len(),
            grads.values.len(),
            state.m.values.len()
        )));
    }
    for &id in &ids {
        let n = params.get(id).len();
        if grads.get(id).len() != n || state.m.get(id).len() != n {
            return Err(Error::Shape(format!("gradient for {} does not match its shape", params.name(id))));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for id in ids {
        let lr = match params.group(id) {
            ParamGroup::Text => cfg.lr_text,
            ParamGroup::Main => cfg.lr_main,
        };
        let g = grads.get(id);
        let m = state.m.get_mut(id);
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state.v.get_mut(id);
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (state.m.get(id), state.v.get(id));
        for ((p, mi), vi) in params.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
            let mh = mi / c1;
            let vh = vi / c2;
            *p -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Where dropout randomness comes from during a training step.
#[derive(Debug, Clone, Copy)]
pub struct DropoutSource {
    pub seed: u64,
    pub step: usize,
}

struct SampleResult {
    loss: f64,
    grads: Gradients,
    correct: bool,
}

fn sample_gradient(
    model: &Model,
    params: &ParamStore,
    sample: &PreparedSample,
    dropout: Option<Dropout>,
) -> Result<SampleResult> {
    let mut g = Graph::new(params);
    let mut dropout = dropout;
    let fwd = model.forward(&mut g, sample, dropout.as_mut())?;
    let loss = g.scalar(fwd.loss);
    let correct = predict(&fwd.scores(&g)) == sample.answer;
    let grads = g.backward(fwd.loss)?;
    Ok(SampleResult { loss, grads, correct })
}

/// Loss and gradient of a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Mean cross-entropy plus the L2 term.
    pub loss: f64,
    pub data_loss: f64,
    pub grads: GradBuffer,
    pub correct: usize,
}

/// Per-sample tapes run under `exec`; their gradients are summed in batch
/// order, so the result does not depend on scheduling.
pub fn batch_gradient(
    model: &Model,
    params: &ParamStore,
    batch: &[&PreparedSample],
    lambda: f64,
    dropout: Option<DropoutSource>,
    exec: Execution,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let rate = model.config.dropout;
    let results = exec.try_map(batch, |i, s| {
        let d = match dropout {
            Some(src) if rate > 0.0 => {
                Some(Dropout::new(rate, rng::stream(src.seed, &format!("dropout/{}/{i}", src.step))))
            }
            _ => None,
        };
        sample_gradient(model, params, s, d)
    })?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = GradBuffer::zeros_like(params);
    let mut log_probs = Vec::with_capacity(results.len());
    let mut correct = 0;
    for r in &results {
        r.grads.accumulate_into(&mut grads, scale);
        log_probs.push(-r.loss);
        correct += usize::from(r.correct);
    }
    let loss = compute_loss(&log_probs, params, lambda)?;
    if lambda != 0.0 {
        for (id, _, t) in params.iter() {
            for (g, p) in grads.get_mut(id).iter_mut().zip(t.data()) {
                *g += 2.0 * lambda * p;
            }
        }
    }
    let data_loss = loss - lambda * params.sum_squares();
    Ok(BatchGradient { loss, data_loss, grads, correct })
}

/// Mean cross-entropy over `batch` plus the L2 term, on one tape.
pub fn loss_graph(g: &mut Graph, model: &Model, batch: &[PreparedSample], lambda: f64) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut total: Option<Var> = None;
    for s in batch {
        let loss = model.forward(g, s, None)?.loss;
        total = Some(match total {
            Some(t) => g.add(t, loss)?,
            None => loss,
        });
    }
    let mut loss = g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
    if lambda != 0.0 {
        let ids: Vec<_> = g.params().ids().collect();
        for id in ids {
            let p = g.param(id);
            let sq = g.mul(p, p)?;
            let sum = g.sum_all(sq);
            let term = g.scale(sum, lambda);
            loss = g.add(loss, term)?;
        }
    }
    Ok(loss)
}

/// Finite-difference check of the full training loss over every parameter.
pub fn gradcheck_model(
    model: &Model,
    params: &mut ParamStore,
    batch: &[PreparedSample],
    lambda: f64,
    eps: f64,
) -> Result<GradcheckReport> {
    check_graph(params, |g| loss_graph(g, model, batch, lambda), eps)
}

/// Settings for a standalone gradient check on synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSetup {
    pub samples: usize,
    /// Rows of the word table; at least the synthetic vocabulary size.
    pub vocab_size: usize,
    pub lambda: f64,
    /// Half-width of the uniform jitter added to every parameter, so that
    /// zero-initialized biases and gains are checked away from their
    /// initial values.
    pub jitter: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        GradcheckSetup { samples: 1, vocab_size: 50, lambda: 1e-2, jitter: 0.1, eps: 1e-5, seed: 0 }
    }
}

/// Builds a model on a small combined-task corpus and checks the full loss.
pub fn run_gradcheck(cfg: &ModelConfig, setup: &GradcheckSetup) -> Result<GradcheckReport> {
    cfg.validate()?;
    let synth = SynthConfig::new(Task::Combined, setup.samples);
    let corpus = generate_synthetic(&synth, setup.seed)?;
    let vocab = build_vocabulary(&corpus.samples, 1)?;
    let cfg = ModelConfig { dropout: 0.0, ..cfg.clone() };
    let batch = prepare_corpus(&corpus.samples, &vocab, &cfg, &MaskSet::none(), Execution::Sequential)?;
    let (model, mut store) = Model::init(&cfg, setup.vocab_size.max(vocab.len()), setup.seed)?;
    if setup.jitter > 0.0 {
        let mut r = rng::stream(setup.seed, "gradcheck/jitter");
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            for v in store.get_mut(id).data_mut() {
                *v += r.gen_range(-setup.jitter..setup.jitter);
            }
        }
    }
    gradcheck_model(&model, &mut store, &batch, setup.lambda, setup.eps)
}

/// Scores and distribution for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub pr: Vec<f64>,
    pub predicted: usize,
    pub answer: usize,
}

pub fn predict_all(
    model: &Model,
    params: &ParamStore,
    samples: &[PreparedSample],
    exec: Execution,
) -> Result<Vec<Prediction>> {
    exec.try_map(samples, |_, s| {
        let mut g = Graph::new(params);
        let fwd = model.forward(&mut g, s, None)?;
        let scores = fwd.scores(&g);
        let pr = candidate_distribution(&scores)?;
        if !pr.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite(format!("distribution of sample {}", s.id)));
        }
        let predicted = predict(&pr);
        Ok(Prediction { scores, pr, predicted, answer: s.answer })
    })
}

/// Fraction of samples whose predicted candidate is the gold one.
pub fn evaluate_accuracy(
    model: &Model,
    params: &ParamStore,
    samples: &[PreparedSample],
    exec: Execution,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples"));
    }
    let preds = predict_all(model, params, samples, exec)?;
    let correct = preds.iter().filter(|p| p.predicted == p.answer).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// One row of the metrics log. Dev accuracy is filled on the last step of
/// each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

pub fn write_metrics<W: Write>(mut w: W, rows: &[MetricRow]) -> Result<()> {
    writeln!(w, "step,epoch,train_loss,dev_accuracy")?;
    for r in rows {
        let dev = r.dev_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{}", r.step, r.epoch, r.train_loss, dev)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best dev accuracy (the last ones without dev data).
    pub best: ParamStore,
    pub last: ParamStore,
    pub metrics: Vec<MetricRow>,
    pub best_dev_accuracy: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Mini-batch Adam over `train` with a seeded shuffle per epoch.
pub fn train(
    model: &Model,
    mut params: ParamStore,
    train_set: &[PreparedSample],
    dev_set: Option<&[PreparedSample]>,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("no samples"));
    }
    let mut state = OptimizerState::new(&params);
    let mut shuffle = rng::stream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let src = DropoutSource { seed: cfg.seed, step };
            let bg = batch_gradient(model, &params, &batch, cfg.lambda, Some(src), exec)?;
            if !bg.loss.is_finite() || !bg.grads.is_finite() {
                return Err(Error::Diverged { step, loss: bg.loss });
            }
            adam_step(&mut params, &bg.grads, &mut state, cfg)?;
            epoch_loss += bg.data_loss * batch.len() as f64;
            metrics.push(MetricRow { step, epoch, train_loss: bg.loss, dev_accuracy: None });
            step += 1;
        }
        epochs_run = epoch;
        let dev_acc = match dev_set {
            Some(d) if !d.is_empty() => Some(evaluate_accuracy(model, &params, d, exec)?),
            _ => None,
        };
        if let Some(last) = metrics.last_mut() {
            last.dev_accuracy = dev_acc;
        }
        info!(
            "epoch {epoch}: train loss {:.4}{}",
            epoch_loss / train_set.len() as f64,
            dev_acc.map(|a| format!(", dev accuracy {a:.4}")).unwrap_or_default()
        );
        if let Some(acc) = dev_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                debug!("new best dev accuracy {acc} at epoch {epoch}");
                best = Some((acc, epoch, params.clone()));
            }
            if cfg.target_accuracy.is_some_and(|t| acc >= t) {
                break;
            }
        }
    }

    Ok(match best {
        Some((acc, epoch, store)) => TrainOutcome {
            best: store,
            last: params,
            metrics,
            best_dev_accuracy: Some(acc),
            best_epoch: epoch,
            epochs_run,
        },
        None => TrainOutcome {
            best: params.clone(),
            last: params,
            metrics,
            best_dev_accuracy: None,
            best_epoch: epochs_run,
            epochs_run,
        },
    })
}

/// Initializes a model from `train_cfg.seed` and trains it.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    vocab_size: usize,
    train_set: &[PreparedSample],
    dev_set: Option<&[PreparedSample]>,
    exec: Execution,
) -> Result<(Model, TrainOutcome)> {
    let (model, store) = Model::init(model_cfg, vocab_size, train_cfg.seed)?;
    let outcome = train(&model, store, train_set, dev_set, train_cfg, exec)?;
    Ok((model, outcome))
}
