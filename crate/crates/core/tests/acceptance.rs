//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to
//! stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use mcpred::ablation::{run_ablation, AblationData, AblationReport, Axis};
use mcpred::checkpoint::{sidecar, Checkpoint};
use mcpred::cli::dispatch;
use mcpred::config::{AttentionVariant, ModelConfig, ScoreVariant, TrainConfig};
use mcpred::corpus::synth::{generate_synthetic, SynthConfig, Task};
use mcpred::corpus::text::{convert_sentence, MaskSet};
use mcpred::corpus::vocab::{build_vocabulary, Vocabulary};
use mcpred::exec::Execution;
use mcpred::model::Model;
use mcpred::nn::graph::{Graph, Var};
use mcpred::prepare::{prepare_corpus, PreparedSample};
use mcpred::scoring::{attention_weights, candidate_distribution, event_score};
use mcpred::train::{evaluate_accuracy, fit, predict_all, run_gradcheck, GradcheckSetup};
use mcpred::types::{EventSpan, Pos, Role, Sample, SentenceText};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {verdict} ({detail})");
}

fn synthetic(task: Task, n: usize, seed: u64) -> Vec<Sample> {
    generate_synthetic(&SynthConfig::new(task, n), seed).unwrap().samples
}

fn prepare(samples: &[Sample], vocab: &Vocabulary, cfg: &ModelConfig) -> Vec<PreparedSample> {
    prepare_corpus(samples, vocab, cfg, &MaskSet::none(), Execution::Sequential).unwrap()
}

/// Desk-scale optimizer settings shared by the synthetic benchmarks.
fn desk_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig { batch_size: 20, lr_main: 3e-3, lr_text: 3e-4, epochs, seed, ..TrainConfig::default() }
}

struct MechanismRun {
    with_mechanism: f64,
    without_mechanism: f64,
}

/// Trains the full and the ablated configuration on one seed, selecting
/// checkpoints on a dev split and scoring them on a held-out test split.
fn mechanism_run(task: Task, full: &ModelConfig, ablated: &ModelConfig, seed: u64) -> MechanismRun {
    let train_raw = synthetic(task, 2000, 1000 + seed);
    let dev_raw = synthetic(task, 500, 2000 + seed);
    let test_raw = synthetic(task, 500, 3000 + seed);
    let vocab = build_vocabulary(&train_raw, 1).unwrap();
    let tc = TrainConfig { target_accuracy: Some(0.95), ..desk_train(seed, 30) };
    let mut acc = [0.0; 2];
    for (slot, cfg) in [full, ablated].into_iter().enumerate() {
        let train = prepare(&train_raw, &vocab, cfg);
        let dev = prepare(&dev_raw, &vocab, cfg);
        let test = prepare(&test_raw, &vocab, cfg);
        let (model, outcome) = fit(cfg, &tc, vocab.len(), &train, Some(&dev), Execution::Sequential).unwrap();
        acc[slot] = evaluate_accuracy(&model, &outcome.best, &test, Execution::Sequential).unwrap();
    }
    MechanismRun { with_mechanism: acc[0], without_mechanism: acc[1] }
}

fn mechanism_criterion(criterion: u32, task: Task, full: ModelConfig, ablated: ModelConfig, budget: Option<Duration>) {
    let start = Instant::now();
    let runs: Vec<MechanismRun> = (1..=3).map(|seed| mechanism_run(task, &full, &ablated, seed)).collect();
    let elapsed = start.elapsed();
    let good = runs.iter().filter(|r| r.with_mechanism >= 0.90 && r.without_mechanism <= 0.65).count();
    let in_time = budget.is_none_or(|b| elapsed < b);
    let detail = runs
        .iter()
        .enumerate()
        .map(|(i, r)| format!("seed {}: {:.3} vs {:.3}", i + 1, r.with_mechanism, r.without_mechanism))
        .collect::<Vec<_>>()
        .join("; ");
    let pass = good >= 2 && in_time;
    report(criterion, pass, &format!("{detail}; {good}/3 seeds; {:.0} s", elapsed.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_1_full_model_gradient_check() {
    let cfg = ModelConfig::tiny();
    assert_eq!((cfg.d_w, cfg.d_e, cfg.chain_layers, cfg.chain_heads, cfg.n, cfg.text_layers), (8, 8, 1, 2, 4, 1));
    assert_eq!(cfg.dropout, 0.0);
    let setup = GradcheckSetup::default();
    assert_eq!((setup.vocab_size, setup.eps), (50, 1e-5));
    let start = Instant::now();
    let r = run_gradcheck(&cfg, &setup).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.max_rel_error < 1e-4 && secs < 60.0;
    report(
        1,
        pass,
        &format!(
            "max rel error {:.3e} at {}[{}], {} coordinates, {secs:.1} s",
            r.max_rel_error, r.worst_param, r.worst_index, r.coordinates
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_exact_values() {
    let tol = 1e-9;
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    let origin = [0.0, 0.0];
    let p = [3.0, 4.0];
    checks.push(("E (0,0)-(3,4)", event_score(&origin, &p, ScoreVariant::E, None).unwrap(), -5.0));
    checks.push(("M (0,0)-(3,4)", event_score(&origin, &p, ScoreVariant::M, None).unwrap(), -7.0));
    checks.push(("C orthogonal", event_score(&[1.0, 0.0], &[0.0, 1.0], ScoreVariant::C, None).unwrap(), 0.0));
    checks.push(("C parallel", event_score(&[2.0, 0.0], &[5.0, 0.0], ScoreVariant::C, None).unwrap(), 1.0));
    let ones = vec![1.0; 4];
    let (logits, _) =
        attention_weights(std::slice::from_ref(&ones), &ones, AttentionVariant::ScaledDot, None, None).unwrap();
    checks.push(("scaled-dot logit", logits.unwrap()[0], 2.0));
    let pr = candidate_distribution(&[0.0, 3f64.ln()]).unwrap();
    checks.push(("softmax[0]", pr[0], 0.25));
    checks.push(("softmax[1]", pr[1], 0.75));
    for (i, p) in candidate_distribution(&[1.5; 5]).unwrap().into_iter().enumerate() {
        checks.push((["uniform[0]", "uniform[1]", "uniform[2]", "uniform[3]", "uniform[4]"][i], p, 0.2));
    }
    let h = vec![vec![0.3, -1.0]; 8];
    let (_, alpha) = attention_weights(&h, &[1.0, 2.0], AttentionVariant::Avg, None, None).unwrap();
    for a in alpha {
        checks.push(("avg alpha", a, 0.125));
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > tol)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    let pass = failed.is_empty();
    report(2, pass, &if pass { format!("{} values within 1e-9", checks.len()) } else { failed.join(", ") });
    assert!(pass);
}

#[test]
fn criterion_3_sentence_conversion_golden() {
    use Pos::*;
    let sentence = SentenceText {
        tokens: "He entered the restaurant and asked the waiter for the menu".split(' ').map(String::from).collect(),
        pos: vec![N, V, O, N, O, V, O, N, O, O, N],
        verb_index: 1,
        event_spans: vec![EventSpan { event: 0, start: 1, end: 4 }, EventSpan { event: 1, start: 5, end: 11 }],
        focus_event: 0,
    };
    let got = convert_sentence(&sentence, 0, Role::Subj).unwrap();
    let want: Vec<String> = "He [subj] entered [subj] the restaurant and [UNK]".split(' ').map(String::from).collect();
    let pass = got == want;
    report(3, pass, &got.join(" "));
    assert!(pass);
}

#[test]
fn criterion_4_multi_chain_mechanism() {
    let full = ModelConfig { use_text: false, ..ModelConfig::small() };
    let single = ModelConfig { multi_chain: false, ..full.clone() };
    mechanism_criterion(4, Task::Multichain, full, single, Some(Duration::from_secs(15 * 60)));
}

#[test]
fn criterion_5_text_mechanism() {
    let full = ModelConfig::small();
    let no_text = ModelConfig { use_text: false, ..full.clone() };
    mechanism_criterion(5, Task::Text, full, no_text, None);
}

#[test]
fn criterion_6_memorization() {
    let raw = synthetic(Task::Combined, 100, 6);
    let vocab = build_vocabulary(&raw, 1).unwrap();
    let cfg = ModelConfig::small();
    let samples = prepare(&raw, &vocab, &cfg);
    let tc = TrainConfig { target_accuracy: Some(1.0), ..desk_train(6, 200) };
    let (model, outcome) = fit(&cfg, &tc, vocab.len(), &samples, Some(&samples), Execution::Sequential).unwrap();
    let acc = evaluate_accuracy(&model, &outcome.best, &samples, Execution::Sequential).unwrap();
    let pass = acc == 1.0 && outcome.best_epoch <= 200;
    report(6, pass, &format!("train accuracy {acc} after {} epochs", outcome.best_epoch));
    assert!(pass);
}

fn rows(r: &AblationReport) -> Vec<&str> {
    r.rows.iter().map(|x| x.cell.as_str()).collect()
}

#[test]
fn criterion_7_ablation_tables() {
    let train_raw = synthetic(Task::Text, 1000, 71);
    let dev_raw = synthetic(Task::Text, 300, 72);
    let vocab = build_vocabulary(&train_raw, 1).unwrap();
    let data = AblationData { train: &train_raw, eval: &dev_raw, vocab: &vocab };
    let base = ModelConfig::small();
    let tc = desk_train(7, 6);
    let run = |axis| run_ablation(axis, &base, &tc, data, None, Execution::Sequential).unwrap();
    let score = run(Axis::Score);
    let attention = run(Axis::Attention);
    let mask = run(Axis::Mask);

    let mut problems = Vec::new();
    if rows(&score) != ["E-Score", "C-Score", "M-Score", "L-Score"] {
        problems.push(format!("score rows {:?}", rows(&score)));
    }
    if rows(&attention) != ["scaled-dot", "dot", "additive", "avg"] {
        problems.push(format!("attention rows {:?}", rows(&attention)));
    }
    let mask_rows = ["All", "-V", "-N", "-J", "-R", "-V(self)", "-V(others)", "-V&N", "-V&R", "-N&J", "-R&J"];
    if rows(&mask) != mask_rows {
        problems.push(format!("mask rows {:?}", rows(&mask)));
    }
    for r in [&score, &attention, &mask] {
        let best = r.rows.iter().map(|x| x.accuracy).fold(f64::MIN, f64::max);
        if r.rows[r.best].accuracy != best {
            problems.push(format!("{}: wrong best cell", r.axis));
        }
        for row in &r.rows {
            if row.delta != row.accuracy - best {
                problems.push(format!("{}: delta of {}", r.axis, row.cell));
            }
        }
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        if lines[0] != "cell,accuracy,delta" || lines.len() != r.rows.len() + 1 || !lines[r.best + 1].ends_with(",/") {
            problems.push(format!("{}: csv layout", r.axis));
        }
    }
    let summary = |r: &AblationReport| {
        r.rows.iter().map(|x| format!("{} {:.3}", x.cell, x.accuracy)).collect::<Vec<_>>().join(", ")
    };
    let pass = problems.is_empty();
    let detail = if pass {
        format!("{} | {} | {}", summary(&score), summary(&attention), summary(&mask))
    } else {
        problems.join("; ")
    };
    report(7, pass, &detail);
    assert!(pass);
}

fn cli(args: &[&str]) -> (i32, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = dispatch(args.iter().copied(), &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

#[test]
fn criterion_8_determinism_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let mut problems = Vec::new();
    for (name, seed) in [("train.jsonl", "81"), ("dev.jsonl", "82")] {
        let (code, msg) =
            cli(&["synth", "--task", "combined", "--n-samples", "120", "--seed", seed, "--out", &p(name)]);
        assert_eq!(code, 0, "{msg}");
    }
    let common = [
        "--corpus",
        &p("train.jsonl"),
        "--dev",
        &p("dev.jsonl"),
        "--seed",
        "5",
        "--epochs",
        "3",
        "--batch-size",
        "16",
        "--lr-main",
        "3e-3",
        "--lr-text",
        "3e-4",
        "--n",
        "6",
        "--d-w",
        "12",
        "--d-e",
        "12",
        "--chain-ffn",
        "24",
        "--text-ffn",
        "24",
        "--chain-layers",
        "1",
        "--text-layers",
        "1",
        "--max-text-len",
        "12",
        "--dropout",
        "0.1",
    ];
    for run in ["a.ckpt", "b.ckpt"] {
        let mut args = vec!["train"];
        args.extend(common);
        let out = p(run);
        args.extend(["--out", &out]);
        let (code, msg) = cli(&args);
        assert_eq!(code, 0, "{msg}");
    }
    let mut args = vec!["train"];
    args.extend(common);
    let par = p("par.ckpt");
    args.extend(["--out", &par, "--threads", "2"]);
    assert_eq!(cli(&args).0, 0);

    let read = |path: std::path::PathBuf| std::fs::read(path).unwrap();
    for ext in [None, Some("cfg"), Some("vocab"), Some("metrics.csv")] {
        let file = |name: &str| {
            let base = dir.path().join(name);
            ext.map_or(base.clone(), |e| sidecar(&base, e))
        };
        if read(file("a.ckpt")) != read(file("b.ckpt")) {
            problems.push(format!("same seed, different {}", ext.unwrap_or("checkpoint")));
        }
        if read(file("a.ckpt")) != read(file("par.ckpt")) {
            problems.push(format!("threads=2 changed {}", ext.unwrap_or("checkpoint")));
        }
    }

    // In-memory model against its saved and reloaded copy.
    let train_raw = mcpred::corpus::schema::read_corpus(&dir.path().join("train.jsonl")).unwrap();
    let dev_raw = mcpred::corpus::schema::read_corpus(&dir.path().join("dev.jsonl")).unwrap();
    let vocab = build_vocabulary(&train_raw, 1).unwrap();
    let cfg = ModelConfig { dropout: 0.1, ..ModelConfig::tiny() };
    let train = prepare(&train_raw, &vocab, &cfg);
    let dev = prepare(&dev_raw, &vocab, &cfg);
    let (model, outcome) =
        fit(&cfg, &desk_train(8, 2), vocab.len(), &train, Some(&dev), Execution::Sequential).unwrap();
    let path = dir.path().join("mem.ckpt");
    Checkpoint { config: cfg.clone(), vocab: vocab.clone(), params: outcome.best.clone() }.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let reloaded_model = loaded.model().unwrap();
    let before = predict_all(&model, &outcome.best, &dev, Execution::Sequential).unwrap();
    let after = predict_all(&reloaded_model, &loaded.params, &dev, Execution::Sequential).unwrap();
    let bits = |ps: &[mcpred::train::Prediction]| {
        ps.iter().flat_map(|p| p.pr.iter().chain(&p.scores).map(|x| x.to_bits())).collect::<Vec<_>>()
    };
    if bits(&before) != bits(&after) {
        problems.push("reloaded checkpoint changed distributions".into());
    }
    let acc_before = evaluate_accuracy(&model, &outcome.best, &dev, Execution::Sequential).unwrap();
    let acc_after = evaluate_accuracy(&reloaded_model, &loaded.params, &dev, Execution::Sequential).unwrap();
    if acc_before.to_bits() != acc_after.to_bits() {
        problems.push("reloaded checkpoint changed accuracy".into());
    }

    let pass = problems.is_empty();
    report(8, pass, &if pass { "byte-identical reruns and bitwise round trip".into() } else { problems.join("; ") });
    assert!(pass);
}

#[test]
fn criterion_9_ablation_mode_equivalence() {
    let raw = synthetic(Task::Combined, 40, 9);
    let vocab = build_vocabulary(&raw, 1).unwrap();
    let with_text = ModelConfig::small();
    let without = ModelConfig { use_text: false, ..with_text.clone() };
    let (_, full_store) = Model::init(&with_text, vocab.len(), 9).unwrap();
    let (free_model, free_store) = Model::init(&without, vocab.len(), 9).unwrap();
    let mut problems = Vec::new();
    if full_store.without_prefix("text.") != free_store {
        problems.push("shared parameters differ".to_string());
    }
    let bound = Model::from_store(&without, &full_store).unwrap();
    let samples = prepare(&raw, &vocab, &without);
    let bits = |g: &Graph, v: Var| g.value(v).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for s in &samples {
        let mut g1 = Graph::new(&full_store);
        let a = bound.forward(&mut g1, s, None).unwrap();
        let mut g2 = Graph::new(&free_store);
        let b = free_model.forward(&mut g2, s, None).unwrap();
        if bits(&g1, a.logits) != bits(&g2, b.logits) || g1.scalar(a.loss).to_bits() != g2.scalar(b.loss).to_bits() {
            problems.push(format!("text-off output differs on {}", s.id));
        }
    }

    let single = ModelConfig { multi_chain: false, ..ModelConfig::small() };
    let (model, store) = Model::init(&single, vocab.len(), 9).unwrap();
    let mut compared = 0;
    for s in &prepare(&raw, &vocab, &single) {
        let mut g = Graph::new(&store);
        let fwd = model.forward(&mut g, s, None).unwrap();
        for c in &fwd.candidates {
            compared += 1;
            if c.chains.len() != 1 || g.scalar(c.o).to_bits() != g.scalar(c.chains[0].f).to_bits() {
                problems.push(format!("single-chain o != f on {}", s.id));
            }
        }
    }
    let pass = problems.is_empty();
    let detail = if pass {
        format!("{} samples bitwise equal without text; o == f on {compared} candidates", samples.len())
    } else {
        problems.join("; ")
    };
    report(9, pass, &detail);
    assert!(pass);
}
