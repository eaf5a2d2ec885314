//! Command-line front end. `dispatch` returns the process exit code.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use log::info;
use serde::Serialize;

use crate::ablation::{run_ablation, AblationData};
use crate::checkpoint::{sidecar, Checkpoint};
use crate::corpus::schema::read_corpus;
use crate::corpus::synth::{generate_synthetic, SynthConfig};
use crate::corpus::text::MaskSet;
use crate::corpus::vocab::{build_vocabulary, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::{with_threads, Execution};
use crate::nn::graph::Graph;
use crate::prepare::prepare_corpus;
use crate::runconfig::{self, Kind, RunConfig, KEYS};
use crate::train::{evaluate_accuracy, fit, predict_all, run_gradcheck, write_metrics, GradcheckSetup};
use crate::types::Sample;

/// Relative-error bound a gradient check must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const PATHS_OUT: &[&str] = &["out"];
const RUN: &[&str] = &["seed", "threads"];
const TRAIN_KEYS: &[&str] =
    &["batch_size", "lr_main", "lr_text", "lambda", "epochs", "beta1", "beta2", "adam_eps", "target_accuracy"];

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: Vec<&'static str>,
}

fn model_keys() -> impl Iterator<Item = &'static str> {
    KEYS.iter().filter(|k| k.model).map(|k| k.name)
}

fn subcommands() -> Vec<Sub> {
    let cat = |parts: &[&[&'static str]]| parts.iter().flat_map(|p| p.iter().copied()).collect::<Vec<_>>();
    let with_model = |mut v: Vec<&'static str>| {
        v.extend(model_keys());
        v
    };
    vec![
        Sub {
            name: "synth",
            about: "Generate a synthetic corpus",
            keys: cat(&[&["task", "n_samples", "seed"], PATHS_OUT]),
        },
        Sub {
            name: "vocab",
            about: "Build a vocabulary from a corpus",
            keys: cat(&[&["corpus", "min_count"], PATHS_OUT]),
        },
        Sub {
            name: "train",
            about: "Train a model and write the best checkpoint",
            keys: with_model(cat(&[&["corpus", "dev", "vocab", "min_count"], PATHS_OUT, RUN, TRAIN_KEYS])),
        },
        Sub {
            name: "eval",
            about: "Print the accuracy of a checkpoint on a corpus",
            keys: cat(&[&["checkpoint", "corpus", "mask", "threads"]]),
        },
        Sub {
            name: "predict",
            about: "Write predictions (or score breakdowns) as JSON Lines",
            keys: cat(&[&["checkpoint", "corpus", "mask", "threads", "explain"], PATHS_OUT]),
        },
        Sub {
            name: "ablate",
            about: "Run a variant sweep and write a cell,accuracy,delta report",
            keys: with_model(cat(&[
                &["axis", "corpus", "dev", "checkpoint", "vocab", "min_count"],
                PATHS_OUT,
                RUN,
                TRAIN_KEYS,
            ])),
        },
        Sub {
            name: "gradcheck",
            about: "Finite-difference check of the full loss on a small synthetic batch",
            keys: with_model(vec!["seed"]),
        },
    ]
}

fn flag(name: &str) -> String {
    name.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("mcpred")
        .about("Multi-chain script event prediction")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in subcommands() {
        let mut c = Command::new(sub.name)
            .about(sub.about)
            .arg(Arg::new("config").long("config").value_name("PATH").help("key = value file; flags override it"));
        for name in sub.keys {
            let k = runconfig::key(name).expect("subcommand keys are known");
            let arg = Arg::new(k.name).long(flag(k.name)).help(k.help);
            c = c.arg(match k.kind {
                Kind::Value => arg.value_name(k.value_name),
                Kind::Switch => arg.action(ArgAction::SetTrue),
            });
        }
        cmd = cmd.subcommand(c);
    }
    cmd
}

/// Defaults, then the config file, then command-line flags.
fn run_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        rc.apply_file(Path::new(path))?;
    }
    for k in KEYS {
        if !m.try_contains_id(k.name).unwrap_or(false) {
            continue;
        }
        match k.kind {
            Kind::Value => {
                if let Some(v) = m.get_one::<String>(k.name) {
                    rc.set(k.name, v)?;
                }
            }
            Kind::Switch => {
                if m.get_flag(k.name) {
                    rc.set(k.name, "true")?;
                }
            }
        }
    }
    rc.validate()?;
    Ok(rc)
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (without the program name) and runs the subcommand.
pub fn dispatch<I, S>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv = std::iter::once("mcpred".to_string()).chain(args.into_iter().map(Into::into));
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let result = run_config(sub).and_then(|rc| {
        let threads = rc.threads;
        if threads > 1 {
            with_threads(threads, || run(name, &rc, out))?
        } else {
            run(name, &rc, out)
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn run(name: &str, rc: &RunConfig, out: &mut (dyn Write + Send)) -> Result<i32> {
    let exec = Execution::for_threads(rc.threads);
    match name {
        "synth" => synth(rc),
        "vocab" => vocab(rc),
        "train" => train(rc, exec, out),
        "eval" => eval(rc, exec, out),
        "predict" => predict(rc, exec, out),
        "ablate" => ablate(rc, exec),
        "gradcheck" => gradcheck(rc, out),
        other => Err(Error::Config(format!("unknown subcommand {other:?}"))),
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag_name: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{} is required", flag(flag_name))))
}

fn create(path: &Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path)?))
}

fn synth(rc: &RunConfig) -> Result<i32> {
    let path = need(&rc.out, "out")?;
    let corpus = generate_synthetic(&SynthConfig::new(rc.task, rc.n_samples), rc.train.seed)?;
    let mut w = create(path)?;
    corpus.write(&mut w)?;
    w.flush()?;
    info!("wrote {} {} samples to {}", corpus.samples.len(), rc.task, path.display());
    Ok(EXIT_OK)
}

fn vocab(rc: &RunConfig) -> Result<i32> {
    let samples = read_corpus(need(&rc.corpus, "corpus")?)?;
    let vocab = build_vocabulary(&samples, rc.min_count)?;
    let path = need(&rc.out, "out")?;
    let mut w = create(path)?;
    vocab.write(&mut w)?;
    w.flush()?;
    info!("wrote {} tokens to {}", vocab.len(), path.display());
    Ok(EXIT_OK)
}

fn load_vocab(rc: &RunConfig, samples: &[Sample]) -> Result<Vocabulary> {
    match &rc.vocab {
        Some(p) => Vocabulary::read(std::io::BufReader::new(std::fs::File::open(p)?)),
        None => build_vocabulary(samples, rc.min_count),
    }
}

fn train(rc: &RunConfig, exec: Execution, out: &mut (dyn Write + Send)) -> Result<i32> {
    let ckpt_path = need(&rc.out, "out")?;
    let train_raw = read_corpus(need(&rc.corpus, "corpus")?)?;
    let vocab = load_vocab(rc, &train_raw)?;
    let none = MaskSet::none();
    let train_set = prepare_corpus(&train_raw, &vocab, &rc.model, &none, exec)?;
    let dev_set = match &rc.dev {
        Some(p) => Some(prepare_corpus(&read_corpus(p)?, &vocab, &rc.model, &none, exec)?),
        None => None,
    };
    let (_, outcome) = fit(&rc.model, &rc.train, vocab.len(), &train_set, dev_set.as_deref(), exec)?;
    let ck = Checkpoint { config: rc.model.clone(), vocab, params: outcome.best };
    ck.save(ckpt_path)?;
    let metrics_path = sidecar(ckpt_path, "metrics.csv");
    let mut w = create(&metrics_path)?;
    write_metrics(&mut w, &outcome.metrics)?;
    w.flush()?;
    match outcome.best_dev_accuracy {
        Some(acc) => writeln!(out, "best dev accuracy {acc} at epoch {}", outcome.best_epoch)?,
        None => writeln!(out, "trained {} epochs", outcome.epochs_run)?,
    }
    Ok(EXIT_OK)
}

fn load_for_eval(
    rc: &RunConfig,
    exec: Execution,
) -> Result<(Checkpoint, Vec<Sample>, Vec<crate::prepare::PreparedSample>)> {
    let ck = Checkpoint::load(need(&rc.checkpoint, "checkpoint")?)?;
    let raw = read_corpus(need(&rc.corpus, "corpus")?)?;
    let prepared = prepare_corpus(&raw, &ck.vocab, &ck.config, &rc.mask, exec)?;
    Ok((ck, raw, prepared))
}

fn eval(rc: &RunConfig, exec: Execution, out: &mut (dyn Write + Send)) -> Result<i32> {
    let (ck, _, prepared) = load_for_eval(rc, exec)?;
    let model = ck.model()?;
    let acc = evaluate_accuracy(&model, &ck.params, &prepared, exec)?;
    writeln!(out, "accuracy {acc}")?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    sample: &'a str,
    predicted: usize,
    gold: usize,
    pr: &'a [f64],
}

fn predict(rc: &RunConfig, exec: Execution, out: &mut (dyn Write + Send)) -> Result<i32> {
    let (ck, raw, prepared) = load_for_eval(rc, exec)?;
    let model = ck.model()?;
    let mut lines = Vec::new();
    if rc.explain {
        let per_sample = exec.try_map(&prepared, |i, s| {
            let mut g = Graph::new(&ck.params);
            let fwd = model.forward(&mut g, s, None)?;
            let verbs: Vec<Option<String>> = raw[i].candidates.iter().map(|c| c.event.verb.clone()).collect();
            fwd.breakdown(&g, s, &verbs)
        })?;
        for b in per_sample.iter().flatten() {
            lines.push(serde_json::to_string(b).map_err(|e| Error::Invalid(e.to_string()))?);
        }
    } else {
        for (p, s) in predict_all(&model, &ck.params, &prepared, exec)?.iter().zip(&prepared) {
            let line = PredictionLine { sample: &s.id, predicted: p.predicted, gold: p.answer, pr: &p.pr };
            lines.push(serde_json::to_string(&line).map_err(|e| Error::Invalid(e.to_string()))?);
        }
    }
    match &rc.out {
        Some(path) => {
            let mut w = create(path)?;
            for l in &lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
        }
        None => {
            for l in &lines {
                writeln!(out, "{l}")?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn ablate(rc: &RunConfig, exec: Execution) -> Result<i32> {
    let axis = rc.axis.ok_or_else(|| Error::Config("--axis is required".into()))?;
    let path = need(&rc.out, "out")?;
    let train_raw = read_corpus(need(&rc.corpus, "corpus")?)?;
    let eval_raw = read_corpus(need(&rc.dev, "dev")?)?;
    let loaded = match &rc.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let model = ck.model()?;
            Some((ck, model))
        }
        None => None,
    };
    let vocab = match &loaded {
        Some((ck, _)) => ck.vocab.clone(),
        None => load_vocab(rc, &train_raw)?,
    };
    let data = AblationData { train: &train_raw, eval: &eval_raw, vocab: &vocab };
    let fixed = loaded.as_ref().map(|(ck, m)| (m, &ck.params));
    let report = run_ablation(axis, &rc.model, &rc.train, data, fixed, exec)?;
    let mut w = create(path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(EXIT_OK)
}

fn gradcheck(rc: &RunConfig, out: &mut (dyn Write + Send)) -> Result<i32> {
    let setup = GradcheckSetup { seed: rc.train.seed, ..GradcheckSetup::default() };
    let report = run_gradcheck(&rc.model, &setup)?;
    writeln!(
        out,
        "max relative error {:e} at {}[{}] over {} coordinates",
        report.max_rel_error, report.worst_param, report.worst_index, report.coordinates
    )?;
    Ok(if report.max_rel_error < GRADCHECK_TOLERANCE { EXIT_OK } else { EXIT_NUMERIC })
}
