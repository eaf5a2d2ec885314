//! Flat `key = value` run configuration. Every key is also a command-line
//! flag (`d_e` ↔ `--d-e`), and flags override the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::ablation::Axis;
use crate::config::{ModelConfig, TrainConfig};
use crate::corpus::synth::Task;
use crate::corpus::text::MaskSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Takes a value.
    Value,
    /// A switch on the command line, `true`/`false` in a file.
    Switch,
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    pub value_name: &'static str,
    pub help: &'static str,
    /// Stored alongside checkpoints.
    pub model: bool,
}

const fn value(name: &'static str, value_name: &'static str, help: &'static str) -> Key {
    Key { name, kind: Kind::Value, value_name, help, model: false }
}

const fn model_value(name: &'static str, value_name: &'static str, help: &'static str) -> Key {
    Key { name, kind: Kind::Value, value_name, help, model: true }
}

const fn model_switch(name: &'static str, help: &'static str) -> Key {
    Key { name, kind: Kind::Switch, value_name: "", help, model: true }
}

pub const KEYS: &[Key] = &[
    value("corpus", "PATH", "input corpus (JSON Lines)"),
    value("dev", "PATH", "development corpus for checkpoint selection"),
    value("out", "PATH", "output file"),
    value("checkpoint", "PATH", "parameter checkpoint to read"),
    value("vocab", "PATH", "vocabulary file (built from the corpus when absent)"),
    value("seed", "INT", "seed for every random sub-stream"),
    value("threads", "INT", "worker threads; 1 runs sequentially"),
    value("mask", "CSV", "constituents hidden from the text encoder: V,N,J,R,V_self,V_others"),
    value("task", "TASK", "synthetic task: multichain|text|combined"),
    value("n_samples", "INT", "number of synthetic samples"),
    Key {
        name: "explain",
        kind: Kind::Switch,
        value_name: "",
        help: "emit per-candidate score breakdowns",
        model: false,
    },
    value("axis", "AXIS", "ablation axis: score_variant|attention_variant|mask_set|chain_text"),
    value("min_count", "INT", "minimum token count for the vocabulary"),
    model_value("score", "E|C|M|L", "event-pair scoring function"),
    model_value("attention", "VARIANT", "chain attention: scaled_dot|dot|additive|avg"),
    model_switch("single_chain", "score candidates against their first participant's chain only"),
    model_switch("no_text", "drop the sentence encoder"),
    model_value("n", "INT", "events per chain after padding"),
    model_value("d_w", "INT", "word embedding size"),
    model_value("d_e", "INT", "event embedding size"),
    model_value("chain_layers", "INT", "chain Transformer layers"),
    model_value("chain_heads", "INT", "chain Transformer heads"),
    model_value("chain_ffn", "INT", "chain Transformer feed-forward width"),
    model_value("text_layers", "INT", "text encoder layers"),
    model_value("text_heads", "INT", "text encoder heads"),
    model_value("text_ffn", "INT", "text encoder feed-forward width"),
    model_value("max_text_len", "INT", "sentence length cap including [CLS]"),
    model_value("dropout", "RATE", "dropout rate inside encoder layers"),
    model_switch("mask_null_events", "hide null padding events inside the chain Transformer"),
    model_switch("exclude_null_positions", "drop null padding events from chain attention"),
    model_switch("include_null_slots", "score empty candidate slots against an all-null chain"),
    value("batch_size", "INT", "samples per optimizer step"),
    value("lr_main", "RATE", "Adam step size"),
    value("lr_text", "RATE", "Adam step size for the text encoder"),
    value("lambda", "FACTOR", "L2 factor"),
    value("epochs", "INT", "maximum number of epochs"),
    value("beta1", "FLOAT", "Adam first-moment decay"),
    value("beta2", "FLOAT", "Adam second-moment decay"),
    value("adam_eps", "FLOAT", "Adam denominator offset"),
    value("target_accuracy", "FRACTION", "stop once dev accuracy reaches this"),
];

pub fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub threads: usize,
    pub mask: MaskSet,
    pub task: Task,
    pub n_samples: usize,
    pub explain: bool,
    pub axis: Option<Axis>,
    pub min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            corpus: None,
            dev: None,
            out: None,
            checkpoint: None,
            vocab: None,
            threads: 1,
            mask: MaskSet::none(),
            task: Task::Multichain,
            n_samples: 1000,
            explain: false,
            axis: None,
            min_count: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "corpus" => self.corpus = Some(v.into()),
            "dev" => self.dev = Some(v.into()),
            "out" => self.out = Some(v.into()),
            "checkpoint" => self.checkpoint = Some(v.into()),
            "vocab" => self.vocab = Some(v.into()),
            "seed" => t.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "mask" => self.mask = v.parse()?,
            "task" => self.task = v.parse()?,
            "n_samples" => self.n_samples = parse(key, v)?,
            "explain" => self.explain = parse_bool(key, v)?,
            "axis" => self.axis = Some(v.parse()?),
            "min_count" => self.min_count = parse(key, v)?,
            "score" => m.score_variant = v.parse()?,
            "attention" => m.attention_variant = v.parse()?,
            "single_chain" => m.multi_chain = !parse_bool(key, v)?,
            "no_text" => m.use_text = !parse_bool(key, v)?,
            "n" => m.n = parse(key, v)?,
            "d_w" => m.d_w = parse(key, v)?,
            "d_e" => m.d_e = parse(key, v)?,
            "chain_layers" => m.chain_layers = parse(key, v)?,
            "chain_heads" => m.chain_heads = parse(key, v)?,
            "chain_ffn" => m.chain_ffn = parse(key, v)?,
            "text_layers" => m.text_layers = parse(key, v)?,
            "text_heads" => m.text_heads = parse(key, v)?,
            "text_ffn" => m.text_ffn = parse(key, v)?,
            "max_text_len" => m.max_text_len = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "mask_null_events" => m.mask_null_events = parse_bool(key, v)?,
            "exclude_null_positions" => m.exclude_null_positions = parse_bool(key, v)?,
            "include_null_slots" => m.include_null_slots = parse_bool(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "lr_main" => t.lr_main = parse(key, v)?,
            "lr_text" => t.lr_text = parse(key, v)?,
            "lambda" => t.lambda = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "adam_eps" => t.eps = parse(key, v)?,
            "target_accuracy" => t.target_accuracy = Some(parse(key, v)?),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

/// The model keys of `cfg` as a `key = value` document.
pub fn model_to_text(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    let b = |x: bool| if x { "true" } else { "false" };
    let _ = writeln!(s, "score = {}", cfg.score_variant);
    let _ = writeln!(s, "attention = {}", cfg.attention_variant);
    let _ = writeln!(s, "single_chain = {}", b(!cfg.multi_chain));
    let _ = writeln!(s, "no_text = {}", b(!cfg.use_text));
    for (k, v) in [
        ("n", cfg.n),
        ("d_w", cfg.d_w),
        ("d_e", cfg.d_e),
        ("chain_layers", cfg.chain_layers),
        ("chain_heads", cfg.chain_heads),
        ("chain_ffn", cfg.chain_ffn),
        ("text_layers", cfg.text_layers),
        ("text_heads", cfg.text_heads),
        ("text_ffn", cfg.text_ffn),
        ("max_text_len", cfg.max_text_len),
    ] {
        let _ = writeln!(s, "{k} = {v}");
    }
    let _ = writeln!(s, "dropout = {}", cfg.dropout);
    let _ = writeln!(s, "mask_null_events = {}", b(cfg.mask_null_events));
    let _ = writeln!(s, "exclude_null_positions = {}", b(cfg.exclude_null_positions));
    let _ = writeln!(s, "include_null_slots = {}", b(cfg.include_null_slots));
    s
}

/// Reads a document written by `model_to_text`; other keys are rejected.
pub fn model_from_text(text: &str) -> Result<ModelConfig> {
    let mut rc = RunConfig { model: ModelConfig::default(), ..RunConfig::default() };
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let k = line.split_once('=').map(|(k, _)| k.trim()).unwrap_or(line);
        if !key(k).is_some_and(|k| k.model) {
            return Err(Error::Config(format!("{k:?} is not a model key")));
        }
    }
    rc.apply_text(text)?;
    rc.model.validate()?;
    Ok(rc.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AttentionVariant, ScoreVariant};

    #[test]
    fn every_key_is_settable() {
        for k in KEYS {
            let v = match (k.kind, k.name) {
                (Kind::Switch, _) => "true",
                (_, "score") => "L",
                (_, "attention") => "additive",
                (_, "mask") => "V,N",
                (_, "task") => "text",
                (_, "axis") => "mask_set",
                (_, "corpus" | "dev" | "out" | "checkpoint" | "vocab") => "x.jsonl",
                (
                    _,
                    "dropout" | "lr_main" | "lr_text" | "lambda" | "beta1" | "beta2" | "adam_eps" | "target_accuracy",
                ) => "0.5",
                _ => "3",
            };
            RunConfig::default().set(k.name, v).unwrap_or_else(|e| panic!("{}: {e}", k.name));
        }
        let mut names: Vec<_> = KEYS.iter().map(|k| k.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), KEYS.len());
    }

    #[test]
    fn file_parsing_and_errors() {
        let mut rc = RunConfig::default();
        rc.apply_text("# tiny\nd_e = 8\nscore=M  # trailing\n\nsingle_chain = true\n").unwrap();
        assert_eq!(rc.model.d_e, 8);
        assert_eq!(rc.model.score_variant, ScoreVariant::M);
        assert!(!rc.model.multi_chain);
        let err = rc.apply_text("d_e = 8\nwidth = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("width"));
        assert!(rc.apply_text("d_e 8").is_err());
        assert!(rc.apply_text("no_text = yes").is_err());
    }

    #[test]
    fn model_text_round_trip() {
        let cfg = ModelConfig {
            attention_variant: AttentionVariant::Avg,
            use_text: false,
            dropout: 0.25,
            include_null_slots: true,
            ..ModelConfig::tiny()
        };
        assert_eq!(model_from_text(&model_to_text(&cfg)).unwrap(), cfg);
        assert!(model_from_text("epochs = 3").is_err());
    }
}
