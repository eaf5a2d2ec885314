//! Variant sweeps: one training run per cell (or one checkpoint evaluated
//! under each mask), reported with the accuracy gap to the best cell.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::info;

use crate::config::{AttentionVariant, ModelConfig, ScoreVariant, TrainConfig};
use crate::corpus::text::MaskSet;
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::Model;
use crate::nn::params::ParamStore;
use crate::prepare::prepare_corpus;
use crate::train::{evaluate_accuracy, fit};
use crate::types::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Score,
    Attention,
    Mask,
    ChainText,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Score, Axis::Attention, Axis::Mask, Axis::ChainText];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Score => "score_variant",
            Axis::Attention => "attention_variant",
            Axis::Mask => "mask_set",
            Axis::ChainText => "chain_text",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score_variant" | "score" => Ok(Axis::Score),
            "attention_variant" | "attention" => Ok(Axis::Attention),
            "mask_set" | "mask" => Ok(Axis::Mask),
            "chain_text" => Ok(Axis::ChainText),
            other => Err(Error::Config(format!(
                "unknown ablation axis {other:?} (expected score_variant|attention_variant|mask_set|chain_text)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Label and model configuration of every training cell on `axis`.
/// The mask axis has a single training cell (the base configuration).
pub fn cells(axis: Axis, base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    match axis {
        Axis::Score => ScoreVariant::ALL
            .iter()
            .map(|&v| (v.label().to_string(), ModelConfig { score_variant: v, ..base.clone() }))
            .collect(),
        Axis::Attention => AttentionVariant::ALL
            .iter()
            .map(|&v| (v.as_str().replace('_', "-"), ModelConfig { attention_variant: v, ..base.clone() }))
            .collect(),
        Axis::Mask => vec![("All".to_string(), base.clone())],
        Axis::ChainText => [(false, false), (true, false), (false, true), (true, true)]
            .iter()
            .map(|&(multi, text)| {
                let label =
                    format!("{}/{}", if multi { "multi" } else { "single" }, if text { "text" } else { "no-text" });
                (label, ModelConfig { multi_chain: multi, use_text: text, ..base.clone() })
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: String,
    pub accuracy: f64,
    /// `accuracy - best accuracy`, so never positive.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
    /// First row with the highest accuracy.
    pub best: usize,
}

impl AblationReport {
    pub fn from_accuracies(axis: Axis, cells: Vec<(String, f64)>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Empty("ablation cells"));
        }
        let mut best = 0;
        for (i, (_, acc)) in cells.iter().enumerate() {
            if *acc > cells[best].1 {
                best = i;
            }
        }
        let top = cells[best].1;
        let rows =
            cells.into_iter().map(|(cell, accuracy)| AblationRow { cell, accuracy, delta: accuracy - top }).collect();
        Ok(AblationReport { axis, rows, best })
    }

    /// `cell,accuracy,delta`; the best cell's delta is written as `/`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "cell,accuracy,delta")?;
        for (i, r) in self.rows.iter().enumerate() {
            if i == self.best {
                writeln!(w, "{},{},/", r.cell, r.accuracy)?;
            } else {
                writeln!(w, "{},{},{}", r.cell, r.accuracy, r.delta)?;
            }
        }
        Ok(())
    }
}

/// Data shared by every cell. Cells are selected and scored on `eval`.
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub train: &'a [Sample],
    pub eval: &'a [Sample],
    pub vocab: &'a Vocabulary,
}

/// Runs the sweep. For the mask axis a trained `checkpoint` (model and
/// parameters) is reused when given; otherwise the base configuration is
/// trained once.
pub fn run_ablation(
    axis: Axis,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: AblationData<'_>,
    checkpoint: Option<(&Model, &ParamStore)>,
    exec: Execution,
) -> Result<AblationReport> {
    if data.eval.is_empty() {
        return Err(Error::Empty("no samples"));
    }
    if axis == Axis::Mask {
        return mask_sweep(base, train_cfg, data, checkpoint, exec);
    }
    let mut results = Vec::new();
    for (label, cfg) in cells(axis, base) {
        let (model, params) = train_cell(&cfg, train_cfg, data, exec)?;
        let eval = prepare_corpus(data.eval, data.vocab, &cfg, &MaskSet::none(), exec)?;
        let acc = evaluate_accuracy(&model, &params, &eval, exec)?;
        info!("{axis} {label}: accuracy {acc:.4}");
        results.push((label, acc));
    }
    AblationReport::from_accuracies(axis, results)
}

fn train_cell(
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: AblationData<'_>,
    exec: Execution,
) -> Result<(Model, ParamStore)> {
    let none = MaskSet::none();
    let train = prepare_corpus(data.train, data.vocab, cfg, &none, exec)?;
    let eval = prepare_corpus(data.eval, data.vocab, cfg, &none, exec)?;
    let (model, outcome) = fit(cfg, train_cfg, data.vocab.len(), &train, Some(&eval), exec)?;
    Ok((model, outcome.best))
}

fn mask_sweep(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    data: AblationData<'_>,
    checkpoint: Option<(&Model, &ParamStore)>,
    exec: Execution,
) -> Result<AblationReport> {
    let trained;
    let (model, params) = match checkpoint {
        Some((m, p)) => (m, p),
        None => {
            trained = train_cell(base, train_cfg, data, exec)?;
            (&trained.0, &trained.1)
        }
    };
    if !model.config.use_text {
        return Err(Error::Config("the mask sweep needs a text-enabled model".into()));
    }
    let mut results = Vec::new();
    for mask in std::iter::once(MaskSet::none()).chain(MaskSet::table_rows()) {
        let eval = prepare_corpus(data.eval, data.vocab, &model.config, &mask, exec)?;
        let acc = evaluate_accuracy(model, params, &eval, exec)?;
        info!("mask {}: accuracy {acc:.4}", mask.label());
        results.push((mask.label(), acc));
    }
    AblationReport::from_accuracies(Axis::Mask, results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_synthetic, SynthConfig, Task};
    use crate::corpus::vocab::build_vocabulary;

    #[test]
    fn axis_names_round_trip_and_unknown_axis_fails() {
        for a in Axis::ALL {
            assert_eq!(a.as_str().parse::<Axis>().unwrap(), a);
        }
        assert!("learning_rate".parse::<Axis>().is_err());
    }

    #[test]
    fn cell_sets_mirror_the_comparison_tables() {
        let base = ModelConfig::tiny();
        let labels = |a| cells(a, &base).into_iter().map(|(l, _)| l).collect::<Vec<_>>();
        assert_eq!(labels(Axis::Score), ["E-Score", "C-Score", "M-Score", "L-Score"]);
        assert_eq!(labels(Axis::Attention), ["scaled-dot", "dot", "additive", "avg"]);
        assert_eq!(labels(Axis::ChainText), ["single/no-text", "multi/no-text", "single/text", "multi/text"]);
    }

    #[test]
    fn delta_is_gap_to_best() {
        let r = AblationReport::from_accuracies(
            Axis::Score,
            vec![("a".into(), 0.5), ("b".into(), 0.75), ("c".into(), 0.25)],
        )
        .unwrap();
        assert_eq!(r.best, 1);
        assert_eq!(r.rows.iter().map(|x| x.delta).collect::<Vec<_>>(), [-0.25, 0.0, -0.5]);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "cell,accuracy,delta\na,0.5,-0.25\nb,0.75,/\nc,0.25,-0.5\n");
        assert!(AblationReport::from_accuracies(Axis::Score, vec![]).is_err());
    }

    #[test]
    fn mask_sweep_reuses_one_checkpoint() {
        let corpus = generate_synthetic(&SynthConfig::new(Task::Text, 8), 3).unwrap();
        let vocab = build_vocabulary(&corpus.samples, 1).unwrap();
        let cfg = ModelConfig::tiny();
        let (model, store) = Model::init(&cfg, vocab.len(), 1).unwrap();
        let data = AblationData { train: &corpus.samples, eval: &corpus.samples, vocab: &vocab };
        let tc = TrainConfig::default();
        let r = run_ablation(Axis::Mask, &cfg, &tc, data, Some((&model, &store)), Execution::Sequential).unwrap();
        let labels: Vec<&str> = r.rows.iter().map(|x| x.cell.as_str()).collect();
        assert_eq!(labels, ["All", "-V", "-N", "-J", "-R", "-V(self)", "-V(others)", "-V&N", "-V&R", "-N&J", "-R&J"]);
    }
}
