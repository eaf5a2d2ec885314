//! A trained model on disk: the parameter file plus two sidecars,
//! `<path>.cfg` (model keys) and `<path>.vocab`.

use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ModelConfig;
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::params::ParamStore;
use crate::runconfig::{model_from_text, model_to_text};

pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save_file(path)?;
        std::fs::write(sidecar(path, "cfg"), model_to_text(&self.config))?;
        let mut w = BufWriter::new(std::fs::File::create(sidecar(path, "vocab"))?);
        self.vocab.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let params = ParamStore::load_file(path)?;
        let cfg_path = sidecar(path, "cfg");
        let text = std::fs::read_to_string(&cfg_path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", cfg_path.display())))?;
        let config = model_from_text(&text)?;
        let vocab_path = sidecar(path, "vocab");
        let f = std::fs::File::open(&vocab_path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", vocab_path.display())))?;
        let vocab = Vocabulary::read(BufReader::new(f))?;
        Ok(Checkpoint { config, vocab, params })
    }

    /// Rebuilds the model, checking that every tensor has the expected shape.
    pub fn model(&self) -> Result<Model> {
        let model = Model::from_store(&self.config, &self.params)?;
        if model.vocab_size(&self.params) != self.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "word table has {} rows but the vocabulary has {} tokens",
                model.vocab_size(&self.params),
                self.vocab.len()
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_synthetic, SynthConfig, Task};
    use crate::corpus::vocab::build_vocabulary;

    #[test]
    fn round_trip_is_exact() {
        let corpus = generate_synthetic(&SynthConfig::new(Task::Combined, 4), 1).unwrap();
        let vocab = build_vocabulary(&corpus.samples, 1).unwrap();
        let config = ModelConfig::tiny();
        let (_, params) = Model::init(&config, vocab.len(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint { config: config.clone(), vocab: vocab.clone(), params: params.clone() };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back.vocab, vocab);
        assert_eq!(back.params, params);
        back.model().unwrap();
    }

    #[test]
    fn missing_sidecar_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ParamStore::new().save_file(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
