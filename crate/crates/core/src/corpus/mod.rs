//! Corpus file format, vocabulary, sentence conversion and synthetic data.

pub mod schema;
pub mod synth;
pub mod text;
pub mod vocab;

pub use schema::{parse_corpus, read_corpus, write_corpus, CANDIDATES};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus, Task};
pub use text::{convert_sentence, encode_tokens, mask_constituents, MaskSet};
pub use vocab::{build_vocabulary, Vocabulary};
