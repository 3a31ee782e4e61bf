//! Corpus files, the synthetic topic corpus, and model checkpoints.

mod checkpoint;
mod corpus;
mod synth;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, storage_rounded, CheckpointHeader,
    ManifestEntry, MAGIC, VERSION,
};
pub use corpus::{corpus_to_jsonl, load_corpus, parse_corpus, save_corpus};
pub use synth::{generate_synthetic, SynthConfig, SyntheticCorpus};
