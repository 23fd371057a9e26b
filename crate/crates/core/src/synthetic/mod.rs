//! A desk-scale stand-in for speech translation data: character strings
//! rendered to noisy feature frames, translated by a letter cipher (optionally
//! with reversed word order), with exact word boundaries and alignments.

mod corpus;
mod io;
mod train;

pub use corpus::{envelope, generate_corpus, prototypes, render, word_spans, Cipher, Corpus, SyntheticSpec, Utterance};
pub use io::{load_corpus, load_features, load_lines, read_features, save_corpus, write_features, FeatureSequence};
pub use train::{
    batch_gradients, example_gradients, offline_bleu, train, EpochReport, Optimizer, OptimizerKind, TrainConfig,
};
