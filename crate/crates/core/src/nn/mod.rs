//! The speech translation network at configurable scale: a two-block VGG
//! front-end with 4× temporal downsampling, a stacked LSTM encoder (uni- or
//! bidirectional), and a two-layer LSTM decoder with additive attention over
//! the encoder outputs, emitting characters.

mod checkpoint;
mod decoder;
mod lstm;
mod params;
mod vgg;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use decoder::{
    attention_keys, decode_step, greedy_decode, sequence_loss, DecoderCache, DecoderState, Prediction, StepOutput,
};
pub use lstm::{encoder_forward, lstm_step, EncoderOutput, LayerState, LstmState, LstmVars};
pub use params::{AttentionWeights, ConvLayer, LstmWeights, ModelConfig, ModelParams, ParamVars, VggBlock};
pub use vgg::{encode_offline, vgg_forward, vgg_positions};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: usize = 3;

/// Output character vocabulary: three reserved ids followed by the symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
}

impl Vocab {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut symbols: Vec<char> = symbols.into_iter().collect();
        let n = symbols.len();
        symbols.sort_unstable();
        symbols.dedup();
        if symbols.len() != n || n == 0 {
            return Err(Error::Config("vocabulary symbols must be unique and non-empty".into()));
        }
        Ok(Vocab { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len() + SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.symbols.binary_search(&c).ok().map(|i| i + SPECIALS)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        id.checked_sub(SPECIALS).and_then(|i| self.symbols.get(i).copied())
    }

    pub fn encode(&self, s: &str) -> Result<Vec<usize>> {
        s.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| Error::Config(format!("symbol {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.symbol(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_roundtrip_and_specials() {
        let v = Vocab::new("ba ".chars()).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id(' '), Some(3));
        assert_eq!(v.decode(&v.encode("ab a").unwrap()), "ab a");
        assert_eq!(v.symbol(EOS), None);
        assert!(v.encode("z").is_err());
        assert!(Vocab::new("aa".chars()).is_err());
    }
}
