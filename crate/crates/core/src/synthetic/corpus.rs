use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::AlignmentSet;
use crate::nn::Vocab;
use crate::segmentation::WordSpan;

const STREAM_PROTOTYPES: u64 = 1;
const STREAM_CIPHER: u64 = 2;
const STREAM_REVERSAL: u64 = 3;
const STREAM_TEXT: u64 = 4;
const STREAM_NOISE: u64 = 5;

const MIN_WORD: usize = 2;
const MAX_WORD: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Letters; the space character separates words and is added implicitly.
    pub alphabet: String,
    pub frames_per_symbol: usize,
    pub feature_dim: usize,
    pub noise: f32,
    /// Utterance length in symbols, spaces included.
    pub min_len: usize,
    pub max_len: usize,
    /// Share of utterances whose target word order is reversed.
    pub reversal_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            alphabet: ('a'..='t').collect(),
            frames_per_symbol: 8,
            feature_dim: 16,
            noise: 0.1,
            min_len: 5,
            max_len: 40,
            reversal_fraction: 0.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let letters: Vec<char> = self.alphabet.chars().collect();
        if letters.is_empty() || letters.iter().any(|c| c.is_whitespace()) {
            return Err(Error::Config(
                "alphabet must be non-empty and contain no whitespace".into(),
            ));
        }
        let mut sorted = letters.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != letters.len() {
            return Err(Error::Config("alphabet has repeated symbols".into()));
        }
        if self.frames_per_symbol < 4 {
            return Err(Error::Config("each symbol needs at least 4 frames".into()));
        }
        if self.feature_dim == 0 || self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(
                "feature dim and length range must be positive and ordered".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.reversal_fraction) {
            return Err(Error::Config("reversal fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Output vocabulary: the alphabet plus space.
    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.alphabet.chars().chain(std::iter::once(' ')))
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Letter-for-letter substitution; space maps to itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cipher {
    map: BTreeMap<char, char>,
}

impl Cipher {
    pub fn from_spec(spec: &SyntheticSpec) -> Self {
        let letters: Vec<char> = spec.alphabet.chars().collect();
        let mut image = letters.clone();
        image.shuffle(&mut spec.rng(STREAM_CIPHER));
        Cipher {
            map: letters.into_iter().zip(image).collect(),
        }
    }

    pub fn apply(&self, c: char) -> char {
        self.map.get(&c).copied().unwrap_or(c)
    }

    pub fn encipher(&self, s: &str) -> String {
        s.chars().map(|c| self.apply(c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub source: String,
    pub target: String,
    /// `num_frames × feature_dim`, row-major.
    pub frames: Vec<f32>,
    pub num_frames: usize,
    /// One span per source word; each includes the following space.
    pub words: Vec<WordSpan>,
    /// 0-based `(source word, target word)` pairs.
    pub alignment: Vec<(usize, usize)>,
    pub reversed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: SyntheticSpec,
    pub cipher: Cipher,
    pub utterances: Vec<Utterance>,
}

impl Utterance {
    /// Word alignment in the 1-based form used by the difficulty metric.
    pub fn alignment_set(&self) -> Result<AlignmentSet> {
        let pairs = self.alignment.iter().map(|&(i, j)| (i + 1, j + 1)).collect();
        AlignmentSet::new(
            self.id.clone(),
            self.source.split(' ').count(),
            self.target.split(' ').count(),
            pairs,
        )
    }
}

impl Corpus {
    pub fn vocab(&self) -> Result<Vocab> {
        self.spec.vocab()
    }

    /// Training and held-out parts: the held-out set is the last
    /// `fraction` of utterances by id (at least one when there are two or more).
    pub fn split(&self, fraction: f64) -> (&[Utterance], &[Utterance]) {
        let n = self.utterances.len();
        let mut held = (n as f64 * fraction).round() as usize;
        if fraction > 0.0 && n >= 2 {
            held = held.clamp(1, n - 1);
        }
        self.utterances.split_at(n - held.min(n))
    }
}

/// Per-symbol mean vectors; space is silent.
pub fn prototypes(spec: &SyntheticSpec) -> BTreeMap<char, Vec<f32>> {
    let mut rng = spec.rng(STREAM_PROTOTYPES);
    let mut m: BTreeMap<char, Vec<f32>> = spec
        .alphabet
        .chars()
        .map(|c| (c, (0..spec.feature_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
        .collect();
    m.insert(' ', vec![0.0; spec.feature_dim]);
    m
}

/// Amplitude of frame `j` within a symbol: rises and falls so consecutive
/// identical symbols stay separable.
pub fn envelope(j: usize, fps: usize) -> f32 {
    0.5 + 0.5 * (std::f32::consts::PI * (j as f32 + 0.5) / fps as f32).sin()
}

fn random_text(rng: &mut ChaCha8Rng, letters: &[char], len: usize) -> String {
    let mut s = String::with_capacity(len);
    let mut used = 0;
    loop {
        let remaining = len - used;
        let w = if remaining <= MAX_WORD + 1 {
            remaining
        } else {
            rng.gen_range(MIN_WORD..=MAX_WORD)
        };
        for _ in 0..w {
            s.push(*letters.choose(rng).expect("non-empty alphabet"));
        }
        used += w;
        if used == len {
            return s;
        }
        s.push(' ');
        used += 1;
    }
}

/// Renders `source` into frames, with noise drawn from `rng`.
pub fn render(spec: &SyntheticSpec, protos: &BTreeMap<char, Vec<f32>>, source: &str, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let fps = spec.frames_per_symbol;
    let mut out = Vec::with_capacity(source.chars().count() * fps * spec.feature_dim);
    for c in source.chars() {
        let p = &protos[&c];
        for j in 0..fps {
            let a = envelope(j, fps);
            for &v in p {
                let n: f32 = StandardNormal.sample(rng);
                out.push(v * a + spec.noise * n);
            }
        }
    }
    out
}

/// Frame extents of whitespace-separated words, each absorbing the space
/// that follows it.
pub fn word_spans(source: &str, fps: usize) -> Vec<WordSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    let chars: Vec<char> = source.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let end_of_word = c == ' ' || i + 1 == chars.len();
        if end_of_word {
            let end = (i + 1) * fps;
            spans.push(WordSpan { start, end });
            start = end;
        }
    }
    spans
}

pub fn generate_corpus(spec: &SyntheticSpec, n: usize) -> Result<Corpus> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("corpus needs at least one utterance".into()));
    }
    let letters: Vec<char> = spec.alphabet.chars().collect();
    let protos = prototypes(spec);
    let cipher = Cipher::from_spec(spec);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut spec.rng(STREAM_REVERSAL));
    let n_rev = (spec.reversal_fraction * n as f64).round() as usize;
    let mut reversed = vec![false; n];
    for &i in &order[..n_rev] {
        reversed[i] = true;
    }
    let mut text_rng = spec.rng(STREAM_TEXT);
    let mut noise_rng = spec.rng(STREAM_NOISE);
    let mut utterances = Vec::with_capacity(n);
    for (i, &rev) in reversed.iter().enumerate() {
        let len = text_rng.gen_range(spec.min_len..=spec.max_len);
        let source = random_text(&mut text_rng, &letters, len);
        let words: Vec<String> = source.split(' ').map(|w| cipher.encipher(w)).collect();
        let nw = words.len();
        let (target, alignment) = if rev {
            let t: Vec<&str> = words.iter().rev().map(String::as_str).collect();
            (t.join(" "), (0..nw).map(|j| (nw - 1 - j, j)).collect())
        } else {
            (words.join(" "), (0..nw).map(|j| (j, j)).collect())
        };
        let frames = render(spec, &protos, &source, &mut noise_rng);
        utterances.push(Utterance {
            id: format!("utt{i:05}"),
            num_frames: len * spec.frames_per_symbol,
            words: word_spans(&source, spec.frames_per_symbol),
            source,
            target,
            frames,
            alignment,
            reversed: rev,
        });
    }
    Ok(Corpus {
        spec: spec.clone(),
        cipher,
        utterances,
    })
}
