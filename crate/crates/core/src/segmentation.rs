//! Read schedules: where each READ of the controller ends.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Policy that produced a plan, with its parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum Policy {
    Fixed { k: usize, s: usize },
    OracleWords { k: usize },
    Random { low: usize, high: usize, seed: u64 },
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Fixed { .. } => f.write_str("fixed"),
            Policy::OracleWords { .. } => f.write_str("oracle-words"),
            Policy::Random { low, high, .. } => write!(f, "random[{low}-{high}]"),
        }
    }
}

/// Cumulative frame boundaries `b_1 < b_2 < … < b_n = T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationPlan {
    boundaries: Vec<usize>,
    policy: Policy,
}

impl SegmentationPlan {
    pub fn new(boundaries: Vec<usize>, policy: Policy) -> Result<Self> {
        if boundaries.is_empty() || boundaries[0] == 0 {
            return Err(Error::Contract("a plan needs a positive first boundary".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract(format!(
                "boundaries not strictly increasing: {boundaries:?}"
            )));
        }
        Ok(SegmentationPlan { boundaries, policy })
    }

    /// One read of the whole utterance.
    pub fn single(t: usize) -> Result<Self> {
        fixed_plan(t, t, 1)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn total_frames(&self) -> usize {
        *self.boundaries.last().expect("non-empty")
    }

    /// Frames of the first read.
    pub fn first_read(&self) -> usize {
        self.boundaries[0]
    }

    /// Frames added by each read.
    pub fn segments(&self) -> Vec<usize> {
        let mut prev = 0;
        self.boundaries
            .iter()
            .map(|&b| {
                let s = b - prev;
                prev = b;
                s
            })
            .collect()
    }
}

/// `k` frames first (or `s` when `k = 0`), then `s` at a time; the last read
/// is clamped to `t`.
pub fn fixed_plan(t: usize, k: usize, s: usize) -> Result<SegmentationPlan> {
    if t == 0 {
        return Err(Error::EmptyUtterance);
    }
    if s == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let mut b = vec![if k == 0 { s } else { k }.min(t)];
    while b[b.len() - 1] < t {
        let next = (b[b.len() - 1] + s).min(t);
        b.push(next);
    }
    SegmentationPlan::new(b, Policy::Fixed { k, s })
}

/// Frame extent `[start, end)` of one word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub start: usize,
    pub end: usize,
}

/// Reads whole words: the first read ends at the first word end reaching
/// `k`, then one word per read. Frames after the last word join the last read.
///
/// Returns the plan and the number of gaps between consecutive words (or
/// before the first word); gaps are read with the following word.
pub fn oracle_word_plan(t: usize, words: &[WordSpan], k: usize) -> Result<(SegmentationPlan, usize)> {
    if t == 0 {
        return Err(Error::EmptyUtterance);
    }
    if words.is_empty() {
        return Err(Error::Contract("word boundary row is empty".into()));
    }
    let mut gaps = 0;
    let mut prev_end = 0;
    for w in words {
        if w.start >= w.end || w.start < prev_end || w.end > t {
            return Err(Error::Contract(format!(
                "word span {}:{} overlaps its neighbour or exceeds {t} frames",
                w.start, w.end
            )));
        }
        if w.start > prev_end {
            gaps += 1;
        }
        prev_end = w.end;
    }
    let mut b: Vec<usize> = Vec::with_capacity(words.len());
    for w in words {
        if b.is_empty() && w.end < k {
            continue;
        }
        b.push(w.end);
    }
    match b.last_mut() {
        Some(last) => *last = t,
        None => b.push(t),
    }
    if gaps > 0 {
        log::warn!("{gaps} gap(s) between word boundaries; gap frames are read with the next word");
    }
    Ok((SegmentationPlan::new(b, Policy::OracleWords { k })?, gaps))
}

/// Chunk sizes drawn uniformly from `[low, high]` until the utterance is
/// covered; the last chunk is cut to end exactly at `t`.
pub fn random_plan(t: usize, low: usize, high: usize, seed: u64) -> Result<SegmentationPlan> {
    if t == 0 {
        return Err(Error::EmptyUtterance);
    }
    if low == 0 || low > high {
        return Err(Error::Config(format!(
            "random bounds need 1 <= low <= high, got [{low}, {high}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Vec::new();
    let mut g = 0;
    while g < t {
        g = (g + rng.gen_range(low..=high)).min(t);
        b.push(g);
    }
    SegmentationPlan::new(b, Policy::Random { low, high, seed })
}

/// Word extents per utterance, as read from a boundary file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WordBoundaryTable {
    rows: BTreeMap<String, Vec<WordSpan>>,
}

impl WordBoundaryTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, utt: impl Into<String>, words: Vec<WordSpan>) {
        self.rows.insert(utt.into(), words);
    }

    pub fn get(&self, utt: &str) -> Option<&[WordSpan]> {
        self.rows.get(utt).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Parses `<utt> TAB start:end[,start:end]*` lines; blank lines are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            what: "boundary file",
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (utt, spans) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "expected <utt>\\t<spans>".into()))?;
            let words = spans
                .split(',')
                .map(|sp| {
                    let (a, b) = sp
                        .split_once(':')
                        .ok_or_else(|| err(i + 1, format!("span {sp:?} lacks ':'")))?;
                    let parse = |v: &str| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|e| err(i + 1, format!("bad frame index {v:?}: {e}")))
                    };
                    Ok(WordSpan {
                        start: parse(a)?,
                        end: parse(b)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.insert(utt, words);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (utt, words) in &self.rows {
            let spans: Vec<String> = words.iter().map(|w| format!("{}:{}", w.start, w.end)).collect();
            out.push_str(utt);
            out.push('\t');
            out.push_str(&spans.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
