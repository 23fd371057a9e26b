use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Word alignment of one sentence pair, with 1-based `(source, target)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentSet {
    pub utt: String,
    pub src_len: usize,
    pub tgt_len: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentSet {
    pub fn new(utt: impl Into<String>, src_len: usize, tgt_len: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let utt = utt.into();
        if let Some(&(i, t)) = pairs
            .iter()
            .find(|&&(i, t)| i == 0 || t == 0 || i > src_len || t > tgt_len)
        {
            return Err(Error::Metric(format!(
                "{utt}: pair ({i}, {t}) outside 1..={src_len} x 1..={tgt_len}"
            )));
        }
        Ok(AlignmentSet {
            utt,
            src_len,
            tgt_len,
            pairs,
        })
    }

    /// Parses one fast-align line of 0-based `i-j` pairs.
    pub fn parse_line(utt: impl Into<String>, line: &str, src_len: usize, tgt_len: usize) -> Result<Self> {
        let utt = utt.into();
        let mut pairs = Vec::new();
        for tok in line.split_whitespace() {
            let parsed = tok
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
            let (i, j) = parsed.ok_or_else(|| Error::Metric(format!("{utt}: bad alignment pair {tok:?}")))?;
            pairs.push((i + 1, j + 1));
        }
        Self::new(utt, src_len, tgt_len, pairs)
    }

    pub fn to_line(&self) -> String {
        let v: Vec<String> = self.pairs.iter().map(|(i, t)| format!("{}-{}", i - 1, t - 1)).collect();
        v.join(" ")
    }
}

/// Reads a fast-align file; line `n` belongs to `utts[n]`, given as
/// `(id, source tokens, target tokens)`.
pub fn read_alignments(path: &Path, utts: &[(String, usize, usize)]) -> Result<Vec<AlignmentSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != utts.len() {
        return Err(Error::Parse {
            what: "alignment file",
            path: path.to_path_buf(),
            line: lines.len(),
            msg: format!("{} lines for {} utterances", lines.len(), utts.len()),
        });
    }
    lines
        .iter()
        .zip(utts)
        .enumerate()
        .map(|(n, (line, (utt, sl, tl)))| {
            AlignmentSet::parse_line(utt.clone(), line, *sl, *tl).map_err(|e| Error::Parse {
                what: "alignment file",
                path: path.to_path_buf(),
                line: n + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyScore {
    pub utt: String,
    pub ld: f64,
    pub tau: usize,
}

/// `z_t`: the furthest source position needed by target positions `1..=t`,
/// starting from `z_0 = 0`. Index 0 of the result is `z_1`.
pub fn source_frontier(align: &AlignmentSet) -> Vec<usize> {
    let mut best = vec![0usize; align.tgt_len + 1];
    for &(i, t) in &align.pairs {
        best[t] = best[t].max(i);
    }
    let mut z = Vec::with_capacity(align.tgt_len);
    let mut run = 0;
    for &b in &best[1..] {
        run = run.max(b);
        z.push(run);
    }
    z
}

/// Lagging Difficulty:
/// `LD = (1/τ) Σ_{t=1..τ} (z_t − (|x|/|y|)(t−1))`, `τ = min{t : z_t = |x|}`
/// (all target positions when the last source word is never reached).
pub fn lagging_difficulty(align: &AlignmentSet) -> Result<DifficultyScore> {
    if align.pairs.is_empty() {
        return Err(Error::Metric(format!("{}: no aligned pairs", align.utt)));
    }
    let z = source_frontier(align);
    let x = align.src_len;
    let tau = z.iter().position(|&v| v == x).map_or(z.len(), |i| i + 1);
    let rate = x as f64 / align.tgt_len as f64;
    let sum: f64 = z[..tau]
        .iter()
        .enumerate()
        .map(|(t, &zt)| zt as f64 - rate * t as f64)
        .sum();
    Ok(DifficultyScore {
        utt: align.utt.clone(),
        ld: sum / tau as f64,
        tau,
    })
}

/// The `n` hardest (highest LD) and `n` easiest utterance ids; ties are
/// broken by id.
pub fn extract_subsets(scores: &[DifficultyScore], n: usize) -> Result<(Vec<String>, Vec<String>)> {
    if n > scores.len() {
        return Err(Error::Metric(format!("asked for {n} of {} utterances", scores.len())));
    }
    let by = |a: &&DifficultyScore, b: &&DifficultyScore, desc: bool| {
        let o = a.ld.partial_cmp(&b.ld).unwrap_or(Ordering::Equal);
        let o = if desc { o.reverse() } else { o };
        o.then_with(|| a.utt.cmp(&b.utt))
    };
    let mut hard: Vec<&DifficultyScore> = scores.iter().collect();
    hard.sort_by(|a, b| by(a, b, true));
    let mut easy: Vec<&DifficultyScore> = scores.iter().collect();
    easy.sort_by(|a, b| by(a, b, false));
    let ids = |v: Vec<&DifficultyScore>| v.into_iter().take(n).map(|s| s.utt.clone()).collect();
    Ok((ids(hard), ids(easy)))
}
