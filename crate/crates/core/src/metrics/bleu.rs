use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;
const EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuOptions {
    /// Replace zero match counts by a tiny epsilon instead of zeroing the score.
    pub smoothing: bool,
    /// Drop the brevity penalty.
    pub no_brevity_penalty: bool,
}

/// Corpus BLEU with its ingredients.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    /// `(matches, candidates)` per n-gram order.
    pub counts: [(u64, u64); MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU over pre-tokenized sentences: clipped n-gram precisions
/// for n = 1..4 pooled over the corpus, geometric mean, times the brevity
/// penalty `exp(min(0, 1 − r/c))`. Orders for which the hypotheses contain no
/// n-gram at all are left out of the mean.
pub fn bleu_tokens(hyps: &[Vec<&str>], refs: &[Vec<&str>], opts: BleuOptions) -> Result<BleuScore> {
    if hyps.is_empty() {
        return Err(Error::Metric("BLEU needs at least one hypothesis".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Metric(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut counts = [(0u64, 0u64); MAX_ORDER];
    let (mut c, mut r) = (0u64, 0u64);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len() as u64;
        r += rf.len() as u64;
        for (n, slot) in counts.iter_mut().enumerate() {
            let hc = ngram_counts(h, n + 1);
            let rc = ngram_counts(rf, n + 1);
            for (g, &k) in &hc {
                slot.0 += k.min(rc.get(g).copied().unwrap_or(0));
                slot.1 += k;
            }
        }
    }
    let brevity_penalty = if opts.no_brevity_penalty || c == 0 {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).min(0.0).exp()
    };
    let used: Vec<_> = counts.iter().filter(|(_, cand)| *cand > 0).collect();
    let score = if used.is_empty() {
        0.0
    } else {
        let mut log_sum = 0.0;
        let mut zero = false;
        for &&(m, cand) in &used {
            let m = if m == 0 && opts.smoothing { EPSILON } else { m as f64 };
            if m == 0.0 {
                zero = true;
                break;
            }
            log_sum += (m / cand as f64).ln();
        }
        if zero {
            0.0
        } else {
            brevity_penalty * (log_sum / used.len() as f64).exp()
        }
    };
    Ok(BleuScore {
        score,
        counts,
        brevity_penalty,
        hyp_len: c,
        ref_len: r,
    })
}

/// Whitespace-tokenizes both sides and scores them with [`bleu_tokens`].
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[R], opts: BleuOptions) -> Result<f64> {
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| s.as_ref().split_whitespace().collect()).collect();
    let r: Vec<Vec<&str>> = refs.iter().map(|s| s.as_ref().split_whitespace().collect()).collect();
    Ok(bleu_tokens(&h, &r, opts)?.score)
}
