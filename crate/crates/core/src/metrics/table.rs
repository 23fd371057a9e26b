use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{bleu, trace_lagging, AlUnits, BleuOptions};
use crate::encoding::StrategyKind;
use crate::error::{Error, Result};
use crate::online::DecodeTrace;

pub const CSV_HEADER: &str = "strategy,k,s,N,segmentation,BLEU,AL_ms,frames_processed,wall_ns";

/// Identifies one simulated configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub strategy: StrategyKind,
    pub k: usize,
    pub s: usize,
    pub n: usize,
    pub segmentation: String,
}

impl RunKey {
    /// File stem for this configuration's trace log.
    pub fn file_stem(&self) -> String {
        let mut seg = String::new();
        for c in self.segmentation.chars() {
            let c = if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' };
            if !(c == '_' && seg.ends_with('_')) {
                seg.push(c);
            }
        }
        let seg = seg.trim_end_matches('_');
        format!("{}_{}_k{}_s{}_N{}", self.strategy, seg, self.k, self.s, self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub key: RunKey,
    pub bleu: f64,
    /// Mean AL over utterances with a non-empty hypothesis.
    pub al_ms: f64,
    pub frames_processed: u64,
    pub wall_ns: u64,
    /// Utterances left out of BLEU/AL for lack of a reference.
    pub missing_refs: usize,
    /// Utterances left out of AL for an empty hypothesis.
    pub empty_hyps: usize,
}

impl TradeoffRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.3},{},{}",
            self.key.strategy,
            self.key.k,
            self.key.s,
            self.key.n,
            self.key.segmentation,
            self.bleu,
            self.al_ms,
            self.frames_processed,
            self.wall_ns
        )
    }
}

/// Scoring knobs shared by every row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreOptions {
    pub units: AlUnits,
    pub frame_ms: f64,
    pub bleu: BleuOptions,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            units: AlUnits::Words,
            frame_ms: 10.0,
            bleu: BleuOptions::default(),
        }
    }
}

/// Corpus BLEU and mean AL of one configuration's traces.
pub fn tradeoff_row(
    key: RunKey,
    traces: &[DecodeTrace],
    refs: &HashMap<String, String>,
    opts: &ScoreOptions,
) -> Result<TradeoffRow> {
    let mut hyps = Vec::new();
    let mut matched = Vec::new();
    let mut als = Vec::new();
    let mut missing = 0;
    let mut empty = 0;
    for t in traces {
        let Some(r) = refs.get(&t.utt) else {
            missing += 1;
            continue;
        };
        hyps.push(t.hypothesis.as_str());
        matched.push(r.as_str());
        let source_ms = t.frames_read() as f64 * opts.frame_ms;
        match trace_lagging(t, r, source_ms, opts.units)? {
            Some(al) => als.push(al),
            None => empty += 1,
        }
    }
    if missing > 0 {
        log::warn!(
            "{}: {missing} trace(s) without a reference were skipped",
            key.file_stem()
        );
    }
    if empty > 0 {
        log::warn!("{}: {empty} empty hypothesis(es) left out of AL", key.file_stem());
    }
    if hyps.is_empty() {
        return Err(Error::Metric(format!("{}: no trace has a reference", key.file_stem())));
    }
    let score = bleu(&hyps, &matched, opts.bleu)?;
    let al_ms = if als.is_empty() {
        f64::NAN
    } else {
        als.iter().sum::<f64>() / als.len() as f64
    };
    Ok(TradeoffRow {
        key,
        bleu: score,
        al_ms,
        frames_processed: traces.iter().map(|t| t.cost.frames_processed).sum(),
        wall_ns: traces.iter().map(|t| t.cost.wall_ns).sum(),
        missing_refs: missing,
        empty_hyps: empty,
    })
}

pub fn to_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. A constant input
/// has no rank order and yields 0.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Metric(
            "spearman needs two equal-length series of length >= 2".into(),
        ));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
