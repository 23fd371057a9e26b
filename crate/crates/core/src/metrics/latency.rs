use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::online::DecodeTrace;

/// Token granularity for Average Lagging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlUnits {
    /// Whitespace-delimited words; a word's delay is that of its last character.
    #[default]
    Words,
    Chars,
}

impl fmt::Display for AlUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlUnits::Words => "words",
            AlUnits::Chars => "chars",
        })
    }
}

impl FromStr for AlUnits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "words" => Ok(AlUnits::Words),
            "chars" => Ok(AlUnits::Chars),
            _ => Err(Error::Config(format!("AL units must be words or chars, got {s:?}"))),
        }
    }
}

/// Average Lagging:
/// `AL = (1/τ) Σ_{i=1..τ} (d_i − (i−1)·T/|y*|)` with `τ` the first index whose
/// delay reaches the source duration `T` (all tokens when none does).
pub fn average_lagging(delays: &[f64], source_ms: f64, ref_len: usize) -> Result<f64> {
    if ref_len == 0 {
        return Err(Error::Metric("reference length must be positive".into()));
    }
    if delays.is_empty() {
        return Err(Error::Metric("no emitted tokens".into()));
    }
    let tau = delays
        .iter()
        .position(|&d| d >= source_ms)
        .map_or(delays.len(), |i| i + 1);
    let rate = source_ms / ref_len as f64;
    let sum: f64 = delays[..tau]
        .iter()
        .enumerate()
        .map(|(i, &d)| d - i as f64 * rate)
        .sum();
    Ok(sum / tau as f64)
}

/// Number of reference tokens in the chosen units.
pub fn reference_len(reference: &str, units: AlUnits) -> usize {
    match units {
        AlUnits::Words => reference.split_whitespace().count(),
        AlUnits::Chars => reference.chars().count(),
    }
}

/// Per-token delays (ms) of a character-level trace, grouped into `units`.
pub fn token_delays(trace: &DecodeTrace, units: AlUnits) -> Vec<f64> {
    let delays = trace.delays_ms();
    match units {
        AlUnits::Chars => delays,
        AlUnits::Words => {
            let mut out = Vec::new();
            let mut pending = None;
            for (tok, d) in trace.tokens().into_iter().zip(delays) {
                if tok.chars().all(char::is_whitespace) {
                    out.extend(pending.take());
                } else {
                    pending = Some(d);
                }
            }
            out.extend(pending);
            out
        }
    }
}

/// AL of one trace against its reference; `None` for an empty hypothesis.
pub fn trace_lagging(trace: &DecodeTrace, reference: &str, source_ms: f64, units: AlUnits) -> Result<Option<f64>> {
    let delays = token_delays(trace, units);
    if delays.is_empty() {
        return Ok(None);
    }
    average_lagging(&delays, source_ms, reference_len(reference, units)).map(Some)
}
