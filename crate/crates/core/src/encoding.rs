//! Online encoder strategies behind one streaming interface.
//!
//! * `blstm-reencode` re-runs the VGG front-end and a bidirectional encoder
//!   over everything read so far.
//! * `ulstm-reencode` does the same with a unidirectional encoder.
//! * `ulstm-overlap` encodes only the newest chunk plus an overlap of past
//!   frames, drops the trailing positions whose convolutional context was cut
//!   off by the chunk end, and carries the recurrent state forward.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{encoder_forward, vgg_forward, vgg_positions, LstmState, ModelParams, ParamVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    BlstmReencode,
    UlstmReencode,
    UlstmOverlap,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::BlstmReencode,
        StrategyKind::UlstmReencode,
        StrategyKind::UlstmOverlap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::BlstmReencode => "blstm-reencode",
            StrategyKind::UlstmReencode => "ulstm-reencode",
            StrategyKind::UlstmOverlap => "ulstm-overlap",
        }
    }

    /// Encoder directions the strategy needs.
    pub fn directions(self) -> usize {
        match self {
            StrategyKind::BlstmReencode => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Half-up rounding of `n / d` for non-negative integers.
pub fn round_div(n: usize, d: usize) -> usize {
    (2 * n + d) / (2 * d)
}

/// Frames of past input re-read at step `t` (1-based): half the first read,
/// then half the stride.
pub fn overlap_schedule(t: usize, k: usize, s: usize) -> usize {
    if t <= 1 {
        round_div(k, 2)
    } else {
        round_div(s, 2)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeCost {
    pub frames_processed: u64,
    pub chunks: u64,
    pub wall_ns: u64,
}

/// Frame interval `[start, end)` covered by the positions one chunk kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeptSpan {
    pub chunk_start: usize,
    pub chunk_end: usize,
    pub start: usize,
    pub end: usize,
    pub positions: usize,
}

/// How a feed changed the emitted encoder outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedUpdate {
    Unchanged,
    /// Rows from this index onward are new; earlier rows are untouched.
    Appended(usize),
    /// All rows were recomputed.
    Replaced,
}

pub struct EncoderStream<'m> {
    params: &'m ModelParams,
    kind: StrategyKind,
    compensate: bool,
    buffer: Vec<f32>,
    g: usize,
    offset: usize,
    step: usize,
    overlap: usize,
    finished: bool,
    state: Option<LstmState>,
    outputs: Vec<f32>,
    positions: usize,
    cost: EncodeCost,
    spans: Vec<KeptSpan>,
}

impl<'m> EncoderStream<'m> {
    pub fn new(params: &'m ModelParams, kind: StrategyKind) -> Result<Self> {
        if params.config.directions != kind.directions() {
            return Err(Error::Config(format!(
                "strategy {kind} needs a {}-direction encoder, model has {}",
                kind.directions(),
                params.config.directions
            )));
        }
        Ok(EncoderStream {
            params,
            kind,
            compensate: true,
            buffer: Vec::new(),
            g: 0,
            offset: 0,
            step: 0,
            overlap: 0,
            finished: false,
            state: None,
            outputs: Vec::new(),
            positions: 0,
            cost: EncodeCost::default(),
            spans: Vec::new(),
        })
    }

    /// Independent chunks: no overlap and no discarded positions.
    pub fn without_overlap(mut self) -> Self {
        self.compensate = false;
        self
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    /// Frames consumed so far.
    pub fn frames_read(&self) -> usize {
        self.g
    }

    /// Feeds so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    /// Emitted encoder outputs, `positions × encoder_dim` row-major.
    pub fn outputs(&self) -> &[f32] {
        &self.outputs
    }

    pub fn output_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.positions, self.params.config.encoder_dim()],
            self.outputs.clone(),
        )
        .expect("outputs match position count")
    }

    /// Rows `from..` of the outputs.
    pub fn output_rows(&self, from: usize) -> Tensor {
        let e = self.params.config.encoder_dim();
        Tensor::new(vec![self.positions - from, e], self.outputs[from * e..].to_vec())
            .expect("outputs match position count")
    }

    pub fn cost(&self) -> EncodeCost {
        self.cost
    }

    pub fn kept_spans(&self) -> &[KeptSpan] {
        &self.spans
    }

    /// Reads `frames` (a whole number of feature rows) and updates the
    /// encoder outputs according to the strategy.
    pub fn feed(&mut self, frames: &[f32], is_last: bool) -> Result<FeedUpdate> {
        if self.finished {
            return Err(Error::StreamClosed);
        }
        let d = self.params.config.feature_dim;
        if !frames.len().is_multiple_of(d) {
            return Err(Error::shape("feed", &[frames.len()], &[d]));
        }
        let n = frames.len() / d;
        if n == 0 && !is_last {
            return Err(Error::Contract("feed needs new frames unless it is the last".into()));
        }
        let started = Instant::now();
        self.buffer.extend_from_slice(frames);
        self.g += n;
        self.step += 1;
        self.finished = is_last;
        let update = match self.kind {
            StrategyKind::UlstmOverlap => self.feed_overlap(n, is_last),
            _ => self.reencode(),
        };
        self.cost.wall_ns += started.elapsed().as_nanos() as u64;
        update
    }

    fn reencode(&mut self) -> Result<FeedUpdate> {
        if vgg_positions(self.g) == 0 {
            return Ok(FeedUpdate::Unchanged);
        }
        let mut tape = Tape::inference();
        let pv = ParamVars::new(&mut tape, self.params);
        let pos = vgg_forward(&mut tape, &pv, self.params, &self.buffer)?;
        let out = encoder_forward(&mut tape, &pv, self.params, pos, None)?;
        self.positions = tape.shape(out.outputs)[0];
        self.outputs = tape.value(out.outputs).to_vec();
        let passes = self.kind.directions() as u64;
        self.cost.frames_processed += passes * self.g as u64;
        self.cost.chunks += 1;
        Ok(FeedUpdate::Replaced)
    }

    fn feed_overlap(&mut self, new_frames: usize, is_last: bool) -> Result<FeedUpdate> {
        // the overlap of a step is set by what that step read; a deferred
        // chunk keeps the largest pending overlap
        let overlap = if self.compensate { round_div(new_frames, 2) } else { 0 };
        self.overlap = self.overlap.max(overlap);
        let chunk_len = self.g - self.offset;
        let produced = vgg_positions(chunk_len);
        let discard = if is_last { 0 } else { round_div(self.overlap, 4) };
        let keep = produced.saturating_sub(discard);
        if keep == 0 && !is_last {
            return Ok(FeedUpdate::Unchanged);
        }
        let d = self.params.config.feature_dim;
        let start = self.offset;
        let before = self.positions;
        if keep > 0 {
            let mut tape = Tape::inference();
            let pv = ParamVars::new(&mut tape, self.params);
            let chunk = &self.buffer[start * d..self.g * d];
            let pos = vgg_forward(&mut tape, &pv, self.params, chunk)?;
            let pos = tape.rows(pos, 0, keep)?;
            let out = encoder_forward(&mut tape, &pv, self.params, pos, self.state.as_ref())?;
            self.outputs.extend_from_slice(tape.value(out.outputs));
            self.positions += keep;
            self.state = Some(out.final_state);
            self.cost.frames_processed += chunk_len as u64;
            self.cost.chunks += 1;
        }
        self.spans.push(KeptSpan {
            chunk_start: start,
            chunk_end: self.g,
            start,
            end: start + 4 * keep,
            positions: keep,
        });
        self.offset = self.g - self.overlap.min(self.g - start);
        self.overlap = 0;
        Ok(if self.positions > before {
            FeedUpdate::Appended(before)
        } else {
            FeedUpdate::Unchanged
        })
    }
}

/// Frames a strategy pushes through the encoder for the given read sizes,
/// computed without running the model.
pub fn planned_frames(kind: StrategyKind, reads: &[usize]) -> u64 {
    let mut total = 0u64;
    let mut g = 0usize;
    let mut offset = 0usize;
    let mut overlap = 0usize;
    for (i, &r) in reads.iter().enumerate() {
        g += r;
        let last = i + 1 == reads.len();
        match kind {
            StrategyKind::UlstmOverlap => {
                overlap = overlap.max(round_div(r, 2));
                let len = g - offset;
                let discard = if last { 0 } else { round_div(overlap, 4) };
                let keep = vgg_positions(len).saturating_sub(discard);
                if keep == 0 && !last {
                    continue;
                }
                if keep > 0 {
                    total += len as u64;
                }
                offset = g - overlap.min(len);
                overlap = 0;
            }
            _ if vgg_positions(g) > 0 => total += (kind.directions() * g) as u64,
            _ => {}
        }
    }
    total
}
