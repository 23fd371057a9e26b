//! The adaptive wait-k controller: READ the next planned segment into an
//! encoder stream, then WRITE up to N greedy tokens, until the input is
//! exhausted and the hypothesis is closed by EOS or the length cap.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{EncodeCost, EncoderStream, FeedUpdate, StrategyKind};
use crate::error::{Error, Result};
use crate::nn::{encode_offline, vgg_positions, DecoderCache, ModelParams, EOS};
use crate::segmentation::SegmentationPlan;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodePolicy {
    /// Maximum tokens per WRITE.
    pub n: usize,
    pub max_target_factor: f64,
    pub extra_tokens: usize,
    pub frame_ms: f64,
    /// Overlap-and-compensate on; off gives independent chunks.
    pub compensate: bool,
}

impl Default for DecodePolicy {
    fn default() -> Self {
        DecodePolicy {
            n: 1,
            max_target_factor: 3.0,
            extra_tokens: 10,
            frame_ms: 10.0,
            compensate: true,
        }
    }
}

impl DecodePolicy {
    pub fn with_n(n: usize) -> Self {
        DecodePolicy { n, ..Self::default() }
    }

    /// Output length cap for an utterance of `frames` frames.
    pub fn length_cap(&self, frames: usize) -> usize {
        (self.max_target_factor * vgg_positions(frames) as f64).ceil() as usize + self.extra_tokens
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("write parameter N must be at least 1".into()));
        }
        if self.frame_ms.is_nan()
            || self.frame_ms <= 0.0
            || self.max_target_factor.is_nan()
            || self.max_target_factor < 0.0
        {
            return Err(Error::Config(
                "frame duration and length factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum TraceEvent {
    #[serde(rename = "R")]
    Read { frames: usize, g: usize, ms: f64 },
    #[serde(rename = "W")]
    Write { token: String, g: usize, ms: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTrace {
    pub utt: String,
    pub events: Vec<TraceEvent>,
    pub hypothesis: String,
    pub cost: EncodeCost,
    pub eos_suppressed: usize,
    pub truncated: bool,
}

impl DecodeTrace {
    /// Frames read before each emitted token.
    pub fn delays_frames(&self) -> Vec<usize> {
        self.writes().map(|(_, g, _)| g).collect()
    }

    pub fn delays_ms(&self) -> Vec<f64> {
        self.writes().map(|(_, _, ms)| ms).collect()
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.writes().map(|(t, _, _)| t).collect()
    }

    /// Total frames read.
    pub fn frames_read(&self) -> usize {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Read { frames, .. } => Some(*frames),
                _ => None,
            })
            .sum()
    }

    fn writes(&self) -> impl Iterator<Item = (&str, usize, f64)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Write { token, g, ms } => Some((token.as_str(), *g, *ms)),
            _ => None,
        })
    }
}

/// Runs the controller over one utterance (`frames` is `T×D` row-major).
pub fn simulate(
    params: &ModelParams,
    utt: &str,
    frames: &[f32],
    plan: &SegmentationPlan,
    policy: &DecodePolicy,
    kind: StrategyKind,
) -> Result<DecodeTrace> {
    policy.validate()?;
    let d = params.config.feature_dim;
    let t = plan.total_frames();
    if frames.len() != t * d {
        return Err(Error::Config(format!(
            "plan covers {t} frames of dim {d} but the utterance has {} values",
            frames.len()
        )));
    }
    let mut stream = EncoderStream::new(params, kind)?;
    if !policy.compensate {
        stream = stream.without_overlap();
    }
    let mut cache = DecoderCache::new(params);
    let cap = policy.length_cap(t);
    let mut trace = DecodeTrace {
        utt: utt.to_string(),
        events: Vec::new(),
        hypothesis: String::new(),
        cost: EncodeCost::default(),
        eos_suppressed: 0,
        truncated: false,
    };
    let mut emitted = 0usize;
    let mut closed = false;
    let segments = plan.segments();
    let mut at = 0;
    for (i, &seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match stream.feed(&frames[at * d..(at + seg) * d], last)? {
            FeedUpdate::Unchanged => {}
            FeedUpdate::Appended(from) => cache.append_encoder(params, &stream.output_rows(from))?,
            FeedUpdate::Replaced => cache.set_encoder(params, &stream.output_tensor())?,
        }
        at += seg;
        let g = stream.frames_read();
        let ms = g as f64 * policy.frame_ms;
        trace.events.push(TraceEvent::Read { frames: seg, g, ms });
        if cache.positions() == 0 {
            if last {
                return Err(Error::EmptyEncoderOutput);
            }
            continue;
        }
        let budget = if last { usize::MAX } else { policy.n };
        let mut written = 0;
        while written < budget {
            if emitted >= cap {
                trace.truncated = true;
                break;
            }
            let pred = cache.predict(params)?;
            let tok = pred.argmax();
            if tok == EOS {
                if last {
                    closed = true;
                } else {
                    trace.eos_suppressed += 1;
                }
                break;
            }
            cache.commit(pred, tok);
            let sym = params.vocab.symbol(tok).expect("non-special token");
            trace.hypothesis.push(sym);
            trace.events.push(TraceEvent::Write {
                token: sym.to_string(),
                g,
                ms,
            });
            emitted += 1;
            written += 1;
        }
    }
    debug_assert!(closed || trace.truncated);
    trace.cost = stream.cost();
    Ok(trace)
}

/// Full-utterance encoding then greedy decoding to EOS or the length cap.
pub fn offline_translate(params: &ModelParams, frames: &[f32], policy: &DecodePolicy) -> Result<String> {
    policy.validate()?;
    let d = params.config.feature_dim;
    if !frames.len().is_multiple_of(d) {
        return Err(Error::shape("offline_translate", &[frames.len()], &[d]));
    }
    let (enc, _) = encode_offline(params, frames)?;
    let ids = crate::nn::greedy_decode(params, &enc, policy.length_cap(frames.len() / d))?;
    Ok(params.vocab.decode(&ids))
}

#[derive(Serialize, Deserialize)]
struct CostRecord {
    frames_processed: u64,
    wall_ns: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LogLine {
    Event {
        utt: String,
        #[serde(flatten)]
        event: TraceEvent,
    },
    Summary {
        utt: String,
        hyp: String,
        cost: CostRecord,
    },
}

/// One JSON object per event, then a summary line per utterance.
pub fn write_traces(w: &mut impl Write, traces: &[DecodeTrace]) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("writing trace log: {e}"));
    for t in traces {
        for e in &t.events {
            let line = LogLine::Event {
                utt: t.utt.clone(),
                event: e.clone(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n").map_err(io)?;
        }
        let summary = LogLine::Summary {
            utt: t.utt.clone(),
            hyp: t.hypothesis.clone(),
            cost: CostRecord {
                frames_processed: t.cost.frames_processed,
                wall_ns: t.cost.wall_ns,
            },
        };
        serde_json::to_writer(&mut *w, &summary)?;
        w.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}

pub fn save_traces(path: &Path, traces: &[DecodeTrace]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_traces(&mut w, traces)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a trace log back into traces. Counters that the log does not
/// carry (EOS suppressions, chunk count) come back as zero.
pub fn parse_traces(text: &str, path: &Path) -> Result<Vec<DecodeTrace>> {
    let mut traces = Vec::new();
    let mut current: Option<DecodeTrace> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            what: "trace log",
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let utt = match &parsed {
            LogLine::Event { utt, .. } | LogLine::Summary { utt, .. } => utt.clone(),
        };
        let trace = current.get_or_insert_with(|| DecodeTrace {
            utt: utt.clone(),
            events: Vec::new(),
            hypothesis: String::new(),
            cost: EncodeCost::default(),
            eos_suppressed: 0,
            truncated: false,
        });
        if trace.utt != utt {
            return Err(err(format!(
                "utterance {utt:?} starts before {:?} was closed",
                trace.utt
            )));
        }
        match parsed {
            LogLine::Event { event, .. } => trace.events.push(event),
            LogLine::Summary { hyp, cost, .. } => {
                let mut done = current.take().expect("inserted above");
                done.hypothesis = hyp;
                done.cost.frames_processed = cost.frames_processed;
                done.cost.wall_ns = cost.wall_ns;
                traces.push(done);
            }
        }
    }
    if let Some(t) = current {
        return Err(Error::Parse {
            what: "trace log",
            path: path.to_path_buf(),
            line: text.lines().count(),
            msg: format!("utterance {:?} has no summary line", t.utt),
        });
    }
    Ok(traces)
}

pub fn load_traces(path: &Path) -> Result<Vec<DecodeTrace>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_traces(&text, path)
}
