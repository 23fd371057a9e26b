use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::StrategyKind;
use crate::error::{Error, Result};
use crate::metrics::{tradeoff_row, RunKey, ScoreOptions, TradeoffRow};
use crate::nn::ModelParams;
use crate::online::{simulate, DecodePolicy, DecodeTrace};
use crate::segmentation::{fixed_plan, oracle_word_plan, random_plan, Policy, SegmentationPlan};
use crate::synthetic::Utterance;

/// Upper bound on the number of configurations in one sweep.
pub const MAX_RUNS: usize = 10_000;

/// Chunk bounds tried by the random segmentation sweep.
pub const RANDOM_BOUNDS: [[usize; 2]; 6] = [[5, 10], [5, 20], [5, 50], [5, 100], [10, 50], [10, 100]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentationKind {
    Fixed,
    OracleWords,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub strategies: Vec<StrategyKind>,
    pub segmentation: SegmentationKind,
    /// First-read sizes (fixed and oracle-words).
    pub k: Vec<usize>,
    /// Strides (fixed only).
    pub s: Vec<usize>,
    pub n: Vec<usize>,
    /// `[low, high]` chunk sizes (random only).
    pub bounds: Vec<[usize; 2]>,
    /// Random segmentation seeds.
    pub seeds: Vec<u64>,
    pub decode: DecodePolicy,
    pub model: PathBuf,
    /// Bidirectional model for `blstm-reencode` runs.
    pub blstm_model: Option<PathBuf>,
    pub corpus: PathBuf,
    pub out: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            strategies: vec![StrategyKind::UlstmOverlap],
            segmentation: SegmentationKind::Fixed,
            k: vec![100, 200],
            s: vec![10, 20],
            n: vec![1, 2],
            bounds: RANDOM_BOUNDS.to_vec(),
            seeds: vec![1],
            decode: DecodePolicy::default(),
            model: PathBuf::from("model.ckpt"),
            blstm_model: None,
            corpus: PathBuf::from("data"),
            out: PathBuf::from("out"),
        }
    }
}

/// One point of the sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub key: RunKey,
    pub policy: Policy,
}

impl SweepConfig {
    fn grid_size(&self) -> usize {
        let seg = match self.segmentation {
            SegmentationKind::Fixed => self.k.len().saturating_mul(self.s.len()),
            SegmentationKind::OracleWords => self.k.len(),
            SegmentationKind::Random => self.bounds.len().saturating_mul(self.seeds.len()),
        };
        seg.saturating_mul(self.strategies.len()).saturating_mul(self.n.len())
    }

    /// Expands the grid in a fixed order: strategy, segmentation point, N.
    pub fn runs(&self) -> Result<Vec<SweepRun>> {
        let empty = |what: &str| Error::Config(format!("sweep grid has no {what}"));
        if self.strategies.is_empty() {
            return Err(empty("strategies"));
        }
        if self.n.is_empty() {
            return Err(empty("N values"));
        }
        if self.n.contains(&0) {
            return Err(Error::Config("N must be at least 1".into()));
        }
        let policies: Vec<(Policy, String)> = match self.segmentation {
            SegmentationKind::Fixed => {
                if self.k.is_empty() || self.s.is_empty() {
                    return Err(empty("k or s values"));
                }
                let mut v = Vec::new();
                for &k in &self.k {
                    for &s in &self.s {
                        v.push((Policy::Fixed { k, s }, "fixed".to_string()));
                    }
                }
                v
            }
            SegmentationKind::OracleWords => {
                if self.k.is_empty() {
                    return Err(empty("k values"));
                }
                self.k
                    .iter()
                    .map(|&k| (Policy::OracleWords { k }, "oracle-words".to_string()))
                    .collect()
            }
            SegmentationKind::Random => {
                if self.bounds.is_empty() || self.seeds.is_empty() {
                    return Err(empty("random bounds or seeds"));
                }
                let mut v = Vec::new();
                for &[low, high] in &self.bounds {
                    if low == 0 || low > high {
                        return Err(Error::Config(format!("bad random bounds [{low}, {high}]")));
                    }
                    for &seed in &self.seeds {
                        let p = Policy::Random { low, high, seed };
                        let label = format!("{p}/seed{seed}");
                        v.push((p, label));
                    }
                }
                v
            }
        };
        let total = self.grid_size();
        if total > MAX_RUNS {
            return Err(Error::Config(format!(
                "sweep has {total} runs, more than the limit of {MAX_RUNS}"
            )));
        }
        let mut runs = Vec::with_capacity(total);
        for &strategy in &self.strategies {
            for (policy, label) in &policies {
                let (k, s) = match *policy {
                    Policy::Fixed { k, s } => (k, s),
                    Policy::OracleWords { k } => (k, 1),
                    Policy::Random { .. } => (0, 0),
                };
                for &n in &self.n {
                    runs.push(SweepRun {
                        key: RunKey {
                            strategy,
                            k,
                            s,
                            n,
                            segmentation: label.clone(),
                        },
                        policy: policy.clone(),
                    });
                }
            }
        }
        Ok(runs)
    }
}

/// Seed for utterance `index` under a random policy seeded with `seed`.
pub fn utterance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

/// The read schedule `policy` gives utterance number `index`.
pub fn plan_for(policy: &Policy, utt: &Utterance, index: usize) -> Result<SegmentationPlan> {
    match *policy {
        Policy::Fixed { k, s } => fixed_plan(utt.num_frames, k, s),
        Policy::OracleWords { k } => oracle_word_plan(utt.num_frames, &utt.words, k).map(|(p, _)| p),
        Policy::Random { low, high, seed } => random_plan(utt.num_frames, low, high, utterance_seed(seed, index)),
    }
}

/// Unidirectional and bidirectional models; a sweep only needs the ones its
/// strategies use.
#[derive(Clone, Debug, Default)]
pub struct Models {
    pub ulstm: Option<ModelParams>,
    pub blstm: Option<ModelParams>,
}

impl Models {
    pub fn for_strategy(&self, kind: StrategyKind) -> Result<&ModelParams> {
        let (m, name) = match kind.directions() {
            2 => (&self.blstm, "bidirectional"),
            _ => (&self.ulstm, "unidirectional"),
        };
        m.as_ref()
            .ok_or_else(|| Error::Config(format!("strategy {kind} needs a {name} model")))
    }
}

/// Simulates every utterance under one configuration, in utterance order.
pub fn run_config(
    params: &ModelParams,
    utts: &[Utterance],
    run: &SweepRun,
    decode: &DecodePolicy,
) -> Result<Vec<DecodeTrace>> {
    let policy = DecodePolicy {
        n: run.key.n,
        ..decode.clone()
    };
    utts.par_iter()
        .enumerate()
        .map(|(i, u)| {
            let plan = plan_for(&run.policy, u, i)?;
            simulate(params, &u.id, &u.frames, &plan, &policy, run.key.strategy)
        })
        .collect()
}

pub struct SweepResult {
    pub rows: Vec<TradeoffRow>,
    pub traces: Vec<(RunKey, Vec<DecodeTrace>)>,
}

/// References keyed by utterance id.
pub fn references(utts: &[Utterance]) -> HashMap<String, String> {
    utts.iter().map(|u| (u.id.clone(), u.target.clone())).collect()
}

/// Runs the whole grid over `utts` and scores each configuration against
/// the utterances' own targets.
pub fn run_sweep(models: &Models, utts: &[Utterance], cfg: &SweepConfig, opts: &ScoreOptions) -> Result<SweepResult> {
    if utts.is_empty() {
        return Err(Error::Config("sweep has no utterances".into()));
    }
    let runs = cfg.runs()?;
    for run in &runs {
        models.for_strategy(run.key.strategy)?;
    }
    let refs = references(utts);
    let done: Vec<(TradeoffRow, Vec<DecodeTrace>)> = runs
        .par_iter()
        .map(|run| {
            let params = models.for_strategy(run.key.strategy)?;
            let traces = run_config(params, utts, run, &cfg.decode)?;
            let row = tradeoff_row(run.key.clone(), &traces, &refs, opts)?;
            log::info!("{}: BLEU {:.4}, AL {:.1} ms", run.key.file_stem(), row.bleu, row.al_ms);
            Ok((row, traces))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(done.len());
    let mut traces = Vec::with_capacity(done.len());
    for (row, t) in done {
        traces.push((row.key.clone(), t));
        rows.push(row);
    }
    Ok(SweepResult { rows, traces })
}
