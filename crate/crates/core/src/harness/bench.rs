use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::Models;
use crate::encoding::StrategyKind;
use crate::error::{Error, Result};
use crate::online::{simulate, DecodePolicy};
use crate::segmentation::fixed_plan;
use crate::synthetic::Utterance;

pub const BENCH_HEADER: &str = "strategy,mean_wall_per_utt,ratio_vs_blstm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub strategies: Vec<StrategyKind>,
    pub k: usize,
    pub s: usize,
    pub n: usize,
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            strategies: StrategyKind::ALL.to_vec(),
            k: 100,
            s: 10,
            n: 1,
            reps: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: StrategyKind,
    /// Seconds of full online decoding per utterance.
    pub mean_wall_per_utt: f64,
    pub ratio_vs_blstm: f64,
    pub frames_processed: u64,
}

/// Times online decoding of every utterance `reps` times per strategy on a
/// dedicated one-thread pool. Repetitions interleave the strategies so that
/// drift in machine load hits all of them alike. `blstm-reencode` is always
/// measured since it is the unit of the ratio column.
pub fn bench(models: &Models, utts: &[Utterance], cfg: &BenchConfig, decode: &DecodePolicy) -> Result<Vec<BenchRow>> {
    if utts.is_empty() || cfg.reps == 0 {
        return Err(Error::Config(
            "bench needs at least one utterance and one repetition".into(),
        ));
    }
    let mut kinds = vec![StrategyKind::BlstmReencode];
    kinds.extend(
        cfg.strategies
            .iter()
            .copied()
            .filter(|&k| k != StrategyKind::BlstmReencode),
    );
    let policy = DecodePolicy {
        n: cfg.n,
        ..decode.clone()
    };
    let plans = utts
        .iter()
        .map(|u| fixed_plan(u.num_frames, cfg.k, cfg.s))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build bench thread pool: {e}")))?;
    pool.install(|| {
        let mut total = vec![0f64; kinds.len()];
        let mut frames = vec![0u64; kinds.len()];
        // One untimed pass warms caches and the allocator.
        for rep in 0..=cfg.reps {
            for (i, &kind) in kinds.iter().enumerate() {
                let params = models.for_strategy(kind)?;
                for (u, plan) in utts.iter().zip(&plans) {
                    let started = Instant::now();
                    let trace = simulate(params, &u.id, &u.frames, plan, &policy, kind)?;
                    let secs = started.elapsed().as_secs_f64();
                    if rep > 0 {
                        total[i] += secs;
                        frames[i] += trace.cost.frames_processed;
                    }
                }
            }
        }
        let runs = (cfg.reps * utts.len()) as f64;
        let unit = total[0] / runs;
        Ok(kinds
            .iter()
            .zip(total.iter().zip(&frames))
            .map(|(&strategy, (&t, &f))| BenchRow {
                strategy,
                mean_wall_per_utt: t / runs,
                ratio_vs_blstm: (t / runs) / unit,
                frames_processed: f / cfg.reps as u64,
            })
            .collect())
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{:.9},{:.4}", r.strategy, r.mean_wall_per_utt, r.ratio_vs_blstm);
    }
    out
}
