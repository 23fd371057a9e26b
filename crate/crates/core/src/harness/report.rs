//! Sweep output layout:
//!
//! | path                  | content                                   |
//! |-----------------------|-------------------------------------------|
//! | `tradeoff.csv`        | one row per configuration                 |
//! | `sweep.json`          | run keys and their trace files            |
//! | `traces/<stem>.jsonl` | event log of every utterance for one run  |

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SweepResult;
use crate::error::{Error, Result};
use crate::metrics::{
    extract_subsets, lagging_difficulty, to_csv, tradeoff_row, DifficultyScore, RunKey, ScoreOptions, TradeoffRow,
};
use crate::online::{load_traces, save_traces, DecodeTrace};
use crate::synthetic::Utterance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: RunKey,
    /// Relative to the sweep directory.
    pub traces: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub runs: Vec<ManifestEntry>,
}

pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    let trace_dir = dir.join("traces");
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let mut runs = Vec::with_capacity(result.traces.len());
    for (key, traces) in &result.traces {
        let rel = format!("traces/{}.jsonl", key.file_stem());
        save_traces(&dir.join(&rel), traces)?;
        runs.push(ManifestEntry {
            key: key.clone(),
            traces: rel,
        });
    }
    let path = dir.join("sweep.json");
    let json = serde_json::to_string_pretty(&SweepManifest { runs })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    write_csv(&dir.join("tradeoff.csv"), &result.rows)
}

pub fn write_csv(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    fs::write(path, to_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Reads back every run listed in `dir/sweep.json`.
pub fn load_sweep(dir: &Path) -> Result<Vec<(RunKey, Vec<DecodeTrace>)>> {
    let path = dir.join("sweep.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SweepManifest = serde_json::from_str(&text)?;
    manifest
        .runs
        .into_iter()
        .map(|e| Ok((e.key, load_traces(&dir.join(&e.traces))?)))
        .collect()
}

/// One trade-off row per run, optionally restricted to the utterances in `keep`.
pub fn curve(
    runs: &[(RunKey, Vec<DecodeTrace>)],
    refs: &HashMap<String, String>,
    opts: &ScoreOptions,
    keep: Option<&HashSet<String>>,
) -> Result<Vec<TradeoffRow>> {
    runs.iter()
        .map(|(key, traces)| match keep {
            None => tradeoff_row(key.clone(), traces, refs, opts),
            Some(ids) => {
                let picked: Vec<DecodeTrace> = traces.iter().filter(|t| ids.contains(&t.utt)).cloned().collect();
                tradeoff_row(key.clone(), &picked, refs, opts)
            }
        })
        .collect()
}

/// Lagging difficulty of every utterance from its ground-truth alignment.
pub fn difficulty_scores(utts: &[Utterance]) -> Result<Vec<DifficultyScore>> {
    utts.iter().map(|u| lagging_difficulty(&u.alignment_set()?)).collect()
}

pub struct SubsetCurves {
    pub hardest_ids: Vec<String>,
    pub easiest_ids: Vec<String>,
    pub hardest: Vec<TradeoffRow>,
    pub easiest: Vec<TradeoffRow>,
}

/// Trade-off curves of the `n` hardest and `n` easiest utterances by LD.
pub fn subset_curves(
    runs: &[(RunKey, Vec<DecodeTrace>)],
    refs: &HashMap<String, String>,
    scores: &[DifficultyScore],
    n: usize,
    opts: &ScoreOptions,
) -> Result<SubsetCurves> {
    let (hardest_ids, easiest_ids) = extract_subsets(scores, n)?;
    let hard: HashSet<String> = hardest_ids.iter().cloned().collect();
    let easy: HashSet<String> = easiest_ids.iter().cloned().collect();
    Ok(SubsetCurves {
        hardest: curve(runs, refs, opts, Some(&hard))?,
        easiest: curve(runs, refs, opts, Some(&easy))?,
        hardest_ids,
        easiest_ids,
    })
}
