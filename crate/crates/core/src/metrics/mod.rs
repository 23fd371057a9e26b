//! Translation quality, latency and lagging difficulty.

mod bleu;
mod difficulty;
mod latency;
mod table;

pub use bleu::{bleu, bleu_tokens, BleuOptions, BleuScore};
pub use difficulty::{
    extract_subsets, lagging_difficulty, read_alignments, source_frontier, AlignmentSet, DifficultyScore,
};
pub use latency::{average_lagging, reference_len, token_delays, trace_lagging, AlUnits};
pub use table::{spearman, to_csv, tradeoff_row, RunKey, ScoreOptions, TradeoffRow, CSV_HEADER};
