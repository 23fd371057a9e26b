//! Sweeps, benchmarks and reports built on the engine.

mod bench;
mod report;
mod sweep;

pub use bench::{bench, bench_csv, BenchConfig, BenchRow, BENCH_HEADER};
pub use report::{
    curve, difficulty_scores, load_sweep, subset_curves, write_csv, write_sweep, ManifestEntry, SubsetCurves,
    SweepManifest,
};
pub use sweep::{
    plan_for, references, run_config, run_sweep, utterance_seed, Models, SegmentationKind, SweepConfig, SweepResult,
    SweepRun, MAX_RUNS, RANDOM_BOUNDS,
};
