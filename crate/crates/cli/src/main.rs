mod config;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use simulst::encoding::StrategyKind;
use simulst::harness::{
    bench, bench_csv, curve, difficulty_scores, load_sweep, references, run_sweep, subset_curves, write_csv,
    write_sweep, Models, SegmentationKind,
};
use simulst::metrics::{bleu, AlUnits, BleuOptions, ScoreOptions};
use simulst::nn::{load_checkpoint, save_checkpoint, ModelParams};
use simulst::online::offline_translate;
use simulst::synthetic::{generate_corpus, load_corpus, save_corpus, train, Corpus, OptimizerKind, Utterance};

use config::FileConfig;

#[derive(Parser)]
#[command(name = "simulst", version, about = "Simultaneous speech translation simulator")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, initialisation, shuffling and random segmentation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus directory.
    Generate(GenerateArgs),
    /// Train a model on a corpus and write a checkpoint.
    Train(TrainArgs),
    /// Offline (full-utterance) translation.
    Translate(TranslateArgs),
    /// Run a simulation sweep and write traces plus a trade-off CSV.
    Simulate(SimulateArgs),
    /// Time online decoding per strategy on one thread.
    Bench(BenchArgs),
    /// Score sweep traces into BLEU/AL curves, optionally by LD subset.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Heldout,
    All,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus directory written by `generate`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Which part of the corpus to use.
    #[arg(long, value_enum, default_value = "heldout")]
    split: Split,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    reversal_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    /// Train a bidirectional encoder.
    #[arg(long)]
    bidirectional: bool,
    /// Per-epoch report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: CorpusArgs,
    /// Hypotheses, one per line; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    blstm_model: Option<PathBuf>,
    #[command(flatten)]
    data: CorpusArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<StrategyKind>,
    #[arg(long, value_enum)]
    segmentation: Option<Segmentation>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    s: Vec<usize>,
    #[arg(long = "n", value_delimiter = ',')]
    n: Vec<usize>,
    /// Random chunk bounds as `low:high`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_bounds)]
    bounds: Vec<[usize; 2]>,
    /// Latency units for the CSV.
    #[arg(long, default_value = "words")]
    units: AlUnits,
}

#[derive(Clone, Copy, ValueEnum)]
enum Segmentation {
    Fixed,
    OracleWords,
    Random,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Bidirectional model; defaults to a zero-padded twin of `--model`.
    #[arg(long)]
    blstm_model: Option<PathBuf>,
    #[command(flatten)]
    data: CorpusArgs,
    /// Use only the first N utterances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `hardest=N`: also write curves of the N hardest and N easiest utterances.
    #[arg(long, value_parser = parse_subset)]
    subset: Option<usize>,
    #[arg(long, default_value = "words")]
    units: AlUnits,
}

fn parse_bounds(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected low:high, got {s:?}"))?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

fn parse_subset(s: &str) -> Result<usize, String> {
    let n = s
        .strip_prefix("hardest=")
        .ok_or_else(|| format!("expected hardest=N, got {s:?}"))?;
    n.parse().map_err(|e| format!("{n:?}: {e}"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = FileConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Translate(a) => cmd_translate(cfg, a),
        Command::Simulate(a) => cmd_simulate(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
        Command::Report(a) => cmd_report(a),
    }
}

fn open_corpus(dir: &Path) -> Result<Corpus> {
    load_corpus(dir).with_context(|| {
        format!(
            "cannot load corpus from {} (create one with `simulst generate`)",
            dir.display()
        )
    })
}

fn open_model(path: &Path) -> Result<ModelParams> {
    load_checkpoint(path).with_context(|| format!("cannot load model checkpoint {}", path.display()))
}

fn check_compatible(model: &ModelParams, corpus: &Corpus, path: &Path) -> Result<()> {
    let vocab = corpus.vocab()?;
    ensure!(
        model.config.feature_dim == corpus.spec.feature_dim,
        "config error: model {} expects {}-dim features, corpus has {}",
        path.display(),
        model.config.feature_dim,
        corpus.spec.feature_dim
    );
    ensure!(
        model.vocab == vocab,
        "config error: model {} vocabulary differs from the corpus alphabet",
        path.display()
    );
    Ok(())
}

fn select(corpus: &Corpus, split: Split, heldout: f64) -> &[Utterance] {
    let (tr, ho) = corpus.split(heldout);
    match split {
        Split::Train => tr,
        Split::Heldout => ho,
        Split::All => &corpus.utterances,
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_generate(mut cfg: FileConfig, a: GenerateArgs) -> Result<()> {
    if let Some(f) = a.reversal_fraction {
        cfg.corpus.reversal_fraction = f;
    }
    let n = a.utterances.unwrap_or(cfg.generate.utterances);
    let corpus = generate_corpus(&cfg.corpus, n)?;
    save_corpus(&corpus, &a.out)?;
    let reversed = corpus.utterances.iter().filter(|u| u.reversed).count();
    println!("wrote {n} utterances ({reversed} reversed) to {}", a.out.display());
    Ok(())
}

fn cmd_train(mut cfg: FileConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(o) = a.optimizer {
        t.optimizer = match o {
            Optimizer::Sgd => OptimizerKind::Sgd,
            Optimizer::Adam => OptimizerKind::Adam,
        };
    }
    if a.bidirectional {
        cfg.model.directions = 2;
    }
    let corpus = open_corpus(&a.corpus)?;
    ensure!(
        cfg.model.feature_dim == corpus.spec.feature_dim,
        "config error: model.feature_dim = {} but the corpus has {}-dim features",
        cfg.model.feature_dim,
        corpus.spec.feature_dim
    );
    let mut params = ModelParams::init(cfg.model.clone(), corpus.vocab()?, cfg.train.seed)?;
    let (tr, ho) = corpus.split(cfg.train.heldout_fraction);
    log::info!(
        "training {} parameters on {} utterances, {} held out",
        params.parameter_count(),
        tr.len(),
        ho.len()
    );
    let mut csv = String::from("epoch,train_loss,heldout_bleu,seconds\n");
    let reports = train(&mut params, tr, ho, &cfg.train, |r| {
        println!(
            "epoch {:>3}  loss {:.4}  held-out BLEU {:.4}  ({:.1}s)",
            r.epoch, r.train_loss, r.heldout_bleu, r.seconds
        );
    })?;
    for r in &reports {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.3}\n",
            r.epoch, r.train_loss, r.heldout_bleu, r.seconds
        ));
    }
    save_checkpoint(&a.out, &params)?;
    if let Some(p) = &a.report {
        fs::write(p, csv).with_context(|| format!("cannot write {}", p.display()))?;
    }
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_translate(cfg: FileConfig, a: TranslateArgs) -> Result<()> {
    let dir = a.data.corpus.clone().unwrap_or(cfg.sweep.corpus.clone());
    let corpus = open_corpus(&dir)?;
    let params = open_model(&a.model)?;
    check_compatible(&params, &corpus, &a.model)?;
    let utts = select(&corpus, a.data.split, cfg.train.heldout_fraction);
    let hyps = utts
        .iter()
        .map(|u| offline_translate(&params, &u.frames, &cfg.sweep.decode))
        .collect::<simulst::Result<Vec<_>>>()?;
    let refs: Vec<&str> = utts.iter().map(|u| u.target.as_str()).collect();
    let score = bleu(&hyps, &refs, BleuOptions::default())?;
    let mut text = hyps.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_or_print(a.out.as_deref(), &text)?;
    eprintln!("BLEU {score:.4} over {} utterances", utts.len());
    Ok(())
}

fn load_models(model: &Path, blstm: Option<&Path>, corpus: &Corpus, need_blstm: bool, twin: bool) -> Result<Models> {
    let ulstm = open_model(model)?;
    check_compatible(&ulstm, corpus, model)?;
    ensure!(
        !ulstm.config.is_bidirectional(),
        "config error: {} is bidirectional; pass it as --blstm-model",
        model.display()
    );
    let blstm = match blstm {
        Some(p) => {
            let m = open_model(p)?;
            check_compatible(&m, corpus, p)?;
            ensure!(
                m.config.is_bidirectional(),
                "config error: {} is not bidirectional",
                p.display()
            );
            Some(m)
        }
        None if need_blstm && twin => {
            log::info!(
                "no bidirectional model given; timing a zero-padded twin of {}",
                model.display()
            );
            Some(ulstm.bidirectional_twin()?)
        }
        None if need_blstm => bail!("config error: blstm-reencode needs --blstm-model"),
        None => None,
    };
    Ok(Models {
        ulstm: Some(ulstm),
        blstm,
    })
}

fn cmd_simulate(mut cfg: FileConfig, a: SimulateArgs) -> Result<()> {
    let s = &mut cfg.sweep;
    if !a.strategy.is_empty() {
        s.strategies = a.strategy;
    }
    if let Some(seg) = a.segmentation {
        s.segmentation = match seg {
            Segmentation::Fixed => SegmentationKind::Fixed,
            Segmentation::OracleWords => SegmentationKind::OracleWords,
            Segmentation::Random => SegmentationKind::Random,
        };
    }
    for (dst, src) in [(&mut s.k, a.k), (&mut s.s, a.s), (&mut s.n, a.n)] {
        if !src.is_empty() {
            *dst = src;
        }
    }
    if !a.bounds.is_empty() {
        s.bounds = a.bounds;
    }
    if let Some(m) = a.model {
        s.model = m;
    }
    if a.blstm_model.is_some() {
        s.blstm_model = a.blstm_model;
    }
    if let Some(c) = a.data.corpus {
        s.corpus = c;
    }
    if let Some(o) = a.out {
        s.out = o;
    }
    let runs = s.runs()?;
    let corpus = open_corpus(&s.corpus)?;
    let need_blstm = s.strategies.contains(&StrategyKind::BlstmReencode);
    let models = load_models(&s.model, s.blstm_model.as_deref(), &corpus, need_blstm, false)?;
    let utts = select(&corpus, a.data.split, cfg.train.heldout_fraction);
    log::info!("{} configurations over {} utterances", runs.len(), utts.len());
    let opts = ScoreOptions {
        units: a.units,
        frame_ms: s.decode.frame_ms,
        ..ScoreOptions::default()
    };
    let started = Instant::now();
    let result = run_sweep(&models, utts, s, &opts)?;
    write_sweep(&s.out, &result)?;
    println!(
        "{} runs in {:.1}s; wrote {}",
        result.rows.len(),
        started.elapsed().as_secs_f64(),
        s.out.join("tradeoff.csv").display()
    );
    Ok(())
}

fn cmd_bench(mut cfg: FileConfig, a: BenchArgs) -> Result<()> {
    let b = &mut cfg.bench;
    if let Some(r) = a.reps {
        b.reps = r;
    }
    if let Some(k) = a.k {
        b.k = k;
    }
    if let Some(s) = a.s {
        b.s = s;
    }
    let dir = a.data.corpus.unwrap_or(cfg.sweep.corpus.clone());
    let model = a.model.unwrap_or(cfg.sweep.model.clone());
    let corpus = open_corpus(&dir)?;
    let blstm = a.blstm_model.or(cfg.sweep.blstm_model.clone());
    let models = load_models(&model, blstm.as_deref(), &corpus, true, true)?;
    let mut utts = select(&corpus, a.data.split, cfg.train.heldout_fraction);
    if let Some(n) = a.limit {
        utts = &utts[..n.min(utts.len())];
    }
    let rows = bench(&models, utts, &cfg.bench, &cfg.sweep.decode)?;
    write_or_print(a.out.as_deref(), &bench_csv(&rows))
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let runs = load_sweep(&a.sweep).with_context(|| format!("cannot load sweep from {}", a.sweep.display()))?;
    let corpus = open_corpus(&a.corpus)?;
    let refs = references(&corpus.utterances);
    let opts = ScoreOptions {
        units: a.units,
        ..ScoreOptions::default()
    };
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    write_csv(&a.out.join("curve.csv"), &curve(&runs, &refs, &opts, None)?)?;
    if let Some(n) = a.subset {
        let used: HashSet<&str> = runs
            .iter()
            .flat_map(|(_, t)| t.iter().map(|t| t.utt.as_str()))
            .collect();
        let utts: Vec<Utterance> = corpus
            .utterances
            .iter()
            .filter(|u| used.contains(u.id.as_str()))
            .cloned()
            .collect();
        let scores = difficulty_scores(&utts)?;
        let curves = subset_curves(&runs, &refs, &scores, n, &opts)?;
        write_csv(&a.out.join("curve_hardest.csv"), &curves.hardest)?;
        write_csv(&a.out.join("curve_easiest.csv"), &curves.easiest)?;
        let mut ld = String::from("utt,ld,tau,subset\n");
        for s in &scores {
            let tag = if curves.hardest_ids.contains(&s.utt) {
                "hardest"
            } else if curves.easiest_ids.contains(&s.utt) {
                "easiest"
            } else {
                ""
            };
            ld.push_str(&format!("{},{:.6},{},{}\n", s.utt, s.ld, s.tau, tag));
        }
        fs::write(a.out.join("difficulty.csv"), ld).with_context(|| format!("cannot write {}", a.out.display()))?;
    }
    println!("wrote curves to {}", a.out.display());
    Ok(())
}
