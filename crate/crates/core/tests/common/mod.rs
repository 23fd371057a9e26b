//! Shared test oracles: f64 reference operators and a central-difference
//! gradient checker that never touches the tape's own forward path.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulst::autodiff::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-5;
pub const SMALL_GRAD: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Distinct values spaced 0.05 apart, shuffled; keeps max-pool and ReLU away
/// from ties and kinks under finite-difference steps.
pub fn separated(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.05 + 0.025).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    v
}

#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
    pub passed: bool,
}

/// Compares tape gradients of `Σ w ⊙ op(inputs)` against central differences
/// of the same projection evaluated with the f64 `oracle`.
pub fn check_gradients(
    inputs: &[(Vec<usize>, Vec<f32>)],
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    oracle: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> GradReport {
    let mut r = rng(seed ^ 0x5eed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, d)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap(), true))
        .collect();
    let out = build(&mut tape, &vars);
    let out_shape = tape.shape(out).to_vec();
    let w: Vec<f32> = uniform(&mut r, tape.value(out).len(), 0.5, 1.5);
    let wv = tape.leaf(Tensor::new(out_shape, w.clone()).unwrap(), false);
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();

    let base: Vec<Vec<f64>> = inputs
        .iter()
        .map(|(_, d)| d.iter().map(|&x| x as f64).collect())
        .collect();
    let project = |xs: &[Vec<f64>]| -> f64 { oracle(xs).iter().zip(&w).map(|(o, &wi)| o * wi as f64).sum() };

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        passed: true,
    };
    for (ti, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap().to_vec();
        for ei in 0..base[ti].len() {
            let mut plus = base.clone();
            plus[ti][ei] += FD_STEP;
            let mut minus = base.clone();
            minus[ti][ei] -= FD_STEP;
            let numeric = (project(&plus) - project(&minus)) / (2.0 * FD_STEP);
            let a = analytic[ei] as f64;
            let diff = (a - numeric).abs();
            let ok = if a.abs() < SMALL_GRAD {
                diff <= ABS_TOL
            } else {
                diff <= REL_TOL * a.abs().max(numeric.abs())
            };
            let rel = diff / a.abs().max(numeric.abs()).max(1e-12);
            if a.abs() >= SMALL_GRAD && rel > report.max_rel_err {
                report.max_rel_err = rel;
            }
            if !ok {
                report.passed = false;
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    report
}

// ---- f64 reference operators ----

pub fn matmul64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d64(
    x: &[f64],
    k: &[f64],
    bias: Option<&[f64]>,
    (cin, h, w): (usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; cout * ho * wo];
    for co in 0..cout {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xo * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * k[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    acc += b[co];
                }
                out[(co * ho + y) * wo + xo] = acc;
            }
        }
    }
    out
}

pub fn maxpool64(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..h / 2 {
            for xo in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[(ch * h + 2 * y + dy) * w + 2 * xo + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn softmax64(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

pub fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Finite-difference checks for every operator the tape implements, each on
/// tensors of at most 64 elements.
pub fn op_gradient_cases(seed: u64) -> Vec<(&'static str, GradReport)> {
    let mut r = rng(seed);
    let mut cases = Vec::new();

    let a = uniform(&mut r, 12, -1.0, 1.0);
    let b = uniform(&mut r, 8, -1.0, 1.0);
    cases.push((
        "matmul",
        check_gradients(
            &[(vec![3, 4], a), (vec![4, 2], b)],
            seed,
            |t, v| t.matmul(v[0], v[1]).unwrap(),
            |x| matmul64(&x[0], &x[1], 3, 4, 2),
        ),
    ));

    let a = uniform(&mut r, 12, -1.0, 1.0);
    let b = uniform(&mut r, 4, -1.0, 1.0);
    cases.push((
        "add (broadcast)",
        check_gradients(
            &[(vec![3, 4], a), (vec![1, 4], b)],
            seed,
            |t, v| t.add(v[0], v[1]).unwrap(),
            |x| x[0].iter().enumerate().map(|(i, v)| v + x[1][i % 4]).collect(),
        ),
    ));

    let a = uniform(&mut r, 12, -1.0, 1.0);
    let b = uniform(&mut r, 12, -1.0, 1.0);
    cases.push((
        "sub",
        check_gradients(
            &[(vec![3, 4], a), (vec![3, 4], b)],
            seed,
            |t, v| t.sub(v[0], v[1]).unwrap(),
            |x| x[0].iter().zip(&x[1]).map(|(p, q)| p - q).collect(),
        ),
    ));

    let a = uniform(&mut r, 12, -1.0, 1.0);
    let b = uniform(&mut r, 4, -1.0, 1.0);
    cases.push((
        "mul (broadcast)",
        check_gradients(
            &[(vec![3, 4], a), (vec![4], b)],
            seed,
            |t, v| t.mul(v[0], v[1]).unwrap(),
            |x| x[0].iter().enumerate().map(|(i, v)| v * x[1][i % 4]).collect(),
        ),
    ));

    let a = uniform(&mut r, 16, -2.0, 2.0);
    cases.push((
        "sigmoid",
        check_gradients(
            &[(vec![4, 4], a)],
            seed,
            |t, v| t.sigmoid(v[0]),
            |x| x[0].iter().map(|&v| sigmoid64(v)).collect(),
        ),
    ));

    let a = uniform(&mut r, 16, -2.0, 2.0);
    cases.push((
        "tanh",
        check_gradients(
            &[(vec![4, 4], a)],
            seed,
            |t, v| t.tanh(v[0]),
            |x| x[0].iter().map(|v| v.tanh()).collect(),
        ),
    ));

    let a = separated(&mut r, 16);
    cases.push((
        "relu",
        check_gradients(
            &[(vec![4, 4], a)],
            seed,
            |t, v| t.relu(v[0]),
            |x| x[0].iter().map(|v| v.max(0.0)).collect(),
        ),
    ));

    let a = uniform(&mut r, 15, -2.0, 2.0);
    cases.push((
        "softmax",
        check_gradients(
            &[(vec![3, 5], a)],
            seed,
            |t, v| t.softmax(v[0]).unwrap(),
            |x| softmax64(&x[0], 5),
        ),
    ));

    let a = uniform(&mut r, 12, 0.5, 2.0);
    cases.push((
        "log",
        check_gradients(
            &[(vec![3, 4], a)],
            seed,
            |t, v| t.log(v[0]),
            |x| x[0].iter().map(|v| v.ln()).collect(),
        ),
    ));

    let a = uniform(&mut r, 12, -1.5, 1.5);
    cases.push((
        "exp",
        check_gradients(
            &[(vec![3, 4], a)],
            seed,
            |t, v| t.exp(v[0]),
            |x| x[0].iter().map(|v| v.exp()).collect(),
        ),
    ));

    let x = uniform(&mut r, 2 * 5 * 4, -1.0, 1.0);
    let k = uniform(&mut r, 2 * 2 * 9, -0.5, 0.5);
    let bias = uniform(&mut r, 2, -0.5, 0.5);
    cases.push((
        "conv2d (same padding)",
        check_gradients(
            &[(vec![2, 5, 4], x), (vec![2, 2, 3, 3], k), (vec![2], bias)],
            seed,
            |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap(),
            |x| conv2d64(&x[0], &x[1], Some(&x[2]), (2, 5, 4), (2, 3, 3), 1, 1),
        ),
    ));

    let x = uniform(&mut r, 7 * 6, -1.0, 1.0);
    let k = uniform(&mut r, 2 * 9, -0.5, 0.5);
    cases.push((
        "conv2d (valid, stride 2)",
        check_gradients(
            &[(vec![1, 7, 6], x), (vec![2, 1, 3, 3], k)],
            seed,
            |t, v| t.conv2d(v[0], v[1], None, 2, 0).unwrap(),
            |x| conv2d64(&x[0], &x[1], None, (1, 7, 6), (2, 3, 3), 2, 0),
        ),
    ));

    let x = separated(&mut r, 2 * 5 * 6);
    cases.push((
        "maxpool2d",
        check_gradients(
            &[(vec![2, 5, 6], x)],
            seed,
            |t, v| t.maxpool2d(v[0]).unwrap(),
            |x| maxpool64(&x[0], 2, 5, 6),
        ),
    ));

    let x = uniform(&mut r, 24, -1.0, 1.0);
    cases.push((
        "reshape + transpose01",
        check_gradients(
            &[(vec![2, 3, 4], x)],
            seed,
            |t, v| {
                let tr = t.transpose01(v[0]).unwrap();
                t.reshape(tr, &[3, 8]).unwrap()
            },
            |x| {
                let mut out = Vec::new();
                for j in 0..3 {
                    for i in 0..2 {
                        out.extend_from_slice(&x[0][(i * 3 + j) * 4..(i * 3 + j) * 4 + 4]);
                    }
                }
                out
            },
        ),
    ));

    let a = uniform(&mut r, 6, -1.0, 1.0);
    let b = uniform(&mut r, 4, -1.0, 1.0);
    cases.push((
        "concat_last + slice_last",
        check_gradients(
            &[(vec![2, 3], a), (vec![2, 2], b)],
            seed,
            |t, v| {
                let c = t.concat_last(&[v[0], v[1]]).unwrap();
                t.slice_last(c, 1, 3).unwrap()
            },
            |x| {
                let mut out = Vec::new();
                for r in 0..2 {
                    let row: Vec<f64> = x[0][r * 3..r * 3 + 3]
                        .iter()
                        .chain(&x[1][r * 2..r * 2 + 2])
                        .cloned()
                        .collect();
                    out.extend_from_slice(&row[1..4]);
                }
                out
            },
        ),
    ));

    let a = uniform(&mut r, 8, -1.0, 1.0);
    let b = uniform(&mut r, 4, -1.0, 1.0);
    cases.push((
        "concat_rows + rows",
        check_gradients(
            &[(vec![2, 4], a), (vec![1, 4], b)],
            seed,
            |t, v| {
                let c = t.concat_rows(&[v[0], v[1]]).unwrap();
                t.rows(c, 1, 2).unwrap()
            },
            |x| x[0][4..8].iter().chain(&x[1]).cloned().collect(),
        ),
    ));

    let a = uniform(&mut r, 10, -1.0, 1.0);
    cases.push((
        "sum + scale",
        check_gradients(
            &[(vec![2, 5], a)],
            seed,
            |t, v| {
                let s = t.scale(v[0], -1.7);
                t.sum(s)
            },
            |x| vec![x[0].iter().sum::<f64>() * -1.7],
        ),
    ));

    let a = uniform(&mut r, 7, -2.0, 2.0);
    cases.push((
        "cross_entropy",
        check_gradients(
            &[(vec![1, 7], a)],
            seed,
            |t, v| t.cross_entropy(v[0], 3).unwrap(),
            |x| {
                let m = x[0].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = x[0].iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
                vec![lse - x[0][3]]
            },
        ),
    ));

    cases
}

// ---- streaming helpers ----

use simulst::encoding::{EncoderStream, StrategyKind};
use simulst::nn::{encode_offline, vgg_positions, ModelConfig, ModelParams, Vocab};

pub fn random_model(seed: u64, directions: usize) -> ModelParams {
    let cfg = ModelConfig {
        directions,
        ..ModelConfig::default()
    };
    ModelParams::init(cfg, Vocab::new("abcdefgh ".chars()).unwrap(), seed).unwrap()
}

pub fn random_frames(r: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<f32> {
    uniform(r, t * d, -1.0, 1.0)
}

/// Random read sizes in `1..=max` that sum to `t`.
pub fn random_reads(r: &mut ChaCha8Rng, t: usize, max: usize) -> Vec<usize> {
    let mut reads = Vec::new();
    let mut g = 0;
    while g < t {
        let n = r.gen_range(1..=max).min(t - g);
        reads.push(n);
        g += n;
    }
    reads
}

pub fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Re-encoding with a unidirectional model: after every feed the outputs
/// must equal the offline encoding of the prefix read so far.
pub fn check_reencode_prefixes(params: &ModelParams, frames: &[f32], reads: &[usize]) -> Result<(), String> {
    let d = params.config.feature_dim;
    let mut stream = EncoderStream::new(params, StrategyKind::UlstmReencode).map_err(|e| e.to_string())?;
    let mut g = 0;
    for (i, &n) in reads.iter().enumerate() {
        let last = i + 1 == reads.len();
        stream
            .feed(&frames[g * d..(g + n) * d], last)
            .map_err(|e| e.to_string())?;
        g += n;
        if vgg_positions(g) == 0 {
            if stream.positions() != 0 {
                return Err(format!("positions before 4 frames at g={g}"));
            }
            continue;
        }
        let (offline, _) = encode_offline(params, &frames[..g * d]).map_err(|e| e.to_string())?;
        if !same_bits(stream.outputs(), offline.data()) {
            return Err(format!("prefix mismatch after feed {i} (g={g})"));
        }
    }
    Ok(())
}

/// Bidirectional re-encoding: the final outputs equal the offline encoding.
pub fn check_blstm_final(params: &ModelParams, frames: &[f32], reads: &[usize]) -> Result<(), String> {
    let d = params.config.feature_dim;
    let mut stream = EncoderStream::new(params, StrategyKind::BlstmReencode).map_err(|e| e.to_string())?;
    let mut g = 0;
    for (i, &n) in reads.iter().enumerate() {
        stream
            .feed(&frames[g * d..(g + n) * d], i + 1 == reads.len())
            .map_err(|e| e.to_string())?;
        g += n;
    }
    let (offline, _) = encode_offline(params, frames).map_err(|e| e.to_string())?;
    if same_bits(stream.outputs(), offline.data()) {
        Ok(())
    } else {
        Err("final bidirectional outputs differ from offline".into())
    }
}

/// Runs overlap-and-compensate over a fixed `(k, s)` schedule and checks
/// that the kept spans tile `[0, 4·⌊T/4⌋)` without gaps or overlaps.
/// Returns the total number of kept positions.
pub fn check_tiling(params: &ModelParams, frames: &[f32], k: usize, s: usize) -> Result<usize, String> {
    let d = params.config.feature_dim;
    let t = frames.len() / d;
    let plan = simulst::segmentation::fixed_plan(t, k, s).map_err(|e| e.to_string())?;
    let mut stream = EncoderStream::new(params, StrategyKind::UlstmOverlap).map_err(|e| e.to_string())?;
    let segs = plan.segments();
    let mut g = 0;
    for (i, &n) in segs.iter().enumerate() {
        stream
            .feed(&frames[g * d..(g + n) * d], i + 1 == segs.len())
            .map_err(|e| e.to_string())?;
        g += n;
    }
    let mut at = 0;
    let mut kept = 0;
    for span in stream.kept_spans() {
        if span.start != at {
            return Err(format!(
                "span starts at {} but coverage ends at {at} (T={t}, k={k}, s={s})",
                span.start
            ));
        }
        if span.end - span.start != 4 * span.positions {
            return Err(format!("span {span:?} is not 4 frames per position"));
        }
        at = span.end;
        kept += span.positions;
    }
    if at != 4 * (t / 4) {
        return Err(format!(
            "coverage ends at {at}, expected {} (T={t}, k={k}, s={s})",
            4 * (t / 4)
        ));
    }
    if kept != vgg_positions(t) || stream.positions() != kept {
        return Err(format!("kept {kept} positions, offline has {}", vgg_positions(t)));
    }
    Ok(kept)
}

// ---- metric oracles ----

/// Lagging Difficulty evaluated straight from its definition: for each
/// target prefix, scan every link to find the furthest source word used.
pub fn ld_exhaustive(src_len: usize, tgt_len: usize, pairs: &[(usize, usize)]) -> f64 {
    let z: Vec<usize> = (1..=tgt_len)
        .map(|t| {
            pairs
                .iter()
                .filter(|&&(_, j)| j <= t)
                .map(|&(i, _)| i)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let tau = (1..=tgt_len).find(|&t| z[t - 1] == src_len).unwrap_or(tgt_len);
    let rate = src_len as f64 / tgt_len as f64;
    (1..=tau).map(|t| z[t - 1] as f64 - (t - 1) as f64 * rate).sum::<f64>() / tau as f64
}

/// A random non-empty set of 1-based links within `|x| × |y|`.
pub fn random_links(r: &mut ChaCha8Rng, sx: usize, sy: usize) -> Vec<(usize, usize)> {
    loop {
        let mut pairs = Vec::new();
        for i in 1..=sx {
            for j in 1..=sy {
                if r.gen_bool(0.3) {
                    pairs.push((i, j));
                }
            }
        }
        if !pairs.is_empty() {
            return pairs;
        }
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

pub const METRIC_TOL: f64 = 1e-9;

use simulst::metrics::{average_lagging, bleu, lagging_difficulty, AlignmentSet, BleuOptions};

fn expect(what: &str, got: f64, want: f64) -> Result<(), String> {
    if rel_close(got, want, METRIC_TOL) {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want}"))
    }
}

pub fn check_al_cases() -> Result<(), String> {
    let al = |d: &[f64]| average_lagging(d, 1000.0, 4).map_err(|e| e.to_string());
    expect("AL ideal", al(&[0.0, 250.0, 500.0, 750.0])?, 0.0)?;
    expect("AL read-all", al(&[1000.0; 4])?, 1000.0)?;
    // (500 - 0 + 600 - 250 + 1000 - 500) / 3
    expect("AL worked case", al(&[500.0, 600.0, 1000.0, 1000.0])?, 450.0)
}

pub fn check_ld_extremes() -> Result<(), String> {
    for n in 1..=8 {
        let diag = AlignmentSet::new("d", n, n, (1..=n).map(|i| (i, i)).collect()).map_err(|e| e.to_string())?;
        let inv = AlignmentSet::new("i", n, n, (1..=n).map(|i| (i, n + 1 - i)).collect()).map_err(|e| e.to_string())?;
        let ld = |a: &AlignmentSet| lagging_difficulty(a).map(|s| s.ld).map_err(|e| e.to_string());
        if ld(&diag)? != 1.0 {
            return Err(format!("LD of the {n}-word diagonal is {}", ld(&diag)?));
        }
        if ld(&inv)? != n as f64 {
            return Err(format!("LD of the {n}-word inversion is {}", ld(&inv)?));
        }
    }
    Ok(())
}

pub fn check_ld_scan(cases: usize, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..cases {
        let sx = r.gen_range(1..=6);
        let sy = r.gen_range(1..=6);
        let pairs = random_links(&mut r, sx, sy);
        let a = AlignmentSet::new(format!("u{case}"), sx, sy, pairs.clone()).map_err(|e| e.to_string())?;
        let got = lagging_difficulty(&a).map_err(|e| e.to_string())?.ld;
        expect(&format!("LD case {case} {pairs:?}"), got, ld_exhaustive(sx, sy, &pairs))?;
    }
    Ok(())
}

pub fn check_bleu_cases() -> Result<(), String> {
    let opts = BleuOptions::default();
    let b = |h: &[&str], r: &[&str]| bleu(h, r, opts).map_err(|e| e.to_string());
    let s = ["a b c d e f", "x y"];
    expect("BLEU identity", b(&s, &s)?, 1.0)?;
    // pooled precisions 8/9, 6/7, 4/5, 2/3 and equal lengths
    let want = (8.0f64 / 9.0 * 6.0 / 7.0 * 4.0 / 5.0 * 2.0 / 3.0).powf(0.25);
    expect(
        "BLEU two sentences",
        b(&["a b c d e", "a b c d"], &["a b c d f", "a b c d"])?,
        want,
    )?;
    // every precision is 1, no 4-grams exist, BP = e^(1 - 5/3)
    expect(
        "BLEU short hypothesis",
        b(&["a b c"], &["a b c d e"])?,
        (1.0f64 - 5.0 / 3.0).exp(),
    )
}
