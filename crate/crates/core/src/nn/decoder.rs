use super::{lstm_step, ModelParams, ParamVars, BOS, EOS, PAD};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Recurrent state of the two decoder layers on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: [Var; 2],
    pub c: [Var; 2],
}

impl DecoderState {
    pub fn zeros(tape: &mut Tape<'_>, hidden: usize) -> Self {
        DecoderState {
            h: [tape.zeros(&[1, hidden]), tape.zeros(&[1, hidden])],
            c: [tape.zeros(&[1, hidden]), tape.zeros(&[1, hidden])],
        }
    }
}

pub struct StepOutput {
    /// `[1 × V]`.
    pub logits: Var,
    /// `[1 × P]` attention weights.
    pub attention: Var,
    pub state: DecoderState,
}

/// Projects encoder outputs `[P × E]` into attention key space `[P × A]`.
pub fn attention_keys(tape: &mut Tape<'_>, pv: &ParamVars, enc: Var) -> Result<Var> {
    let (w_enc, _, b, _) = pv.attention();
    let k = tape.matmul(enc, w_enc)?;
    tape.add(k, b)
}

/// One decoder step: attend with the previous top-layer state, feed
/// `[embed(prev); context]` through both LSTM layers, and project
/// `[s2; context]` to logits.
pub fn decode_step(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    enc: Var,
    keys: Var,
    prev_token: usize,
    state: DecoderState,
) -> Result<StepOutput> {
    let p = tape.shape(enc)[0];
    if p == 0 {
        return Err(Error::EmptyEncoderOutput);
    }
    let (_, w_dec, _, v) = pv.attention();
    let q = tape.matmul(state.h[1], w_dec)?;
    let pre = tape.add(keys, q)?;
    let e = tape.tanh(pre);
    let scores = tape.matmul(e, v)?;
    let scores = tape.reshape(scores, &[1, p])?;
    let attention = tape.softmax(scores)?;
    let ctx = tape.matmul(attention, enc)?;

    let emb = tape.rows(pv.embedding(), prev_token, 1)?;
    let x = tape.concat_last(&[emb, ctx])?;
    let (h1, c1) = lstm_step(tape, x, state.h[0], state.c[0], pv.decoder(0))?;
    let (h2, c2) = lstm_step(tape, h1, state.h[1], state.c[1], pv.decoder(1))?;

    let (w_out, b_out) = pv.output();
    let feat = tape.concat_last(&[h2, ctx])?;
    let logits = tape.matmul(feat, w_out)?;
    let logits = tape.add(logits, b_out)?;
    Ok(StepOutput {
        logits,
        attention,
        state: DecoderState {
            h: [h1, h2],
            c: [c1, c2],
        },
    })
}

/// Teacher-forced mean cross-entropy of `target` followed by EOS.
pub fn sequence_loss(tape: &mut Tape<'_>, pv: &ParamVars, hidden: usize, enc: Var, target: &[usize]) -> Result<Var> {
    let keys = attention_keys(tape, pv, enc)?;
    let mut state = DecoderState::zeros(tape, hidden);
    let mut prev = BOS;
    let mut losses = Vec::with_capacity(target.len() + 1);
    for &y in target.iter().chain(std::iter::once(&EOS)) {
        let out = decode_step(tape, pv, enc, keys, prev, state)?;
        losses.push(tape.cross_entropy(out.logits, y)?);
        state = out.state;
        prev = y;
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, 1.0 / losses.len() as f32))
}

/// Result of a decoder step that has not been committed to the cache.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub attention: Vec<f32>,
    h: [Vec<f32>; 2],
    c: [Vec<f32>; 2],
}

impl Prediction {
    /// Highest-scoring emittable token (any id but PAD and BOS); ties go to
    /// the lowest id.
    pub fn argmax(&self) -> usize {
        greedy_token(&self.logits)
    }
}

fn greedy_token(x: &[f32]) -> usize {
    let mut best = None;
    for (i, &v) in x.iter().enumerate() {
        if i == PAD || i == BOS {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(EOS, |(i, _)| i)
}

/// Inference-side decoder state: the current encoder memory with its
/// attention keys, the recurrent state, and the last emitted token.
#[derive(Clone, Debug)]
pub struct DecoderCache {
    enc: Vec<f32>,
    keys: Vec<f32>,
    positions: usize,
    h: [Vec<f32>; 2],
    c: [Vec<f32>; 2],
    prev: usize,
}

impl DecoderCache {
    pub fn new(params: &ModelParams) -> Self {
        let h = params.config.hidden;
        DecoderCache {
            enc: Vec::new(),
            keys: Vec::new(),
            positions: 0,
            h: [vec![0.0; h], vec![0.0; h]],
            c: [vec![0.0; h], vec![0.0; h]],
            prev: BOS,
        }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn prev_token(&self) -> usize {
        self.prev
    }

    pub fn encoder_outputs(&self) -> &[f32] {
        &self.enc
    }

    fn project(params: &ModelParams, rows: &Tensor) -> Result<Vec<f32>> {
        let mut tape = Tape::inference();
        let pv = ParamVars::new(&mut tape, params);
        let enc = tape.leaf(rows.clone(), false);
        let k = attention_keys(&mut tape, &pv, enc)?;
        Ok(tape.value(k).to_vec())
    }

    fn check_width(params: &ModelParams, t: &Tensor) -> Result<()> {
        let e = params.config.encoder_dim();
        if t.shape().len() != 2 || t.shape()[1] != e {
            return Err(Error::shape("decoder memory", t.shape(), &[e]));
        }
        Ok(())
    }

    /// Replaces the encoder memory and recomputes every key.
    pub fn set_encoder(&mut self, params: &ModelParams, enc: &Tensor) -> Result<()> {
        Self::check_width(params, enc)?;
        self.keys = if enc.rows() == 0 {
            Vec::new()
        } else {
            Self::project(params, enc)?
        };
        self.enc = enc.data().to_vec();
        self.positions = enc.rows();
        Ok(())
    }

    /// Appends new encoder positions, projecting only the new rows.
    pub fn append_encoder(&mut self, params: &ModelParams, rows: &Tensor) -> Result<()> {
        Self::check_width(params, rows)?;
        if rows.rows() == 0 {
            return Ok(());
        }
        self.keys.extend(Self::project(params, rows)?);
        self.enc.extend_from_slice(rows.data());
        self.positions += rows.rows();
        Ok(())
    }

    /// Runs one step from the current state without changing it.
    pub fn predict(&self, params: &ModelParams) -> Result<Prediction> {
        if self.positions == 0 {
            return Err(Error::EmptyEncoderOutput);
        }
        let cfg = &params.config;
        let mut tape = Tape::inference();
        let pv = ParamVars::new(&mut tape, params);
        let enc = tape.constant(&[self.positions, cfg.encoder_dim()], &self.enc)?;
        let keys = tape.constant(&[self.positions, cfg.attention_dim], &self.keys)?;
        let hd = cfg.hidden;
        let state = DecoderState {
            h: [
                tape.constant(&[1, hd], &self.h[0])?,
                tape.constant(&[1, hd], &self.h[1])?,
            ],
            c: [
                tape.constant(&[1, hd], &self.c[0])?,
                tape.constant(&[1, hd], &self.c[1])?,
            ],
        };
        let out = decode_step(&mut tape, &pv, enc, keys, self.prev, state)?;
        let val = |v: Var| tape.value(v).to_vec();
        Ok(Prediction {
            logits: val(out.logits),
            attention: val(out.attention),
            h: [val(out.state.h[0]), val(out.state.h[1])],
            c: [val(out.state.c[0]), val(out.state.c[1])],
        })
    }

    /// Commits `pred` with `token` as the emitted output.
    pub fn commit(&mut self, pred: Prediction, token: usize) {
        self.h = pred.h;
        self.c = pred.c;
        self.prev = token;
    }
}

/// Greedy decoding over a complete encoder memory; stops at EOS or after
/// `max_len` tokens. The returned ids exclude EOS.
pub fn greedy_decode(params: &ModelParams, enc: &Tensor, max_len: usize) -> Result<Vec<usize>> {
    let mut cache = DecoderCache::new(params);
    cache.set_encoder(params, enc)?;
    let mut out = Vec::new();
    while out.len() < max_len {
        let pred = cache.predict(params)?;
        let tok = pred.argmax();
        if tok == EOS {
            break;
        }
        cache.commit(pred, tok);
        out.push(tok);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelConfig, Vocab};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams {
        ModelParams::init(ModelConfig::default(), Vocab::new("abc ".chars()).unwrap(), 5).unwrap()
    }

    fn memory(p: &ModelParams, rows: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = p.config.encoder_dim();
        Tensor::new(vec![rows, e], (0..rows * e).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn attention_is_a_distribution() {
        let p = model();
        let mut cache = DecoderCache::new(&p);
        cache.set_encoder(&p, &memory(&p, 7, 1)).unwrap();
        for _ in 0..4 {
            let pred = cache.predict(&p).unwrap();
            assert_eq!(pred.attention.len(), 7);
            assert!(pred.attention.iter().all(|&a| a >= 0.0));
            assert!((pred.attention.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            let t = pred.argmax();
            cache.commit(pred, t);
        }
    }

    #[test]
    fn single_position_gets_all_attention() {
        let p = model();
        let mut cache = DecoderCache::new(&p);
        cache.set_encoder(&p, &memory(&p, 1, 2)).unwrap();
        assert_eq!(cache.predict(&p).unwrap().attention, vec![1.0]);
    }

    #[test]
    fn identical_positions_share_attention_equally() {
        let p = model();
        let one = memory(&p, 1, 3);
        let twice = Tensor::new(vec![2, one.len()], [one.data(), one.data()].concat()).unwrap();
        let mut cache = DecoderCache::new(&p);
        cache.set_encoder(&p, &twice).unwrap();
        assert_eq!(cache.predict(&p).unwrap().attention, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_memory_is_an_error() {
        let p = model();
        let cache = DecoderCache::new(&p);
        assert!(matches!(cache.predict(&p), Err(Error::EmptyEncoderOutput)));
    }

    #[test]
    fn appended_keys_equal_recomputed_keys() {
        let p = model();
        let all = memory(&p, 9, 4);
        let e = p.config.encoder_dim();
        let mut whole = DecoderCache::new(&p);
        whole.set_encoder(&p, &all).unwrap();
        let mut parts = DecoderCache::new(&p);
        for (a, b) in [(0, 2), (2, 3), (3, 9)] {
            let rows = Tensor::new(vec![b - a, e], all.data()[a * e..b * e].to_vec()).unwrap();
            parts.append_encoder(&p, &rows).unwrap();
        }
        assert_eq!(parts.keys, whole.keys);
        assert_eq!(parts.predict(&p).unwrap().logits, whole.predict(&p).unwrap().logits);
    }

    #[test]
    fn cache_matches_training_graph() {
        let p = model();
        let mem = memory(&p, 5, 6);
        let mut cache = DecoderCache::new(&p);
        cache.set_encoder(&p, &mem).unwrap();
        let mut tape = Tape::new();
        let pv = ParamVars::new(&mut tape, &p);
        let enc = tape.leaf(mem.clone(), false);
        let keys = attention_keys(&mut tape, &pv, enc).unwrap();
        let mut state = DecoderState::zeros(&mut tape, p.config.hidden);
        let mut prev = BOS;
        for tok in [3, 4, 5] {
            let out = decode_step(&mut tape, &pv, enc, keys, prev, state).unwrap();
            let pred = cache.predict(&p).unwrap();
            assert_eq!(tape.value(out.logits), pred.logits.as_slice());
            cache.commit(pred, tok);
            state = out.state;
            prev = tok;
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let p = model();
        let mut tape = Tape::new();
        let pv = ParamVars::new(&mut tape, &p);
        let enc = tape.leaf(memory(&p, 4, 7), false);
        let loss = sequence_loss(&mut tape, &pv, p.config.hidden, enc, &[3, 4, 3]).unwrap();
        let l = tape.value(loss)[0];
        let uniform = (p.vocab.len() as f32).ln();
        assert!((l - uniform).abs() < 0.5, "{l} vs {uniform}");
        tape.backward(loss).unwrap();
        let g = tape.grad(pv.embedding()).unwrap();
        assert!(g.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn greedy_respects_length_cap() {
        let p = model();
        let out = greedy_decode(&p, &memory(&p, 3, 8), 4).unwrap();
        assert!(out.len() <= 4);
        assert!(out.iter().all(|&t| t != EOS));
    }

    #[test]
    fn greedy_skips_pad_and_bos_and_prefers_lowest_tie() {
        assert_eq!(greedy_token(&[9.0, 9.0, 1.0, 3.0, 3.0]), 3);
        assert_eq!(greedy_token(&[9.0, 9.0, 4.0, 3.0]), EOS);
    }
}
