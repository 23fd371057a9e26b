use super::{ModelParams, ParamVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Hidden and cell vectors for each layer of a recurrent stack.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl LstmState {
    pub fn zeros(layers: usize, hidden: usize) -> Self {
        LstmState {
            layers: (0..layers)
                .map(|_| LayerState {
                    h: vec![0.0; hidden],
                    c: vec![0.0; hidden],
                })
                .collect(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers.first().map_or(0, |l| l.h.len())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

/// One LSTM cell update from pre-computed input gates `x·W_ih + b`.
fn cell(tape: &mut Tape<'_>, gates_x: Var, h: Var, c: Var, w_hh: Var) -> Result<(Var, Var)> {
    let hidden = tape.shape(c)[1];
    let rec = tape.matmul(h, w_hh)?;
    let gates = tape.add(gates_x, rec)?;
    let i = tape.slice_last(gates, 0, hidden)?;
    let f = tape.slice_last(gates, hidden, hidden)?;
    let g = tape.slice_last(gates, 2 * hidden, hidden)?;
    let o = tape.slice_last(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new);
    let h_new = tape.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Standard LSTM cell on a `[1×in]` input; returns the new `(h, c)`, each `[1×H]`.
pub fn lstm_step(tape: &mut Tape<'_>, x: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var)> {
    let (sh, sc, shh) = (tape.shape(h), tape.shape(c), tape.shape(w.w_hh));
    if sh != sc || sh.len() != 2 || sh[0] != 1 || shh[0] != sh[1] || shh[1] != 4 * sh[1] {
        return Err(Error::shape("lstm_step", sh, shh));
    }
    let xp = tape.matmul(x, w.w_ih)?;
    let gates_x = tape.add(xp, w.bias)?;
    cell(tape, gates_x, h, c, w.w_hh)
}

/// Runs one direction of one layer over every row of `x`; returns the
/// per-position outputs in position order and the final `(h, c)`.
fn run_direction(
    tape: &mut Tape<'_>,
    x: Var,
    w: LstmVars,
    (mut h, mut c): (Var, Var),
    reverse: bool,
) -> Result<(Var, Var, Var)> {
    let p = tape.shape(x)[0];
    let xp = tape.matmul(x, w.w_ih)?;
    let gates_all = tape.add(xp, w.bias)?;
    let mut outs = Vec::with_capacity(p);
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..p).rev())
    } else {
        Box::new(0..p)
    };
    for t in order {
        let row = tape.rows(gates_all, t, 1)?;
        (h, c) = cell(tape, row, h, c, w.w_hh)?;
        outs.push(h);
    }
    if reverse {
        outs.reverse();
    }
    let stacked = tape.concat_rows(&outs)?;
    Ok((stacked, h, c))
}

pub struct EncoderOutput {
    /// `[P × H·directions]`.
    pub outputs: Var,
    /// Final per-layer state of the left-to-right pass.
    pub final_state: LstmState,
}

/// Stacked LSTM encoder over `[P×F]` positions.
///
/// Unidirectional encoders thread `init` (zeros when absent) and return the
/// final state so a later call can continue the same recurrence. Bidirectional
/// encoders always start both passes from zeros and reject `init`.
pub fn encoder_forward(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    params: &ModelParams,
    positions: Var,
    init: Option<&LstmState>,
) -> Result<EncoderOutput> {
    let cfg = &params.config;
    let p = tape.shape(positions)[0];
    if p == 0 {
        return Err(Error::EmptyEncoderOutput);
    }
    if cfg.is_bidirectional() && init.is_some() {
        return Err(Error::Contract(
            "a bidirectional encoder cannot continue from a carried state".into(),
        ));
    }
    if let Some(s) = init {
        if s.layers.len() != cfg.encoder_layers || s.hidden() != cfg.hidden {
            return Err(Error::shape(
                "encoder init",
                &[s.layers.len(), s.hidden()],
                &[cfg.encoder_layers, cfg.hidden],
            ));
        }
    }
    let hidden = cfg.hidden;
    let mut x = positions;
    let mut final_state = LstmState { layers: Vec::new() };
    for layer in 0..cfg.encoder_layers {
        let start = match init {
            Some(s) => (
                tape.leaf(Tensor::row(s.layers[layer].h.clone()), false),
                tape.leaf(Tensor::row(s.layers[layer].c.clone()), false),
            ),
            None => (tape.zeros(&[1, hidden]), tape.zeros(&[1, hidden])),
        };
        let (fwd, h, c) = run_direction(tape, x, pv.encoder(layer, 0), start, false)?;
        final_state.layers.push(LayerState {
            h: tape.value(h).to_vec(),
            c: tape.value(c).to_vec(),
        });
        x = if cfg.is_bidirectional() {
            let zero = (tape.zeros(&[1, hidden]), tape.zeros(&[1, hidden]));
            let (bwd, _, _) = run_direction(tape, x, pv.encoder(layer, 1), zero, true)?;
            tape.concat_last(&[fwd, bwd])?
        } else {
            fwd
        };
    }
    Ok(EncoderOutput {
        outputs: x,
        final_state,
    })
}
