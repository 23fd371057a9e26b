use super::{encoder_forward, LstmState, ModelParams, ParamVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Encoder positions produced from `frames` input frames: two 2×2 poolings.
pub fn vgg_positions(frames: usize) -> usize {
    frames / 2 / 2
}

/// Runs the two VGG blocks over a `T×D` frame slice (row-major) and returns a
/// `[⌊⌊T/2⌋/2⌋ × F]` tensor, one row per encoder position.
///
/// Each block is conv3×3 → ReLU → conv3×3 → ReLU → maxpool 2×2, with zero
/// "same" padding. Time is the height axis, features the width axis.
pub fn vgg_forward<'a>(tape: &mut Tape<'a>, pv: &ParamVars, params: &ModelParams, frames: &'a [f32]) -> Result<Var> {
    let d = params.config.feature_dim;
    if !frames.len().is_multiple_of(d) {
        return Err(Error::shape("vgg_forward", &[frames.len()], &[d]));
    }
    let t = frames.len() / d;
    if t < 4 {
        return Err(Error::TooFewFrames(t));
    }
    let mut x = tape.constant(&[1, t, d], frames)?;
    for block in 0..2 {
        for layer in 0..2 {
            let (k, b) = pv.conv(block, layer);
            let y = tape.conv2d(x, k, Some(b), 1, 1)?;
            x = tape.relu(y);
        }
        x = tape.maxpool2d(x)?;
    }
    // [C × T' × D'] → [T' × C × D'] → [T' × C·D']
    let shape = tape.shape(x).to_vec();
    let x = tape.transpose01(x)?;
    tape.reshape(x, &[shape[1], shape[0] * shape[2]])
}

/// Full-sequence VGG + encoder pass without gradient recording.
pub fn encode_offline(params: &ModelParams, frames: &[f32]) -> Result<(Tensor, LstmState)> {
    let mut tape = Tape::inference();
    let pv = ParamVars::new(&mut tape, params);
    let positions = vgg_forward(&mut tape, &pv, params, frames)?;
    let out = encoder_forward(&mut tape, &pv, params, positions, None)?;
    Ok((tape.tensor(out.outputs), out.final_state))
}
