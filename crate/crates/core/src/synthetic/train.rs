use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Utterance;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::{bleu, BleuOptions};
use crate::nn::{encoder_forward, sequence_loss, vgg_forward, ModelParams, ParamVars};
use crate::online::{offline_translate, DecodePolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// SGD with momentum.
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f32,
    /// Global gradient-norm clip.
    pub clip: f32,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f32,
    /// Restore the parameters of the epoch with the best held-out BLEU.
    pub keep_best: bool,
    pub batch: usize,
    pub seed: u64,
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            optimizer: OptimizerKind::Adam,
            lr: 0.005,
            momentum: 0.9,
            clip: 1.0,
            lr_decay: 0.95,
            keep_best: true,
            batch: 8,
            seed: 1,
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_bleu: f64,
    pub seconds: f64,
}

/// Teacher-forced loss and parameter gradients for one utterance.
pub fn example_gradients(params: &ModelParams, utt: &Utterance) -> Result<(f32, Vec<Vec<f32>>)> {
    let target = params.vocab.encode(&utt.target)?;
    let mut tape = Tape::new();
    let pv = ParamVars::new(&mut tape, params);
    let pos = vgg_forward(&mut tape, &pv, params, &utt.frames)?;
    let enc = encoder_forward(&mut tape, &pv, params, pos, None)?;
    let loss = sequence_loss(&mut tape, &pv, params.config.hidden, enc.outputs, &target)?;
    tape.backward(loss)?;
    let grads = pv
        .all()
        .iter()
        .map(|&v| tape.grad(v).expect("parameters require grad").into_owned())
        .collect();
    Ok((tape.value(loss)[0], grads))
}

/// Mean loss over `batch` and the mean of the per-example gradients, summed
/// in batch order so the result does not depend on scheduling.
pub fn batch_gradients(params: &ModelParams, batch: &[&Utterance]) -> Result<(f64, Vec<Vec<f32>>)> {
    let per: Vec<(f32, Vec<Vec<f32>>)> = batch
        .par_iter()
        .map(|u| example_gradients(params, u))
        .collect::<Result<_>>()?;
    let mut iter = per.into_iter();
    let (l0, mut acc) = iter.next().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let mut loss = l0 as f64;
    for (l, g) in iter {
        loss += l as f64;
        for (a, b) in acc.iter_mut().zip(g) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    let scale = 1.0 / batch.len() as f32;
    for a in &mut acc {
        for x in a.iter_mut() {
            *x *= scale;
        }
    }
    Ok((loss / batch.len() as f64, acc))
}

const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// SGD with momentum or Adam, both after global-norm gradient clipping.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    beta1: f32,
    clip: f32,
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(params: &ModelParams, cfg: &TrainConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.lr,
            beta1: cfg.momentum,
            clip: cfg.clip,
            step: 0,
            first: zeros(),
            second: if cfg.optimizer == OptimizerKind::Adam {
                zeros()
            } else {
                Vec::new()
            },
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut ModelParams, mut grads: Vec<Vec<f32>>) {
        let norm = grads
            .iter()
            .flatten()
            .map(|&g| (g as f64) * (g as f64))
            .sum::<f64>()
            .sqrt() as f32;
        if self.clip > 0.0 && norm > self.clip {
            let s = self.clip / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        self.step += 1;
        let b1 = self.beta1;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((t, v), g) in params.tensors_mut().into_iter().zip(&mut self.first).zip(&grads) {
                    for ((p, vel), &gr) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *vel = b1 * *vel + gr;
                        *p -= self.lr * *vel;
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                let state = self.first.iter_mut().zip(&mut self.second);
                for ((t, (m, v)), g) in params.tensors_mut().into_iter().zip(state).zip(&grads) {
                    for (((p, mi), vi), &gr) in t.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *mi = b1 * *mi + (1.0 - b1) * gr;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gr * gr;
                        *p -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Corpus BLEU of offline greedy translations.
pub fn offline_bleu(params: &ModelParams, utts: &[Utterance]) -> Result<f64> {
    let policy = DecodePolicy::default();
    let hyps: Vec<String> = utts
        .par_iter()
        .map(|u| offline_translate(params, &u.frames, &policy))
        .collect::<Result<_>>()?;
    let refs: Vec<&str> = utts.iter().map(|u| u.target.as_str()).collect();
    bleu(&hyps, &refs, BleuOptions::default())
}

/// Trains in place on `train`, scoring `heldout` after every epoch.
/// `on_epoch` sees each report as it is produced. With `keep_best` and a
/// non-empty held-out set, `params` ends at the best-scoring epoch.
pub fn train(
    params: &mut ModelParams,
    train: &[Utterance],
    heldout: &[Utterance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Config("no training utterances".into()));
    }
    let mut opt = Optimizer::new(params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Utterance> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(params, &batch)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: loss as f32,
                });
            }
            opt.step(params, grads);
            total += loss;
            batches += 1;
        }
        let heldout_bleu = if heldout.is_empty() {
            f64::NAN
        } else {
            offline_bleu(params, heldout)?
        };
        let report = EpochReport {
            epoch,
            train_loss: total / batches as f64,
            heldout_bleu,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.4}, held-out BLEU {:.4} ({:.1}s)",
            report.train_loss,
            report.heldout_bleu,
            report.seconds
        );
        on_epoch(&report);
        if cfg.keep_best
            && best
                .as_ref()
                .map_or(heldout_bleu.is_finite(), |(b, _)| heldout_bleu > *b)
        {
            best = Some((heldout_bleu, params.clone()));
        }
        reports.push(report);
        opt.set_lr(opt.lr() * cfg.lr_decay);
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok(reports)
}
