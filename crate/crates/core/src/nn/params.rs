use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Vocab;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const FORGET_BIAS: f32 = 1.0;
const KERNEL: usize = 3;

/// Dimensions of the network. The VGG front-end always has two blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub vgg_channels: [usize; 2],
    pub encoder_layers: usize,
    pub hidden: usize,
    /// 1 for a unidirectional encoder, 2 for bidirectional.
    pub directions: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 16,
            vgg_channels: [4, 8],
            encoder_layers: 2,
            hidden: 32,
            directions: 1,
            embed_dim: 32,
            attention_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if !matches!(self.directions, 1 | 2) {
            return Err(Error::Config(format!(
                "directions must be 1 or 2, got {}",
                self.directions
            )));
        }
        if self.feature_dim < 4 {
            return Err(Error::Config(
                "feature dim must be at least 4 for two 2x2 poolings".into(),
            ));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.attention_dim == 0 || self.vgg_channels.contains(&0) {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Features per encoder position after the VGG front-end.
    pub fn vgg_features(&self) -> usize {
        self.vgg_channels[1] * (self.feature_dim / 2 / 2)
    }

    /// Width of an encoder output position.
    pub fn encoder_dim(&self) -> usize {
        self.hidden * self.directions
    }

    pub fn is_bidirectional(&self) -> bool {
        self.directions == 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VggBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

/// Gate layout along the 4H axis: input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

/// Additive attention: `e_j = v · tanh(W_enc h_j + W_dec s + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub w_enc: Tensor,
    pub w_dec: Tensor,
    pub bias: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub vgg: [VggBlock; 2],
    /// Indexed `[layer][direction]`.
    pub encoder: Vec<Vec<LstmWeights>>,
    pub decoder: [LstmWeights; 2],
    pub attention: AttentionWeights,
    pub embedding: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// Shapes of every parameter tensor in declaration order.
pub(crate) fn layout(cfg: &ModelConfig, vocab_len: usize) -> Vec<Vec<usize>> {
    let [c1, c2] = cfg.vgg_channels;
    let h = cfg.hidden;
    let mut shapes = Vec::new();
    for (cin, cout) in [(1, c1), (c1, c2)] {
        shapes.push(vec![cout, cin, KERNEL, KERNEL]);
        shapes.push(vec![cout]);
        shapes.push(vec![cout, cout, KERNEL, KERNEL]);
        shapes.push(vec![cout]);
    }
    for l in 0..cfg.encoder_layers {
        let input = if l == 0 { cfg.vgg_features() } else { cfg.encoder_dim() };
        for _ in 0..cfg.directions {
            shapes.push(vec![input, 4 * h]);
            shapes.push(vec![h, 4 * h]);
            shapes.push(vec![4 * h]);
        }
    }
    for l in 0..2 {
        let input = if l == 0 { cfg.embed_dim + cfg.encoder_dim() } else { h };
        shapes.push(vec![input, 4 * h]);
        shapes.push(vec![h, 4 * h]);
        shapes.push(vec![4 * h]);
    }
    shapes.push(vec![cfg.encoder_dim(), cfg.attention_dim]);
    shapes.push(vec![h, cfg.attention_dim]);
    shapes.push(vec![cfg.attention_dim]);
    shapes.push(vec![cfg.attention_dim, 1]);
    shapes.push(vec![vocab_len, cfg.embed_dim]);
    shapes.push(vec![h + cfg.encoder_dim(), vocab_len]);
    shapes.push(vec![vocab_len]);
    shapes
}

impl ModelParams {
    /// Seeded initialisation: He-uniform convolution kernels, Glorot-uniform
    /// matrices, zero biases except the LSTM forget gate at +1.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(&config, vocab.len())
            .into_iter()
            .map(|shape| {
                let n = shape.iter().product();
                let bound = match shape.as_slice() {
                    [_, cin, kh, kw] => (6.0 / (cin * kh * kw) as f32).sqrt(),
                    [rows, cols] => (6.0 / (rows + cols) as f32).sqrt(),
                    _ => 0.0,
                };
                let data = if bound == 0.0 {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                Tensor::new(shape, data).expect("layout shape")
            })
            .collect();
        let mut params = Self::from_tensors(config, vocab, tensors)?;
        let h = params.config.hidden;
        let lstms = params.encoder.iter_mut().flatten().chain(params.decoder.iter_mut());
        for w in lstms {
            for b in &mut w.bias.data_mut()[h..2 * h] {
                *b += FORGET_BIAS;
            }
        }
        Ok(params)
    }

    /// Assembles parameters from tensors in declaration order, validating
    /// every shape.
    pub fn from_tensors(config: ModelConfig, vocab: Vocab, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = layout(&config, vocab.len());
        if shapes.len() != tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (s, t) in shapes.iter().zip(&tensors) {
            if s.as_slice() != t.shape() {
                return Err(Error::shape("parameter", s, t.shape()));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let mut conv = || ConvLayer {
            kernels: next(),
            bias: next(),
        };
        let vgg = [
            VggBlock {
                conv1: conv(),
                conv2: conv(),
            },
            VggBlock {
                conv1: conv(),
                conv2: conv(),
            },
        ];
        let mut next = || it.next().expect("count checked");
        let mut lstm = || LstmWeights {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        };
        let encoder = (0..config.encoder_layers)
            .map(|_| (0..config.directions).map(|_| lstm()).collect())
            .collect();
        let decoder = [lstm(), lstm()];
        let mut next = || it.next().expect("count checked");
        let attention = AttentionWeights {
            w_enc: next(),
            w_dec: next(),
            bias: next(),
            v: next(),
        };
        let embedding = next();
        let out_w = next();
        let out_b = next();
        Ok(ModelParams {
            config,
            vocab,
            vgg,
            encoder,
            decoder,
            attention,
            embedding,
            out_w,
            out_b,
        })
    }

    /// All parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.vgg {
            for c in [&b.conv1, &b.conv2] {
                out.push(&c.kernels);
                out.push(&c.bias);
            }
        }
        for w in self.encoder.iter().flatten().chain(self.decoder.iter()) {
            out.extend([&w.w_ih, &w.w_hh, &w.bias]);
        }
        let a = &self.attention;
        out.extend([
            &a.w_enc,
            &a.w_dec,
            &a.bias,
            &a.v,
            &self.embedding,
            &self.out_w,
            &self.out_b,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.vgg {
            for c in [&mut b.conv1, &mut b.conv2] {
                out.push(&mut c.kernels);
                out.push(&mut c.bias);
            }
        }
        for w in self.encoder.iter_mut().flatten().chain(self.decoder.iter_mut()) {
            out.extend([&mut w.w_ih, &mut w.w_hh, &mut w.bias]);
        }
        let a = &mut self.attention;
        out.extend([&mut a.w_enc, &mut a.w_dec, &mut a.bias, &mut a.v]);
        out.extend([&mut self.embedding, &mut self.out_w, &mut self.out_b]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// A bidirectional model that computes the same translations: the
    /// forward direction is copied, the backward direction and every weight
    /// reading it are zero. It costs as much to run as any bidirectional
    /// model of the same size.
    pub fn bidirectional_twin(&self) -> Result<ModelParams> {
        if self.config.is_bidirectional() {
            return Err(Error::Config("model is already bidirectional".into()));
        }
        let h = self.config.hidden;
        let zero_lstm = |w: &LstmWeights, input: usize| LstmWeights {
            w_ih: Tensor::zeros(vec![input, 4 * h]),
            w_hh: Tensor::zeros(w.w_hh.shape().to_vec()),
            bias: Tensor::zeros(w.bias.shape().to_vec()),
        };
        let encoder = self
            .encoder
            .iter()
            .enumerate()
            .map(|(l, dirs)| {
                let fwd = &dirs[0];
                let fwd = LstmWeights {
                    w_ih: if l == 0 {
                        fwd.w_ih.clone()
                    } else {
                        pad_rows(&fwd.w_ih, h)
                    },
                    ..fwd.clone()
                };
                let input = fwd.w_ih.shape()[0];
                let bwd = zero_lstm(&fwd, input);
                vec![fwd, bwd]
            })
            .collect();
        let mut decoder = self.decoder.clone();
        decoder[0].w_ih = pad_rows(&decoder[0].w_ih, h);
        let mut attention = self.attention.clone();
        attention.w_enc = pad_rows(&attention.w_enc, h);
        Ok(ModelParams {
            config: ModelConfig {
                directions: 2,
                ..self.config.clone()
            },
            vocab: self.vocab.clone(),
            vgg: self.vgg.clone(),
            encoder,
            decoder,
            attention,
            embedding: self.embedding.clone(),
            out_w: pad_rows(&self.out_w, h),
            out_b: self.out_b.clone(),
        })
    }
}

/// Appends `extra` zero rows to a matrix.
fn pad_rows(m: &Tensor, extra: usize) -> Tensor {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut data = m.data().to_vec();
    data.resize((rows + extra) * cols, 0.0);
    Tensor::new(vec![rows + extra, cols], data).expect("row count matches data")
}

/// The parameters placed on a tape, in declaration order.
pub struct ParamVars {
    vars: Vec<Var>,
    layers: usize,
    directions: usize,
}

impl ParamVars {
    pub fn new<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> Self {
        ParamVars {
            vars: params.tensors().into_iter().map(|t| tape.param(t)).collect(),
            layers: params.config.encoder_layers,
            directions: params.config.directions,
        }
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }

    /// (kernels, bias) of conv `layer` (0 or 1) in VGG `block` (0 or 1).
    pub fn conv(&self, block: usize, layer: usize) -> (Var, Var) {
        let i = block * 4 + layer * 2;
        (self.vars[i], self.vars[i + 1])
    }

    fn lstm_at(&self, i: usize) -> super::LstmVars {
        super::LstmVars {
            w_ih: self.vars[i],
            w_hh: self.vars[i + 1],
            bias: self.vars[i + 2],
        }
    }

    pub fn encoder(&self, layer: usize, direction: usize) -> super::LstmVars {
        self.lstm_at(8 + (layer * self.directions + direction) * 3)
    }

    pub fn decoder(&self, layer: usize) -> super::LstmVars {
        self.lstm_at(8 + self.layers * self.directions * 3 + layer * 3)
    }

    fn tail(&self) -> usize {
        8 + (self.layers * self.directions + 2) * 3
    }

    /// (W_enc, W_dec, b, v).
    pub fn attention(&self) -> (Var, Var, Var, Var) {
        let i = self.tail();
        (self.vars[i], self.vars[i + 1], self.vars[i + 2], self.vars[i + 3])
    }

    pub fn embedding(&self) -> Var {
        self.vars[self.tail() + 4]
    }

    /// (W_out, b_out).
    pub fn output(&self) -> (Var, Var) {
        let i = self.tail() + 5;
        (self.vars[i], self.vars[i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new("abc ".chars()).unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(ModelConfig::default(), vocab(), 3).unwrap();
        let b = ModelParams::init(ModelConfig::default(), vocab(), 3).unwrap();
        let c = ModelParams::init(ModelConfig::default(), vocab(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let h = a.config.hidden;
        for w in a.encoder.iter().flatten() {
            let forget = &w.bias.data()[h..2 * h];
            assert!(forget.iter().all(|&x| (0.9..1.1).contains(&x)));
        }
        let bound = (6.0f32 / (a.embedding.len() / a.config.embed_dim + a.config.embed_dim) as f32).sqrt();
        assert!(a.embedding.data().iter().all(|x| x.abs() < bound));
        assert!(a.out_b.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tensor_order_roundtrips() {
        let cfg = ModelConfig {
            directions: 2,
            encoder_layers: 3,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(cfg.clone(), vocab(), 1).unwrap();
        let tensors: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        let q = ModelParams::from_tensors(cfg, vocab(), tensors).unwrap();
        assert_eq!(p, q);
        let mut tape = Tape::inference();
        let pv = ParamVars::new(&mut tape, &p);
        assert_eq!(tape.shape(pv.encoder(2, 1).w_hh), p.encoder[2][1].w_hh.shape());
        assert_eq!(tape.shape(pv.decoder(1).w_ih), p.decoder[1].w_ih.shape());
        assert_eq!(tape.shape(pv.attention().3), p.attention.v.shape());
        assert_eq!(tape.shape(pv.output().1), p.out_b.shape());
        assert_eq!(tape.shape(pv.embedding()), p.embedding.shape());
    }

    #[test]
    fn bidirectional_twin_translates_identically() {
        let p = ModelParams::init(ModelConfig::default(), vocab(), 5).unwrap();
        let twin = p.bidirectional_twin().unwrap();
        assert_eq!(twin.config.directions, 2);
        assert!(twin.bidirectional_twin().is_err());
        let shapes: Vec<Vec<usize>> = twin.tensors().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, layout(&twin.config, twin.vocab.len()));
        let frames: Vec<f32> = (0..40 * 16).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
        let (a, _) = crate::nn::encode_offline(&p, &frames).unwrap();
        let (b, _) = crate::nn::encode_offline(&twin, &frames).unwrap();
        let h = p.config.hidden;
        for (ra, rb) in a.data().chunks(h).zip(b.data().chunks(2 * h)) {
            assert_eq!(ra, &rb[..h]);
            assert!(rb[h..].iter().all(|&x| x == 0.0));
        }
        let ga = crate::nn::greedy_decode(&p, &a, 20).unwrap();
        let gb = crate::nn::greedy_decode(&twin, &b, 20).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            ModelConfig {
                directions: 3,
                ..ModelConfig::default()
            },
            ModelConfig {
                encoder_layers: 0,
                ..ModelConfig::default()
            },
        ] {
            assert!(matches!(ModelParams::init(cfg, vocab(), 0), Err(Error::Config(_))));
        }
    }
}
