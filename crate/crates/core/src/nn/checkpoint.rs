//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! b"SSTM"  u32 version
//! u32 × 8  feature_dim, vgg_channels[0], vgg_channels[1], encoder_layers,
//!          hidden, directions, embed_dim, attention_dim
//! u32 len, UTF-8 bytes     vocabulary symbols
//! u32 count, then per tensor: u32 ndim, u32 × ndim dims, f32 × numel
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParams, Vocab};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSTM";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn to_u32(v: usize) -> std::io::Result<u32> {
    u32::try_from(v).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "value exceeds u32"))
}

fn write_inner(w: &mut impl Write, params: &ModelParams) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let c = &params.config;
    for v in [
        c.feature_dim,
        c.vgg_channels[0],
        c.vgg_channels[1],
        c.encoder_layers,
        c.hidden,
        c.directions,
        c.embed_dim,
        c.attention_dim,
    ] {
        put_u32(w, to_u32(v)?)?;
    }
    let vocab: String = params.vocab.symbols().iter().collect();
    put_u32(w, to_u32(vocab.len())?)?;
    w.write_all(vocab.as_bytes())?;
    let tensors = params.tensors();
    put_u32(w, to_u32(tensors.len())?)?;
    for t in tensors {
        put_u32(w, to_u32(t.shape().len())?)?;
        for &d in t.shape() {
            put_u32(w, to_u32(d)?)?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    write_inner(w, params).map_err(|e| Error::Format(format!("writing checkpoint: {e}")))
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut f = [0usize; 8];
    for v in &mut f {
        *v = get_u32(r)? as usize;
    }
    let config = ModelConfig {
        feature_dim: f[0],
        vgg_channels: [f[1], f[2]],
        encoder_layers: f[3],
        hidden: f[4],
        directions: f[5],
        embed_dim: f[6],
        attention_dim: f[7],
    };
    let n = get_u32(r)? as usize;
    let mut bytes = vec![0u8; n];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated vocabulary: {e}")))?;
    let symbols = String::from_utf8(bytes).map_err(|_| Error::Format("vocabulary is not UTF-8".into()))?;
    let vocab = Vocab::new(symbols.chars())?;
    let count = get_u32(r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let ndim = get_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated tensor data: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    ModelParams::from_tensors(config, vocab, tensors)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}
