//! On-disk corpus layout:
//!
//! | file             | content                                              |
//! |------------------|------------------------------------------------------|
//! | `features.simf`  | binary frames (see [`write_features`])               |
//! | `source.txt`     | one source string per line                           |
//! | `target.txt`     | one reference translation per line                   |
//! | `boundaries.tsv` | `<id> TAB start:end,...` word extents in frames      |
//! | `align.txt`      | 0-based `i-j` word alignment pairs per line          |
//! | `corpus.json`    | generator spec, cipher, ids and reversal flags       |

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cipher, Corpus, SyntheticSpec, Utterance};
use crate::error::{Error, Result};
use crate::metrics::AlignmentSet;
use crate::segmentation::WordBoundaryTable;

const MAGIC: &[u8; 4] = b"SIMF";

/// One utterance's frames as stored in a feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub num_frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

/// `SIMF`, u32 count, then per utterance: u32 id length, id bytes, u32 T,
/// u32 D, `T×D` f32; all little-endian.
pub fn write_features<'a>(
    w: &mut impl Write,
    seqs: impl ExactSizeIterator<Item = (&'a str, usize, usize, &'a [f32])>,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(seqs.len() as u32).to_le_bytes())?;
    for (id, t, d, data) in seqs {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&(t as u32).to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        for x in data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_features(r: &mut impl Read) -> Result<Vec<FeatureSequence>> {
    let trunc = |e: std::io::Error| Error::Format(format!("truncated feature file: {e}"));
    let u32_of = |r: &mut dyn Read| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(trunc)?;
        Ok(u32::from_le_bytes(b))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a SIMF feature file".into()));
    }
    let count = u32_of(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = u32_of(r)? as usize;
        let mut id = vec![0u8; n];
        r.read_exact(&mut id).map_err(trunc)?;
        let id = String::from_utf8(id).map_err(|_| Error::Format("utterance id is not UTF-8".into()))?;
        let t = u32_of(r)? as usize;
        let d = u32_of(r)? as usize;
        let mut raw = vec![0u8; t * d * 4];
        r.read_exact(&mut raw).map_err(trunc)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(FeatureSequence {
            id,
            num_frames: t,
            dim: d,
            data,
        });
    }
    Ok(out)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureSequence>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(&mut BufReader::new(f))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: SyntheticSpec,
    cipher: Cipher,
    utterances: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    reversed: bool,
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads one-line-per-utterance text.
pub fn load_lines(path: &Path) -> Result<Vec<String>> {
    read_lines(path)
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let feat = dir.join("features.simf");
    let f = File::create(&feat).map_err(|e| Error::io(&feat, e))?;
    let mut w = BufWriter::new(f);
    let seqs = corpus.utterances.iter().map(|u| {
        (
            u.id.as_str(),
            u.num_frames,
            corpus.spec.feature_dim,
            u.frames.as_slice(),
        )
    });
    write_features(&mut w, seqs)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&feat, e))?;

    let utts = &corpus.utterances;
    write_lines(&dir.join("source.txt"), utts.iter().map(|u| u.source.as_str()))?;
    write_lines(&dir.join("target.txt"), utts.iter().map(|u| u.target.as_str()))?;
    let aligns: Vec<String> = utts
        .iter()
        .map(|u| {
            let v: Vec<String> = u.alignment.iter().map(|(i, j)| format!("{i}-{j}")).collect();
            v.join(" ")
        })
        .collect();
    write_lines(&dir.join("align.txt"), aligns.iter().map(String::as_str))?;
    let mut table = WordBoundaryTable::new();
    for u in utts {
        table.insert(u.id.clone(), u.words.clone());
    }
    table.write(&dir.join("boundaries.tsv"))?;
    let manifest = Manifest {
        spec: corpus.spec.clone(),
        cipher: corpus.cipher.clone(),
        utterances: utts
            .iter()
            .map(|u| ManifestEntry {
                id: u.id.clone(),
                reversed: u.reversed,
            })
            .collect(),
    };
    let path = dir.join("corpus.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join("corpus.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let feats = load_features(&dir.join("features.simf"))?;
    let sources = read_lines(&dir.join("source.txt"))?;
    let targets = read_lines(&dir.join("target.txt"))?;
    let aligns = read_lines(&dir.join("align.txt"))?;
    let bounds = WordBoundaryTable::read(&dir.join("boundaries.tsv"))?;
    let n = manifest.utterances.len();
    for (name, len) in [
        ("features.simf", feats.len()),
        ("source.txt", sources.len()),
        ("target.txt", targets.len()),
        ("align.txt", aligns.len()),
    ] {
        if len != n {
            return Err(Error::Format(format!(
                "{name} has {len} entries, corpus.json lists {n}"
            )));
        }
    }
    let mut utterances = Vec::with_capacity(n);
    for (i, entry) in manifest.utterances.into_iter().enumerate() {
        let f = &feats[i];
        if f.id != entry.id || f.dim != manifest.spec.feature_dim {
            return Err(Error::Format(format!("feature record {i} does not match {}", entry.id)));
        }
        let words = bounds
            .get(&entry.id)
            .ok_or_else(|| Error::Format(format!("no word boundaries for {}", entry.id)))?
            .to_vec();
        let src_words = sources[i].split(' ').count();
        let tgt_words = targets[i].split(' ').count();
        let align = AlignmentSet::parse_line(entry.id.clone(), &aligns[i], src_words, tgt_words)?;
        utterances.push(Utterance {
            id: entry.id,
            source: sources[i].clone(),
            target: targets[i].clone(),
            frames: f.data.clone(),
            num_frames: f.num_frames,
            words,
            alignment: align.pairs.iter().map(|&(a, b)| (a - 1, b - 1)).collect(),
            reversed: entry.reversed,
        });
    }
    Ok(Corpus {
        spec: manifest.spec,
        cipher: manifest.cipher,
        utterances,
    })
}
