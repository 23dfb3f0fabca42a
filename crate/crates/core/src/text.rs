//! Text embeddings: the 768-wide vector per molecule, either read from an
//! embedding file or computed by the built-in descriptor featurizer, and the
//! learnable projection down to the fused width.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numerics::{NumericsError, Tape, Var};
use crate::params::{Bound, Init, ModelConfig, ParamError, ParamStore};
use crate::pubchem::{atom_count_from_formula, TextDescriptors};

pub const TEXT_DIM: usize = 768;
pub const NUMERIC_SLOTS: usize = 9;
pub const HASH_DIM: usize = TEXT_DIM - NUMERIC_SLOTS;
const HASH_SEED: u64 = 0x6d6f_6c66_7573_6531;

pub const PROJ_WEIGHT: &str = "text.projection.weight";
pub const PROJ_BIAS: &str = "text.projection.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextSource {
    File,
    Featurizer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub cid: u64,
    pub text_sha256: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Parsed embedding file.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingSet {
    pub records: BTreeMap<u64, EmbeddingRecord>,
    /// Comment lines (leading `#` stripped), typically the exporter header.
    pub header: Vec<String>,
    /// Records that replaced an earlier record with the same cid.
    pub duplicates: usize,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl EmbeddingRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.vector.len() != TEXT_DIM {
            return Err(format!(
                "cid {}: vector has {} values, expected {TEXT_DIM}",
                self.cid,
                self.vector.len()
            ));
        }
        if let Some(i) = self.vector.iter().position(|v| !v.is_finite()) {
            return Err(format!("cid {}: non-finite value at position {i}", self.cid));
        }
        if !is_sha256_hex(&self.text_sha256) {
            return Err(format!("cid {}: text_sha256 is not 64 lowercase hex digits", self.cid));
        }
        Ok(())
    }
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingSet, EmbeddingError> {
    let mut set = EmbeddingSet::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            set.header.push(comment.trim().to_string());
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(trimmed).map_err(|e| EmbeddingError::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        rec.validate()
            .map_err(|message| EmbeddingError::Format { line: lineno, message })?;
        if set.records.insert(rec.cid, rec).is_some() {
            set.duplicates += 1;
        }
    }
    if set.duplicates > 0 {
        log::warn!("{} duplicate cid records, last occurrence kept", set.duplicates);
    }
    Ok(set)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet, EmbeddingError> {
    parse_embeddings(&fs::read_to_string(path)?)
}

/// Writes records in the order given. `header` lines are emitted as `# `
/// comments first.
pub fn save_embeddings<'a, W: Write>(
    mut out: W,
    header: &[String],
    records: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> io::Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).map_err(io::Error::other)?)?;
    }
    out.flush()
}

/// Per-slot standardization of the numeric descriptor block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericScaling {
    pub mean: [f64; NUMERIC_SLOTS],
    pub std: [f64; NUMERIC_SLOTS],
}

impl Default for NumericScaling {
    fn default() -> Self {
        NumericScaling {
            mean: [0.0; NUMERIC_SLOTS],
            std: [1.0; NUMERIC_SLOTS],
        }
    }
}

fn raw_numeric(d: &TextDescriptors) -> [f64; NUMERIC_SLOTS] {
    [
        d.molecular_weight,
        d.xlogp.unwrap_or(0.0),
        f64::from(d.hbond_donors),
        f64::from(d.hbond_acceptors),
        f64::from(d.rotatable_bonds),
        d.tpsa,
        f64::from(d.formal_charge),
        f64::from(atom_count_from_formula(&d.molecular_formula)),
        if d.xlogp.is_some() { 1.0 } else { 0.0 },
    ]
}

impl NumericScaling {
    /// Mean and population std per slot; constant slots get std 1.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a TextDescriptors>) -> NumericScaling {
        let rows: Vec<[f64; NUMERIC_SLOTS]> = records.into_iter().map(raw_numeric).collect();
        if rows.is_empty() {
            return NumericScaling::default();
        }
        let n = rows.len() as f64;
        let mut s = NumericScaling::default();
        for k in 0..NUMERIC_SLOTS {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
            s.mean[k] = mean;
            s.std[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        s
    }
}

fn hash_token(token: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ HASH_SEED;
    for &b in token {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // final avalanche so the low bits used for the bucket are well mixed
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^ (h >> 33)
}

fn hash_trigrams(field: &str, block: &mut [f64]) {
    let chars: Vec<char> = field.trim().to_lowercase().chars().collect();
    let mut buf = [0u8; 12];
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = hash_token(&buf[..len]);
        let bucket = (h % HASH_DIM as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        block[bucket] += sign;
    }
}

/// Deterministic 768-wide stand-in for a pretrained text embedding: nine
/// standardized numeric slots followed by signed-hashed character trigrams
/// of the name, formula and synonyms, L2-normalized over the hashed block.
pub fn featurize_descriptors(d: &TextDescriptors, scaling: &NumericScaling) -> Vec<f64> {
    let mut v = vec![0.0; TEXT_DIM];
    for (k, raw) in raw_numeric(d).into_iter().enumerate() {
        v[k] = (raw - scaling.mean[k]) / scaling.std[k];
    }
    let block = &mut v[NUMERIC_SLOTS..];
    hash_trigrams(&d.iupac_name, block);
    hash_trigrams(&d.molecular_formula, block);
    for s in &d.synonyms {
        hash_trigrams(s, block);
    }
    let norm = block.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        block.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Adds the projection head `P`: weight `768 x d` (stored `in x out`), bias `d`.
pub fn init_text_head(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    store.init(PROJ_WEIGHT, &[TEXT_DIM, cfg.text_dim], Init::Xavier, seed);
    store.init(PROJ_BIAS, &[cfg.text_dim], Init::Zeros, seed);
}

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// `t_p = t W + b` on the tape for a `B x 768` batch of text embeddings.
pub fn project(tape: &mut Tape, t: Var, p: &Bound) -> Result<Var, ProjectError> {
    let w = p.var(PROJ_WEIGHT)?;
    let b = p.var(PROJ_BIAS)?;
    let tw = tape.matmul(t, w)?;
    Ok(tape.add_row(tw, b)?)
}
