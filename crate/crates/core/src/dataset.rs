//! The multimodal dataset file (one record per included molecule) and its
//! conversion into training samples.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{build_graph, GraphError, MoleculeGraph, RbfConfig};
use crate::pubchem::{render_description, MultimodalManifest, TextDescriptors};
use crate::qm9::{parse_xyz, write_xyz, Molecule, ParseError, Targets};
use crate::text::{featurize_descriptors, sha256_hex, EmbeddingSet, NumericScaling, TextSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub cid: u64,
    /// The molecule in QM9 layout.
    pub xyz: String,
    pub descriptors: TextDescriptors,
    pub description: String,
    pub text_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub molecule: Molecule,
    pub descriptors: TextDescriptors,
    pub description: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("dataset line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("molecule {id}: {source}")]
    Parse { id: String, source: ParseError },
    #[error("molecule {id}: {source}")]
    Graph { id: String, source: GraphError },
    #[error("no embedding for cid {0}")]
    MissingEmbedding(u64),
    #[error("embedding for cid {0} was computed from a different description")]
    ChecksumMismatch(u64),
    #[error("dataset is empty")]
    Empty,
}

/// Joins parsed molecules with the included half of a manifest.
pub fn build_records(molecules: &[Molecule], manifest: &MultimodalManifest) -> Vec<DatasetRecord> {
    let by_id: std::collections::HashMap<&str, &Molecule> = molecules.iter().map(|m| (m.id.as_str(), m)).collect();
    manifest
        .included
        .iter()
        .filter_map(|(id, d)| {
            let m = by_id.get(id.as_str())?;
            let description = render_description(d);
            Some(DatasetRecord {
                id: id.clone(),
                cid: d.cid,
                xyz: write_xyz(m),
                descriptors: d.clone(),
                text_sha256: sha256_hex(&description),
                description,
            })
        })
        .collect()
}

pub fn write_dataset<W: Write>(records: &[DatasetRecord], mut out: W) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r).map_err(io::Error::other)?)?;
    }
    out.flush()
}

/// Input for the text embedder: one `{cid, text}` object per line.
pub fn write_descriptions<W: Write>(entries: &[DatasetEntry], mut out: W) -> io::Result<()> {
    let mut seen = BTreeSet::new();
    for e in entries {
        if seen.insert(e.descriptors.cid) {
            let line = serde_json::json!({ "cid": e.descriptors.cid, "text": e.description });
            writeln!(out, "{line}")?;
        }
    }
    out.flush()
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_dataset(text: &str) -> Result<Vec<DatasetEntry>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord = serde_json::from_str(line).map_err(|e| DatasetError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        let mut molecule = parse_xyz(&r.xyz).map_err(|source| DatasetError::Parse { id: r.id.clone(), source })?;
        molecule.id = r.id;
        if sha256_hex(&r.description) != r.text_sha256 {
            return Err(DatasetError::Format {
                line: i + 1,
                message: "text_sha256 does not match description".into(),
            });
        }
        out.push(DatasetEntry {
            molecule,
            descriptors: r.descriptors,
            description: r.description,
        });
    }
    Ok(out)
}

/// One training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub graph: MoleculeGraph,
    /// 768-wide text embedding.
    pub text: Vec<f64>,
    pub targets: Targets,
}

pub enum TextInput<'a> {
    Featurizer,
    File(&'a EmbeddingSet),
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub samples: Vec<Sample>,
    pub source: TextSource,
    /// Numeric-slot standardization, featurizer source only.
    pub scaling: Option<NumericScaling>,
}

/// Result of validating an embedding file against the dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EmbedCheck {
    pub checked: usize,
    pub missing: Vec<u64>,
    pub mismatched: Vec<u64>,
    /// Records for cids not present in the dataset.
    pub unused: usize,
}

impl EmbedCheck {
    pub fn ok(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty()
    }
}

pub fn check_embeddings(entries: &[DatasetEntry], set: &EmbeddingSet) -> EmbedCheck {
    let mut check = EmbedCheck::default();
    let mut used = BTreeSet::new();
    for e in entries {
        let cid = e.descriptors.cid;
        if !used.insert(cid) {
            continue;
        }
        check.checked += 1;
        match set.records.get(&cid) {
            None => check.missing.push(cid),
            Some(r) if r.text_sha256 != sha256_hex(&e.description) => check.mismatched.push(cid),
            Some(_) => {}
        }
    }
    check.unused = set.records.keys().filter(|c| !used.contains(c)).count();
    check
}

/// Builds graphs and text vectors for every entry, in entry order.
pub fn prepare(entries: &[DatasetEntry], rbf: &RbfConfig, input: TextInput<'_>) -> Result<Prepared, DatasetError> {
    if entries.is_empty() {
        return Err(DatasetError::Empty);
    }
    let (source, scaling) = match &input {
        TextInput::Featurizer => (
            TextSource::Featurizer,
            Some(NumericScaling::fit(entries.iter().map(|e| &e.descriptors))),
        ),
        TextInput::File(_) => (TextSource::File, None),
    };
    let samples = entries
        .par_iter()
        .map(|e| {
            let graph = build_graph(&e.molecule, rbf).map_err(|source| DatasetError::Graph {
                id: e.molecule.id.clone(),
                source,
            })?;
            let text = match (&input, &scaling) {
                (TextInput::File(set), _) => {
                    let cid = e.descriptors.cid;
                    let r = set.records.get(&cid).ok_or(DatasetError::MissingEmbedding(cid))?;
                    if r.text_sha256 != sha256_hex(&e.description) {
                        return Err(DatasetError::ChecksumMismatch(cid));
                    }
                    r.vector.clone()
                }
                (TextInput::Featurizer, Some(s)) => featurize_descriptors(&e.descriptors, s),
                (TextInput::Featurizer, None) => unreachable!("featurizer always has scaling"),
            };
            Ok(Sample {
                id: e.molecule.id.clone(),
                graph,
                text,
                targets: e.molecule.targets,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared {
        samples,
        source,
        scaling,
    })
}
