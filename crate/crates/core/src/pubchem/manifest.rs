use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::client::{PubChemClient, Resolution};
use super::descriptors::TextDescriptors;
use super::PubChemError;
use crate::qm9::Molecule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    NotFound,
    Incomplete,
    NetworkExhausted,
    ParseError,
}

impl ExclusionReason {
    pub fn code(self) -> &'static str {
        match self {
            ExclusionReason::NotFound => "not-found",
            ExclusionReason::Incomplete => "incomplete",
            ExclusionReason::NetworkExhausted => "network-exhausted",
            ExclusionReason::ParseError => "parse-error",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: ExclusionReason,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultimodalManifest {
    /// (molecule id, descriptors) in input order.
    pub included: Vec<(String, TextDescriptors)>,
    pub excluded: Vec<Exclusion>,
}

impl MultimodalManifest {
    pub fn histogram(&self) -> BTreeMap<ExclusionReason, usize> {
        let mut h = BTreeMap::new();
        for e in &self.excluded {
            *h.entry(e.reason).or_insert(0) += 1;
        }
        h
    }

    /// Whether any molecule was dropped for a transient reason; a rerun may
    /// recover it since such outcomes are never cached.
    pub fn has_transient(&self) -> bool {
        self.excluded.iter().any(|e| e.reason == ExclusionReason::NetworkExhausted)
    }
}

fn classify(e: &PubChemError) -> ExclusionReason {
    match e {
        PubChemError::Incomplete { .. } => ExclusionReason::Incomplete,
        PubChemError::Decode(_) => ExclusionReason::ParseError,
        _ => ExclusionReason::NetworkExhausted,
    }
}

fn lookup(m: &Molecule, client: &PubChemClient) -> Result<Option<TextDescriptors>, PubChemError> {
    let mut keys = Vec::new();
    keys.extend(m.inchi());
    keys.extend(m.smiles());
    if keys.is_empty() {
        return Ok(None);
    }
    for key in keys {
        if let Resolution::Found(cid) = client.resolve_cid(key)? {
            return client.fetch_descriptors(cid).map(Some);
        }
    }
    Ok(None)
}

/// Keeps only molecules with a full descriptor record. Every other molecule
/// lands in the exclusion list with a reason code; nothing here is fatal.
pub fn build_multimodal_manifest(molecules: &[Molecule], client: &PubChemClient) -> MultimodalManifest {
    let mut out = MultimodalManifest::default();
    for m in molecules {
        match lookup(m, client) {
            Ok(Some(d)) => out.included.push((m.id.clone(), d)),
            Ok(None) => out.excluded.push(Exclusion {
                id: m.id.clone(),
                reason: ExclusionReason::NotFound,
                detail: "no exact structure match".into(),
            }),
            Err(e) => out.excluded.push(Exclusion {
                id: m.id.clone(),
                reason: classify(&e),
                detail: e.to_string(),
            }),
        }
    }
    log::info!("{} included, {} excluded", out.included.len(), out.excluded.len());
    for (reason, n) in out.histogram() {
        log::info!("  {reason}: {n}");
    }
    out
}
