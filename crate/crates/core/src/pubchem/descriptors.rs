use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PubChemError;

/// Maximum number of synonyms kept per compound.
pub const SYNONYM_CAP: usize = 20;

/// The PubChem descriptor set attached to each molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextDescriptors {
    pub cid: u64,
    pub iupac_name: String,
    pub molecular_formula: String,
    /// g/mol
    pub molecular_weight: f64,
    pub xlogp: Option<f64>,
    pub hbond_donors: u32,
    pub hbond_acceptors: u32,
    pub rotatable_bonds: u32,
    /// Topological polar surface area, A^2.
    pub tpsa: f64,
    pub formal_charge: i32,
    pub synonyms: Vec<String>,
    /// RFC 3339 fetch time.
    pub fetched_at: String,
    pub source_url: String,
}

impl TextDescriptors {
    pub fn validate(&self) -> Result<(), PubChemError> {
        let bad = |why: String| Err(PubChemError::Incomplete { cid: self.cid, reason: why });
        if self.cid == 0 {
            return bad("cid must be positive".into());
        }
        if !(self.molecular_weight.is_finite() && self.molecular_weight > 0.0) {
            return bad(format!("molecular weight {}", self.molecular_weight));
        }
        if !(self.tpsa.is_finite() && self.tpsa >= 0.0) {
            return bad(format!("tpsa {}", self.tpsa));
        }
        if self.xlogp.is_some_and(|x| !x.is_finite()) {
            return bad("non-finite xlogp".into());
        }
        Ok(())
    }
}

/// Case-insensitive, first-occurrence-wins deduplication, then truncation to
/// [`SYNONYM_CAP`].
pub fn dedup_synonyms<I: IntoIterator<Item = String>>(raw: I) -> Vec<String> {
    let mut seen = HashSet::new();
    raw.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty() && seen.insert(s.to_lowercase()))
        .take(SYNONYM_CAP)
        .collect()
}

fn or_na(s: &str) -> &str {
    if s.trim().is_empty() {
        "N/A"
    } else {
        s
    }
}

/// Renders the single-line description that is fed to the text embedder.
pub fn render_description(d: &TextDescriptors) -> String {
    let mut s = String::new();
    let xlogp = d.xlogp.map_or_else(|| "N/A".to_string(), |x| x.to_string());
    let synonyms = if d.synonyms.is_empty() {
        "N/A".to_string()
    } else {
        d.synonyms.join("; ")
    };
    let _ = write!(
        s,
        "IUPAC name: {}. Formula: {}. Molecular weight: {}. XLogP: {}. H-bond donors: {}. \
         H-bond acceptors: {}. Rotatable bonds: {}. TPSA: {}. Formal charge: {}. Synonyms: {}.",
        or_na(&d.iupac_name),
        or_na(&d.molecular_formula),
        d.molecular_weight,
        xlogp,
        d.hbond_donors,
        d.hbond_acceptors,
        d.rotatable_bonds,
        d.tpsa,
        d.formal_charge,
        synonyms,
    );
    s.replace(['\n', '\r', '\t'], " ")
}

/// Total atom count of a Hill-style formula such as `C2H6O` (charge
/// suffixes are ignored).
pub fn atom_count_from_formula(formula: &str) -> u32 {
    let mut total = 0u32;
    let chars: Vec<char> = formula.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_uppercase() {
            i += 1;
            while i < chars.len() && chars[i].is_ascii_lowercase() {
                i += 1;
            }
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let count: String = chars[start..i].iter().collect();
            total = total.saturating_add(count.parse().unwrap_or(1));
        } else {
            i += 1;
        }
    }
    total
}
