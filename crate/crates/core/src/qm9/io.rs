use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_xyz, Molecule, ParseError, TargetId};

/// Result of scanning a directory of `.xyz` files.
#[derive(Debug, Default)]
pub struct DirScan {
    /// Parsed molecules ordered by id.
    pub molecules: Vec<Molecule>,
    /// Files that failed to parse, by id.
    pub failures: Vec<(String, ParseError)>,
    /// Ids dropped by the exclusion list.
    pub excluded: Vec<String>,
}

/// Reads one file; the molecule id is the file stem.
pub fn read_file(path: &Path) -> io::Result<Result<Molecule, ParseError>> {
    let text = fs::read_to_string(path)?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(parse_xyz(&text).map(|mut m| {
        m.id = stem;
        m
    }))
}

/// Parses every `*.xyz` file under `dir` (non-recursive) in parallel.
///
/// Molecules whose gdb index is in `exclusions` are dropped. Output order is
/// by id, independent of thread scheduling.
pub fn read_dir(dir: &Path, exclusions: Option<&BTreeSet<u64>>) -> io::Result<DirScan> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xyz") && p.is_file())
        .collect();
    paths.sort();

    let parsed: Vec<io::Result<Result<Molecule, ParseError>>> =
        paths.par_iter().map(|p| read_file(p)).collect();

    let mut molecules = BTreeMap::new();
    let mut scan = DirScan::default();
    for (path, res) in paths.iter().zip(parsed) {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match res? {
            Ok(m) if exclusions.is_some_and(|ex| ex.contains(&m.index)) => scan.excluded.push(m.id),
            Ok(m) => {
                molecules.insert(m.id.clone(), m);
            }
            Err(e) => scan.failures.push((stem, e)),
        }
    }
    scan.molecules = molecules.into_values().collect();
    Ok(scan)
}

/// Reads the QM9 "uncharacterized" list: every line whose first field is an
/// integer contributes that gdb index. Header and comment lines are skipped.
pub fn load_exclusions(text: &str) -> BTreeSet<u64> {
    text.lines()
        .filter_map(|l| l.split_whitespace().next())
        .filter_map(|tok| tok.parse().ok())
        .collect()
}

/// One line of the molecule manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub atoms: usize,
    pub targets: BTreeMap<String, f64>,
}

impl From<&Molecule> for ManifestRecord {
    fn from(m: &Molecule) -> Self {
        ManifestRecord {
            id: m.id.clone(),
            atoms: m.n_atoms(),
            targets: TargetId::ALL
                .into_iter()
                .map(|t| (t.name().to_string(), m.targets.get(t)))
                .collect(),
        }
    }
}

/// Writes one JSON object per molecule per line.
pub fn write_manifest<W: Write>(molecules: &[Molecule], mut out: W) -> io::Result<()> {
    for m in molecules {
        let line = serde_json::to_string(&ManifestRecord::from(m)).map_err(io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
