//! QM9 extended-XYZ records: parsing, writing, target selection and
//! per-split target normalization.

mod io;
mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_exclusions, read_dir, read_file, write_manifest, DirScan, ManifestRecord};
pub use parse::{parse_number, parse_xyz, write_xyz, ParseError};

/// The five elements that occur in QM9.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
}

impl Element {
    pub const ALL: [Element; 5] = [Element::H, Element::C, Element::N, Element::O, Element::F];

    /// Position in the one-hot node encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Element::ALL.into_iter().find(|e| e.symbol() == s)
    }

    /// Standard atomic weight in g/mol.
    pub fn atomic_mass(self) -> f64 {
        match self {
            Element::H => 1.008,
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// The fifteen scalar properties on a QM9 property line, in file order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetId {
    A,
    B,
    C,
    Mu,
    Alpha,
    Homo,
    Lumo,
    Gap,
    R2,
    Zpve,
    U0,
    U298,
    H298,
    G298,
    Cv,
}

impl TargetId {
    pub const ALL: [TargetId; 15] = [
        TargetId::A,
        TargetId::B,
        TargetId::C,
        TargetId::Mu,
        TargetId::Alpha,
        TargetId::Homo,
        TargetId::Lumo,
        TargetId::Gap,
        TargetId::R2,
        TargetId::Zpve,
        TargetId::U0,
        TargetId::U298,
        TargetId::H298,
        TargetId::G298,
        TargetId::Cv,
    ];

    /// Properties a model may be trained on; the rotational constants are
    /// parsed but never benchmarked.
    pub const BENCHMARK: [TargetId; 12] = [
        TargetId::Mu,
        TargetId::Alpha,
        TargetId::Homo,
        TargetId::Lumo,
        TargetId::Gap,
        TargetId::R2,
        TargetId::Zpve,
        TargetId::U0,
        TargetId::U298,
        TargetId::H298,
        TargetId::G298,
        TargetId::Cv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_benchmark(self) -> bool {
        !matches!(self, TargetId::A | TargetId::B | TargetId::C)
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetId::A => "a",
            TargetId::B => "b",
            TargetId::C => "c",
            TargetId::Mu => "mu",
            TargetId::Alpha => "alpha",
            TargetId::Homo => "homo",
            TargetId::Lumo => "lumo",
            TargetId::Gap => "gap",
            TargetId::R2 => "r2",
            TargetId::Zpve => "zpve",
            TargetId::U0 => "u0",
            TargetId::U298 => "u298",
            TargetId::H298 => "h298",
            TargetId::G298 => "g298",
            TargetId::Cv => "cv",
        }
    }

    /// Human-readable property name as used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            TargetId::A => "Rotational constant A",
            TargetId::B => "Rotational constant B",
            TargetId::C => "Rotational constant C",
            TargetId::Mu => "Dipole Moment",
            TargetId::Alpha => "Isotropic Polarizability",
            TargetId::Homo => "HOMO",
            TargetId::Lumo => "LUMO",
            TargetId::Gap => "HOMO-LUMO Gap",
            TargetId::R2 => "Electronic Spatial Extent",
            TargetId::Zpve => "ZPVE",
            TargetId::U0 => "Internal Energy (0 K)",
            TargetId::U298 => "Internal Energy (298.15 K)",
            TargetId::H298 => "Enthalpy (298.15 K)",
            TargetId::G298 => "Free Energy (298.15 K)",
            TargetId::Cv => "Heat Capacity (298.15 K)",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            TargetId::A | TargetId::B | TargetId::C => "GHz",
            TargetId::Mu => "D",
            TargetId::Alpha => "bohr^3",
            TargetId::R2 => "bohr^2",
            TargetId::Cv => "cal/(mol K)",
            _ => "Ha",
        }
    }
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetId {
    type Err = TargetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let alias = match lower.as_str() {
            "u" => "u298",
            "h" => "h298",
            "g" => "g298",
            other => other,
        };
        TargetId::ALL
            .into_iter()
            .find(|t| t.name() == alias)
            .ok_or_else(|| TargetError::Unknown(s.to_string()))
    }
}

/// All fifteen property values of one molecule, indexed by [`TargetId`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets(pub [f64; 15]);

impl Targets {
    pub fn get(&self, t: TargetId) -> f64 {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: TargetId, value: f64) {
        self.0[t.index()] = value;
    }
}

/// One parsed QM9 record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub id: String,
    /// Index from the `gdb <index>` tag.
    pub index: u64,
    pub elements: Vec<Element>,
    /// Cartesian coordinates in Angstrom.
    pub coords: Vec<[f64; 3]>,
    pub targets: Targets,
    /// Mulliken charges; parsed but not used as model input.
    pub partial_charges: Vec<f64>,
    /// Frequency, SMILES and InChI lines, kept verbatim.
    pub trailer: Vec<String>,
}

impl Molecule {
    pub fn n_atoms(&self) -> usize {
        self.elements.len()
    }

    /// InChI of the relaxed geometry (the last InChI on the trailer line).
    pub fn inchi(&self) -> Option<&str> {
        self.trailer
            .iter()
            .rev()
            .flat_map(|l| l.split_whitespace().rev())
            .find(|tok| tok.starts_with("InChI="))
    }

    /// SMILES of the relaxed geometry (the last SMILES on its trailer line).
    pub fn smiles(&self) -> Option<&str> {
        let line = self.trailer.get(1)?;
        if line.contains("InChI=") {
            return None;
        }
        line.split_whitespace().last()
    }

    /// Rigidly shifted copy.
    pub fn translated(&self, offset: [f64; 3]) -> Molecule {
        let mut m = self.clone();
        for c in &mut m.coords {
            for k in 0..3 {
                c[k] += offset[k];
            }
        }
        m
    }

    /// Copy with coordinates mapped through a 3x3 matrix (row-major).
    pub fn transformed(&self, rot: [[f64; 3]; 3]) -> Molecule {
        let mut m = self.clone();
        for c in &mut m.coords {
            let v = *c;
            for (k, row) in rot.iter().enumerate() {
                c[k] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            }
        }
        m
    }

    /// Copy whose atom `i` is the original atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let mut m = self.clone();
        m.elements = perm.iter().map(|&p| self.elements[p]).collect();
        m.coords = perm.iter().map(|&p| self.coords[p]).collect();
        m.partial_charges = perm.iter().map(|&p| self.partial_charges[p]).collect();
        m
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("unknown target {0:?}")]
    Unknown(String),
    #[error("target {0} is parsed but not supported as a benchmark target")]
    Unsupported(TargetId),
    #[error("cannot normalize an empty target list")]
    Empty,
    #[error("target values have zero variance")]
    Degenerate,
}

/// Returns a benchmark property in its native unit.
pub fn select_target(m: &Molecule, t: TargetId) -> Result<f64, TargetError> {
    if !t.is_benchmark() {
        return Err(TargetError::Unsupported(t));
    }
    Ok(m.targets.get(t))
}

/// Standardization `(y - mean) / std` with population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit(ys: &[f64]) -> Result<Normalizer, TargetError> {
        if ys.is_empty() {
            return Err(TargetError::Empty);
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std.is_nan() || std <= 0.0 || std <= mean.abs() * 1e-15 {
            return Err(TargetError::Degenerate);
        }
        Ok(Normalizer { mean, std })
    }

    pub fn transform(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Fits a [`Normalizer`] on the selected target and returns the transformed
/// values alongside it.
pub fn normalize_targets(
    molecules: &[Molecule],
    t: TargetId,
) -> Result<(Normalizer, Vec<f64>), TargetError> {
    let ys = molecules
        .iter()
        .map(|m| select_target(m, t))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = Normalizer::fit(&ys)?;
    let zs = ys.iter().map(|&y| norm.transform(y)).collect();
    Ok((norm, zs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn molecule_with(t: TargetId, v: f64) -> Molecule {
        let mut targets = Targets([0.0; 15]);
        targets.set(t, v);
        Molecule {
            id: "x".into(),
            index: 1,
            elements: vec![Element::C],
            coords: vec![[0.0; 3]],
            targets,
            partial_charges: vec![0.0],
            trailer: vec![],
        }
    }

    #[test]
    fn select_returns_native_value() {
        let m = molecule_with(TargetId::Homo, -0.25);
        assert_eq!(select_target(&m, TargetId::Homo).unwrap(), -0.25);
    }

    #[test]
    fn rotational_constants_are_unsupported() {
        let m = molecule_with(TargetId::A, 157.7);
        for t in [TargetId::A, TargetId::B, TargetId::C] {
            assert_eq!(select_target(&m, t), Err(TargetError::Unsupported(t)));
        }
        assert_eq!(TargetId::BENCHMARK.len(), 12);
        assert!(TargetId::BENCHMARK.iter().all(|t| t.is_benchmark()));
    }

    #[test]
    fn target_names_round_trip() {
        for t in TargetId::ALL {
            assert_eq!(t.name().parse::<TargetId>().unwrap(), t);
        }
        assert!("nope".parse::<TargetId>().is_err());
    }

    #[test]
    fn normalizer_cases() {
        assert_eq!(Normalizer::fit(&[1.0, 1.0, 1.0]), Err(TargetError::Degenerate));
        let n = Normalizer::fit(&[0.0, 2.0]).unwrap();
        assert_eq!((n.mean, n.std), (1.0, 1.0));
        assert_eq!([n.transform(0.0), n.transform(2.0)], [-1.0, 1.0]);

        let ys = [-0.3877, -0.2571, -0.2928, 0.0012, 7.5];
        let n = Normalizer::fit(&ys).unwrap();
        for y in ys {
            assert!((n.inverse(n.transform(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_over_molecules() {
        let ms = vec![molecule_with(TargetId::Gap, 0.0), molecule_with(TargetId::Gap, 2.0)];
        let (n, zs) = normalize_targets(&ms, TargetId::Gap).unwrap();
        assert_eq!(n.mean, 1.0);
        assert_eq!(zs, vec![-1.0, 1.0]);
        assert!(normalize_targets(&ms, TargetId::B).is_err());
    }
}
