//! Molecule to graph conversion: one-hot element nodes, cutoff-radius edges
//! and a Gaussian radial basis expansion of each edge length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;
use crate::qm9::{Element, Molecule};

/// Closest allowed approach between two atoms, in Angstrom.
pub const MIN_SEPARATION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("atoms {i} and {j} are {distance:.2e} A apart (coincident)")]
    Coincident { i: usize, j: usize, distance: f64 },
    #[error("distance {distance} outside (0, {cutoff}]")]
    OutOfRange { distance: f64, cutoff: f64 },
    #[error("invalid RBF configuration: {0}")]
    Config(String),
}

/// Gaussian basis with fixed, evenly spaced centres on `[0, cutoff]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfConfig {
    pub cutoff: f64,
    pub n_centers: usize,
    pub gamma: f64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        RbfConfig {
            cutoff: 5.0,
            n_centers: 50,
            gamma: 10.0,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n_centers < 2 {
            return Err(GraphError::Config(format!("need at least 2 centers, got {}", self.n_centers)));
        }
        if !(self.cutoff.is_finite() && self.cutoff > 0.0) {
            return Err(GraphError::Config(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(GraphError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<f64> {
        let k = self.n_centers;
        (0..k).map(|i| self.cutoff * i as f64 / (k - 1) as f64).collect()
    }
}

/// `exp(-gamma (d - c_k)^2)` for every centre `c_k`.
pub fn rbf_expand(distance: f64, cfg: &RbfConfig) -> Result<Vec<f64>, GraphError> {
    cfg.validate()?;
    if !(distance > 0.0 && distance <= cfg.cutoff) {
        return Err(GraphError::OutOfRange {
            distance,
            cutoff: cfg.cutoff,
        });
    }
    Ok(expand_unchecked(distance, &cfg.centers(), cfg.gamma))
}

fn expand_unchecked(distance: f64, centers: &[f64], gamma: f64) -> Vec<f64> {
    centers
        .iter()
        .map(|c| (-gamma * (distance - c) * (distance - c)).exp())
        .collect()
}

/// Graph view of a molecule.
///
/// Edge `(i, j)` carries the message from source `j` into target `i`.
/// Edges are sorted by `(i, j)` and the set is symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct MoleculeGraph {
    pub elements: Vec<Element>,
    /// `N x 5` one-hot rows over H, C, N, O, F.
    pub node_feats: Tensor,
    pub edges: Vec<(usize, usize)>,
    /// Interatomic distance per edge, Angstrom.
    pub edge_dist: Vec<f64>,
    /// `E x K` basis values per edge.
    pub edge_rbf: Tensor,
}

impl MoleculeGraph {
    pub fn n_nodes(&self) -> usize {
        self.elements.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

pub fn one_hot(elements: &[Element]) -> Tensor {
    let mut t = Tensor::zeros(&[elements.len(), Element::ALL.len()]);
    for (i, e) in elements.iter().enumerate() {
        t.data_mut()[i * Element::ALL.len() + e.index()] = 1.0;
    }
    t
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let rel = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt()
}

/// Builds the cutoff graph. Only relative vectors `r_j - r_i` enter.
pub fn build_graph(m: &Molecule, cfg: &RbfConfig) -> Result<MoleculeGraph, GraphError> {
    cfg.validate()?;
    let n = m.n_atoms();
    let centers = cfg.centers();
    let mut edges = Vec::new();
    let mut edge_dist = Vec::new();
    let mut rbf = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = distance(&m.coords[i], &m.coords[j]);
            if d.is_nan() || d <= MIN_SEPARATION {
                let (i, j) = (i.min(j), i.max(j));
                return Err(GraphError::Coincident { i, j, distance: d });
            }
            if d <= cfg.cutoff {
                edges.push((i, j));
                edge_dist.push(d);
                rbf.extend(expand_unchecked(d, &centers, cfg.gamma));
            }
        }
    }
    let edge_rbf = Tensor::new(vec![edges.len(), cfg.n_centers], rbf).expect("rbf rows match edges");
    Ok(MoleculeGraph {
        elements: m.elements.clone(),
        node_feats: one_hot(&m.elements),
        edges,
        edge_dist,
        edge_rbf,
    })
}
