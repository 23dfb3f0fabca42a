//! Continuous-filter message-passing encoder.
//!
//! Per iteration `t`, the message along edge `(i, j)` is
//! `filter(rbf_ij) * h_j`, summed into node `i`, and the node state is
//! updated residually: `h_i <- h_i + update(agg_i)`. The filter and update
//! networks are two dense layers each with shifted-softplus activations
//! (filter: after both layers; update: after the first). The graph
//! embedding is the sum of the final node states.

use thiserror::Error;

use crate::graph::MoleculeGraph;
use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::params::{Bound, Init, ModelConfig, ParamError, ParamStore};
use crate::qm9::Element;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("cannot pool an empty graph")]
    EmptyGraph,
}

pub const ATOM_EMBED: &str = "encoder.atom_embed";

pub fn filter1_w(t: usize) -> String {
    format!("encoder.interaction.{t}.filter1.weight")
}
pub fn filter1_b(t: usize) -> String {
    format!("encoder.interaction.{t}.filter1.bias")
}
pub fn filter2_w(t: usize) -> String {
    format!("encoder.interaction.{t}.filter2.weight")
}
pub fn filter2_b(t: usize) -> String {
    format!("encoder.interaction.{t}.filter2.bias")
}
pub fn update1_w(t: usize) -> String {
    format!("encoder.interaction.{t}.update1.weight")
}
pub fn update1_b(t: usize) -> String {
    format!("encoder.interaction.{t}.update1.bias")
}
pub fn update2_w(t: usize) -> String {
    format!("encoder.interaction.{t}.update2.weight")
}
pub fn update2_b(t: usize) -> String {
    format!("encoder.interaction.{t}.update2.bias")
}

/// Adds the encoder parameters. Weights here are stored `in x out`.
pub fn init_encoder(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let n = cfg.hidden;
    let k = cfg.rbf.n_centers;
    store.init(ATOM_EMBED, &[Element::ALL.len(), n], Init::Xavier, seed);
    for t in 0..cfg.iterations {
        store.init(&filter1_w(t), &[k, n], Init::Xavier, seed);
        store.init(&filter1_b(t), &[n], Init::Zeros, seed);
        store.init(&filter2_w(t), &[n, n], Init::Xavier, seed);
        store.init(&filter2_b(t), &[n], Init::Zeros, seed);
        store.init(&update1_w(t), &[n, n], Init::Xavier, seed);
        store.init(&update1_b(t), &[n], Init::Zeros, seed);
        store.init(&update2_w(t), &[n, n], Init::Xavier, seed);
        store.init(&update2_b(t), &[n], Init::Zeros, seed);
    }
}

/// Several molecule graphs merged into one disconnected graph.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub node_feats: Tensor,
    /// Message targets per edge.
    pub dst: Vec<usize>,
    /// Message sources per edge.
    pub src: Vec<usize>,
    pub rbf: Tensor,
    /// Which molecule each node belongs to.
    pub node_graph: Vec<usize>,
    pub n_graphs: usize,
}

impl GraphBatch {
    pub fn new(graphs: &[&MoleculeGraph]) -> GraphBatch {
        let k = graphs.first().map_or(0, |g| g.edge_rbf.shape()[1]);
        let n_nodes: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let n_edges: usize = graphs.iter().map(|g| g.n_edges()).sum();
        let mut feats = Vec::with_capacity(n_nodes * Element::ALL.len());
        let mut rbf = Vec::with_capacity(n_edges * k);
        let mut dst = Vec::with_capacity(n_edges);
        let mut src = Vec::with_capacity(n_edges);
        let mut node_graph = Vec::with_capacity(n_nodes);
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            feats.extend_from_slice(g.node_feats.data());
            rbf.extend_from_slice(g.edge_rbf.data());
            for &(i, j) in &g.edges {
                dst.push(i + offset);
                src.push(j + offset);
            }
            node_graph.extend(std::iter::repeat_n(gi, g.n_nodes()));
            offset += g.n_nodes();
        }
        GraphBatch {
            node_feats: Tensor::new(vec![n_nodes, Element::ALL.len()], feats).expect("node rows"),
            dst,
            src,
            rbf: Tensor::new(vec![n_edges, k], rbf).expect("edge rows"),
            node_graph,
            n_graphs: graphs.len(),
        }
    }

    pub fn single(graph: &MoleculeGraph) -> GraphBatch {
        GraphBatch::new(&[graph])
    }
}

/// Runs the interaction blocks and returns final node states `N x n`.
pub fn node_states(tape: &mut Tape, p: &Bound, batch: &GraphBatch, cfg: &ModelConfig) -> Result<Var, EncoderError> {
    let onehot = tape.constant(batch.node_feats.clone());
    let rbf = tape.constant(batch.rbf.clone());
    let n_nodes = batch.node_graph.len();
    let mut h = tape.matmul(onehot, p.var(ATOM_EMBED)?)?;
    for t in 0..cfg.iterations {
        let f = tape.matmul(rbf, p.var(&filter1_w(t))?)?;
        let f = tape.add_row(f, p.var(&filter1_b(t))?)?;
        let f = tape.shifted_softplus(f)?;
        let f = tape.matmul(f, p.var(&filter2_w(t))?)?;
        let f = tape.add_row(f, p.var(&filter2_b(t))?)?;
        let filter = tape.shifted_softplus(f)?;

        let h_src = tape.gather_rows(h, &batch.src)?;
        let msg = tape.mul(filter, h_src)?;
        let agg = tape.scatter_sum(msg, &batch.dst, n_nodes)?;

        let u = tape.matmul(agg, p.var(&update1_w(t))?)?;
        let u = tape.add_row(u, p.var(&update1_b(t))?)?;
        let u = tape.shifted_softplus(u)?;
        let u = tape.matmul(u, p.var(&update2_w(t))?)?;
        let u = tape.add_row(u, p.var(&update2_b(t))?)?;
        h = tape.add(h, u)?;
    }
    Ok(h)
}

/// Sum pooling of node rows into one row per molecule.
pub fn pool_batch(tape: &mut Tape, h: Var, batch: &GraphBatch) -> Result<Var, EncoderError> {
    let mut counts = vec![0usize; batch.n_graphs];
    for &g in &batch.node_graph {
        counts[g] += 1;
    }
    if batch.n_graphs == 0 || counts.contains(&0) {
        return Err(EncoderError::EmptyGraph);
    }
    Ok(tape.scatter_sum(h, &batch.node_graph, batch.n_graphs)?)
}

/// Column-wise sum of a node-feature matrix, accumulated in row order.
pub fn pool(node_feats: &Tensor) -> Result<Tensor, EncoderError> {
    let (rows, _) = node_feats.rows_cols().ok_or(NumericsError::Rank {
        op: "pool",
        shape: node_feats.shape().to_vec(),
    })?;
    if rows == 0 {
        return Err(EncoderError::EmptyGraph);
    }
    let out = crate::numerics::scatter_sum(node_feats, &vec![0; rows], 1)?;
    Ok(out.reshape(vec![node_feats.shape()[1]]).expect("one row"))
}

/// Encodes a batch into a `B x n` matrix of geometry embeddings.
pub fn encode_batch(tape: &mut Tape, p: &Bound, batch: &GraphBatch, cfg: &ModelConfig) -> Result<Var, EncoderError> {
    let h = node_states(tape, p, batch, cfg)?;
    pool_batch(tape, h, batch)
}

/// Geometry embedding `g` of one molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct GeomEmbedding(pub Vec<f64>);

impl GeomEmbedding {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other|| / ||self||`.
    pub fn rel_diff(&self, other: &GeomEmbedding) -> f64 {
        let d: f64 = self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        d / self.norm().max(f64::MIN_POSITIVE)
    }
}

/// Tape-free convenience wrapper around [`encode_batch`] for one graph.
pub fn encode(graph: &MoleculeGraph, params: &ParamStore, cfg: &ModelConfig) -> Result<GeomEmbedding, EncoderError> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let g = encode_batch(&mut tape, &p, &GraphBatch::single(graph), cfg)?;
    Ok(GeomEmbedding(tape.value(g).data().to_vec()))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // scalar oracles index like the formulas they transcribe
mod tests {
    use super::*;
    use crate::graph::{build_graph, RbfConfig};
    use crate::qm9::{Molecule, Targets};

    fn mol(elements: Vec<Element>, coords: Vec<[f64; 3]>) -> Molecule {
        let n = elements.len();
        Molecule {
            id: "t".into(),
            index: 0,
            elements,
            coords,
            targets: Targets([0.0; 15]),
            partial_charges: vec![0.0; n],
            trailer: vec![],
        }
    }

    fn ssp(x: f64) -> f64 {
        (0.5 * x.exp() + 0.5).ln()
    }

    #[test]
    fn pool_cases() {
        let one = Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(pool(&one).unwrap().data(), &[1.5, -2.0]);
        let two = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(pool(&two).unwrap().data(), &[4.0, 6.0]);
        let swapped = Tensor::from_rows(&[vec![3.0, 4.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(pool(&two).unwrap(), pool(&swapped).unwrap());
        assert!(matches!(pool(&Tensor::zeros(&[0, 2])), Err(EncoderError::EmptyGraph)));
    }

    #[test]
    fn single_atom_is_update_of_initial_embedding() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        init_encoder(&mut store, &cfg, 5);
        let g = build_graph(&mol(vec![Element::N], vec![[0.3, 0.1, 0.2]]), &cfg.rbf).unwrap();
        let a = encode(&g, &store, &cfg).unwrap();
        let b = encode(&g, &store, &cfg).unwrap();
        assert_eq!(a, b);

        // no edges: h1 = h0 + U2^T ssp(c1) + c2 with zero biases
        let n = cfg.hidden;
        let h0 = store.get(ATOM_EMBED).unwrap().row(Element::N.index()).to_vec();
        let u1 = vec![ssp(0.0); n];
        let w2 = store.get(&update2_w(0)).unwrap();
        for j in 0..n {
            let upd: f64 = (0..n).map(|i| u1[i] * w2.get2(i, j)).sum();
            assert!((a.0[j] - (h0[j] + upd)).abs() < 1e-15);
        }
    }

    /// Scalar re-derivation of one interaction with n = 2, K = 2, T = 1.
    #[test]
    fn three_atom_hand_computation() {
        let rbf = RbfConfig {
            cutoff: 5.0,
            n_centers: 2,
            gamma: 0.5,
        };
        let cfg = ModelConfig {
            hidden: 2,
            iterations: 1,
            text_dim: 1,
            rbf,
            ln_eps: 1e-5,
        };
        let m = mol(
            vec![Element::C, Element::O, Element::H],
            vec![[0.0, 0.0, 0.0], [1.2, 0.0, 0.0], [-0.5, 0.9, 0.0]],
        );
        let mut store = ParamStore::new();
        let emb = [[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6], [0.7, 0.8], [0.9, -1.0]];
        store.insert(ATOM_EMBED, Tensor::from_rows(&emb.map(|r| r.to_vec())).unwrap());
        let f1 = [[0.5, -0.25], [0.75, 1.0]];
        let f2 = [[1.0, 0.5], [-0.5, 0.25]];
        let u1 = [[0.2, 0.3], [-0.4, 0.1]];
        let u2 = [[0.6, -0.7], [0.8, 0.9]];
        let (bf1, bf2, bu1, bu2) = ([0.1, -0.1], [0.05, 0.0], [0.0, 0.2], [-0.3, 0.1]);
        let mat = |m: [[f64; 2]; 2]| Tensor::from_rows(&m.map(|r| r.to_vec())).unwrap();
        store.insert(filter1_w(0), mat(f1));
        store.insert(filter1_b(0), Tensor::vector(bf1.to_vec()));
        store.insert(filter2_w(0), mat(f2));
        store.insert(filter2_b(0), Tensor::vector(bf2.to_vec()));
        store.insert(update1_w(0), mat(u1));
        store.insert(update1_b(0), Tensor::vector(bu1.to_vec()));
        store.insert(update2_w(0), mat(u2));
        store.insert(update2_b(0), Tensor::vector(bu2.to_vec()));

        let graph = build_graph(&m, &rbf).unwrap();
        let got = encode(&graph, &store, &cfg).unwrap();

        // scalar oracle
        let centers = [0.0, 5.0];
        let elem_row = [1usize, 3, 0];
        let h0: Vec<[f64; 2]> = elem_row.iter().map(|&r| emb[r]).collect();
        let dist = |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        let mut g = [0.0; 2];
        for i in 0..3 {
            let mut agg = [0.0; 2];
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let d = dist(m.coords[i], m.coords[j]);
                let e = [(-0.5 * (d - centers[0]).powi(2)).exp(), (-0.5 * (d - centers[1]).powi(2)).exp()];
                let mut l1 = [0.0; 2];
                for c in 0..2 {
                    l1[c] = ssp(e[0] * f1[0][c] + e[1] * f1[1][c] + bf1[c]);
                }
                for c in 0..2 {
                    let filt = ssp(l1[0] * f2[0][c] + l1[1] * f2[1][c] + bf2[c]);
                    agg[c] += filt * h0[j][c];
                }
            }
            let mut a1 = [0.0; 2];
            for c in 0..2 {
                a1[c] = ssp(agg[0] * u1[0][c] + agg[1] * u1[1][c] + bu1[c]);
            }
            for c in 0..2 {
                let upd = a1[0] * u2[0][c] + a1[1] * u2[1][c] + bu2[c];
                g[c] += h0[i][c] + upd;
            }
        }
        for c in 0..2 {
            assert!((got.0[c] - g[c]).abs() < 1e-12, "{} vs {}", got.0[c], g[c]);
        }
    }

    #[test]
    fn batch_matches_individual_encodings() {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new();
        init_encoder(&mut store, &cfg, 2);
        let a = build_graph(&mol(vec![Element::C, Element::H], vec![[0.0; 3], [1.1, 0.0, 0.0]]), &cfg.rbf).unwrap();
        let b = build_graph(&mol(vec![Element::O], vec![[0.0; 3]]), &cfg.rbf).unwrap();
        let mut tape = Tape::new();
        let p = store.bind_constant(&mut tape);
        let g = encode_batch(&mut tape, &p, &GraphBatch::new(&[&a, &b]), &cfg).unwrap();
        let rows = tape.value(g).clone();
        assert_eq!(rows.row(0), encode(&a, &store, &cfg).unwrap().0.as_slice());
        assert_eq!(rows.row(1), encode(&b, &store, &cfg).unwrap().0.as_slice());
    }
}
