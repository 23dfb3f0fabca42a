//! The two model variants compared by the ablation: geometry-only and
//! multimodal (geometry + projected text, gated fusion).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode_batch, init_encoder, EncoderError, GraphBatch};
use crate::fusion::{fuse, geometry_only_head, init_fusion, init_geometry_head, predict, FusionError};
use crate::graph::MoleculeGraph;
use crate::numerics::{NumericsError, Tape, Tensor, Var};
use crate::params::{Bound, ModelConfig, ParamStore};
use crate::text::{init_text_head, project, ProjectError, TEXT_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    GeometryOnly,
    Multimodal,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::GeometryOnly, Modality::Multimodal];

    pub fn name(self) -> &'static str {
        match self {
            Modality::GeometryOnly => "geometry-only",
            Modality::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "geometry-only" | "geometry" => Ok(Modality::GeometryOnly),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("multimodal forward needs a {TEXT_DIM}-wide text row per molecule")]
    MissingText,
}

/// Builds the parameter set of one variant.
pub fn init_model(cfg: &ModelConfig, modality: Modality, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    init_encoder(&mut store, cfg, seed);
    match modality {
        Modality::GeometryOnly => init_geometry_head(&mut store, cfg, seed),
        Modality::Multimodal => {
            init_text_head(&mut store, cfg, seed);
            init_fusion(&mut store, cfg, seed);
        }
    }
    store
}

/// Tape outputs of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `B x 1` predictions (normalized target units).
    pub prediction: Var,
    /// `B x n` gate values, multimodal only.
    pub gate: Option<Var>,
}

/// Full forward pass: graph batch (and text rows, `B x 768`) to predictions.
pub fn forward(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    modality: Modality,
    batch: &GraphBatch,
    text: Option<Var>,
) -> Result<Forward, ModelError> {
    let g = encode_batch(tape, p, batch, cfg)?;
    match modality {
        Modality::GeometryOnly => Ok(Forward {
            prediction: geometry_only_head(tape, p, g, cfg.ln_eps)?,
            gate: None,
        }),
        Modality::Multimodal => {
            let t = text.ok_or(ModelError::MissingText)?;
            if tape.value(t).shape() != [batch.n_graphs, TEXT_DIM] {
                return Err(ModelError::MissingText);
            }
            let t_p = project(tape, t, p)?;
            let fused = fuse(tape, p, g, t_p, cfg.ln_eps)?;
            Ok(Forward {
                prediction: predict(tape, p, fused.f)?,
                gate: Some(fused.gate),
            })
        }
    }
}

/// Stacks text rows into a `B x 768` tensor.
pub fn text_matrix(rows: &[&[f64]]) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(rows.len() * TEXT_DIM);
    for r in rows {
        if r.len() != TEXT_DIM {
            return Err(ModelError::MissingText);
        }
        data.extend_from_slice(r);
    }
    Ok(Tensor::new(vec![rows.len(), TEXT_DIM], data)?)
}

/// Inference output for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub predictions: Vec<f64>,
    /// Per-molecule gate vectors (multimodal only).
    pub gates: Vec<Vec<f64>>,
}

/// Tape-free inference over a list of graphs.
pub fn infer(
    params: &ParamStore,
    cfg: &ModelConfig,
    modality: Modality,
    graphs: &[&MoleculeGraph],
    text: Option<&[&[f64]]>,
) -> Result<Inference, ModelError> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let batch = GraphBatch::new(graphs);
    let t = match (modality, text) {
        (Modality::Multimodal, Some(rows)) => Some(tape.constant(text_matrix(rows)?)),
        (Modality::Multimodal, None) => return Err(ModelError::MissingText),
        (Modality::GeometryOnly, _) => None,
    };
    let out = forward(&mut tape, &p, cfg, modality, &batch, t)?;
    let predictions = tape.value(out.prediction).data().to_vec();
    let gates = match out.gate {
        Some(g) => {
            let v = tape.value(g);
            (0..graphs.len()).map(|i| v.row(i).to_vec()).collect()
        }
        None => Vec::new(),
    };
    Ok(Inference { predictions, gates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::qm9::{Element, Molecule, Targets};

    fn water() -> Molecule {
        Molecule {
            id: "w".into(),
            index: 1,
            elements: vec![Element::O, Element::H, Element::H],
            coords: vec![[0.0, 0.0, 0.1], [0.76, 0.0, -0.47], [-0.76, 0.0, -0.47]],
            targets: Targets([0.0; 15]),
            partial_charges: vec![0.0; 3],
            trailer: vec![],
        }
    }

    #[test]
    fn variants_share_initial_values() {
        let cfg = ModelConfig::tiny();
        let a = init_model(&cfg, Modality::GeometryOnly, 3);
        let b = init_model(&cfg, Modality::Multimodal, 3);
        for (name, t) in a.iter() {
            assert_eq!(b.get(name).unwrap(), t, "{name}");
        }
        assert!(b.n_scalars() > a.n_scalars());
    }

    #[test]
    fn multimodal_requires_text() {
        let cfg = ModelConfig::tiny();
        let p = init_model(&cfg, Modality::Multimodal, 0);
        let g = build_graph(&water(), &cfg.rbf).unwrap();
        assert!(matches!(
            infer(&p, &cfg, Modality::Multimodal, &[&g], None),
            Err(ModelError::MissingText)
        ));
        let short = vec![0.0; 10];
        assert!(infer(&p, &cfg, Modality::Multimodal, &[&g], Some(&[&short])).is_err());
        let ok = vec![0.1; TEXT_DIM];
        let out = infer(&p, &cfg, Modality::Multimodal, &[&g], Some(&[&ok])).unwrap();
        assert_eq!(out.predictions.len(), 1);
        assert_eq!(out.gates[0].len(), cfg.hidden);
    }

    #[test]
    fn modality_names_parse() {
        for m in Modality::BOTH {
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
        }
        assert_eq!("geometry_only".parse::<Modality>().unwrap(), Modality::GeometryOnly);
    }
}
