//! Multimodal molecular property prediction: an invariant continuous-filter
//! message-passing encoder over XYZ geometries, text embeddings built from
//! PubChem descriptors, and a gated fusion head, with the training and
//! ablation harness that compares multimodal and geometry-only models.

pub mod config;
pub mod numerics;
pub mod graph;
pub mod qm9;
pub mod params;
pub mod encoder;
pub mod pubchem;
pub mod text;
pub mod fusion;
pub mod model;
pub mod dataset;
pub mod synth;
pub mod training;
