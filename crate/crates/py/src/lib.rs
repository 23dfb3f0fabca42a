use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use molfuse::fusion::fuse_vectors;
use molfuse::graph::{build_graph, rbf_expand as core_rbf_expand, MoleculeGraph, RbfConfig};
use molfuse::model::{infer, init_model, Modality};
use molfuse::params::{read_checkpoint, write_checkpoint, ModelConfig, ParamStore};
use molfuse::pubchem::{render_description, TextDescriptors};
use molfuse::qm9::{parse_xyz as core_parse_xyz, read_dir, write_xyz, Molecule, TargetId};
use molfuse::synth::{synth_corpus as core_synth_corpus, SynthConfig};
use molfuse::text::{featurize_descriptors, load_embeddings as core_load_embeddings, sha256_hex as core_sha256, NumericScaling};
use molfuse::training::{format_change as core_format_change, percent_change as core_percent_change, split_folds as core_split_folds};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl ToString) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// One QM9 molecule: atoms, coordinates in Angstrom and the fifteen properties.
#[pyclass(name = "Molecule", module = "molfuse_py", from_py_object)]
#[derive(Clone)]
struct PyMolecule {
    inner: Molecule,
}

#[pymethods]
impl PyMolecule {
    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn index(&self) -> u64 {
        self.inner.index
    }

    #[getter]
    fn elements(&self) -> Vec<&'static str> {
        self.inner.elements.iter().map(|e| e.symbol()).collect()
    }

    #[getter]
    fn coords(&self) -> Vec<[f64; 3]> {
        self.inner.coords.clone()
    }

    #[getter]
    fn targets(&self) -> BTreeMap<&'static str, f64> {
        TargetId::ALL
            .into_iter()
            .map(|t| (t.name(), self.inner.targets.get(t)))
            .collect()
    }

    #[getter]
    fn inchi(&self) -> Option<String> {
        self.inner.inchi().map(str::to_string)
    }

    #[getter]
    fn smiles(&self) -> Option<String> {
        self.inner.smiles().map(str::to_string)
    }

    fn __len__(&self) -> usize {
        self.inner.n_atoms()
    }

    fn __repr__(&self) -> String {
        format!("Molecule(id={:?}, atoms={})", self.inner.id, self.inner.n_atoms())
    }

    fn to_xyz(&self) -> String {
        write_xyz(&self.inner)
    }

    fn translated(&self, offset: [f64; 3]) -> PyMolecule {
        PyMolecule {
            inner: self.inner.translated(offset),
        }
    }

    #[pyo3(signature = (cutoff = 5.0, n_centers = 50, gamma = 10.0))]
    fn graph(&self, cutoff: f64, n_centers: usize, gamma: f64) -> PyResult<PyGraph> {
        let cfg = RbfConfig {
            cutoff,
            n_centers,
            gamma,
        };
        build_graph(&self.inner, &cfg)
            .map(|inner| PyGraph { inner })
            .map_err(value_err)
    }
}

/// Cutoff graph with Gaussian distance features per directed edge.
#[pyclass(name = "Graph", module = "molfuse_py")]
struct PyGraph {
    inner: MoleculeGraph,
}

#[pymethods]
impl PyGraph {
    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges.clone()
    }

    #[getter]
    fn distances(&self) -> Vec<f64> {
        self.inner.edge_dist.clone()
    }

    #[getter]
    fn rbf(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n_edges())
            .map(|e| self.inner.edge_rbf.row(e).to_vec())
            .collect()
    }
}

/// PubChem descriptor record.
#[pyclass(name = "Descriptors", module = "molfuse_py")]
struct PyDescriptors {
    inner: TextDescriptors,
}

#[pymethods]
impl PyDescriptors {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<PyDescriptors> {
        serde_json::from_str(text)
            .map(|inner| PyDescriptors { inner })
            .map_err(value_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn cid(&self) -> u64 {
        self.inner.cid
    }

    #[getter]
    fn iupac_name(&self) -> String {
        self.inner.iupac_name.clone()
    }

    #[getter]
    fn molecular_formula(&self) -> String {
        self.inner.molecular_formula.clone()
    }

    #[getter]
    fn xlogp(&self) -> Option<f64> {
        self.inner.xlogp
    }

    /// The description string that text embeddings are computed from.
    fn description(&self) -> String {
        render_description(&self.inner)
    }

    /// 768-wide featurizer vector with unscaled numeric slots.
    fn featurize(&self) -> Vec<f64> {
        featurize_descriptors(&self.inner, &NumericScaling::default())
    }
}

fn parse_modality(s: &str) -> PyResult<Modality> {
    s.parse().map_err(value_err)
}

/// Encoder plus geometry-only or gated-fusion head.
#[pyclass(name = "Model", module = "molfuse_py")]
struct PyModel {
    cfg: ModelConfig,
    modality: Modality,
    params: ParamStore,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (hidden = 16, iterations = 1, text_dim = 16, modality = "multimodal", seed = 0))]
    fn new(hidden: usize, iterations: usize, text_dim: usize, modality: &str, seed: u64) -> PyResult<PyModel> {
        let cfg = ModelConfig {
            hidden,
            iterations,
            text_dim,
            ..ModelConfig::default()
        };
        cfg.validate().map_err(value_err)?;
        let modality = parse_modality(modality)?;
        Ok(PyModel {
            params: init_model(&cfg, modality, seed),
            cfg,
            modality,
        })
    }

    #[getter]
    fn modality(&self) -> &'static str {
        self.modality.name()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.cfg.hidden
    }

    #[getter]
    fn n_parameters(&self) -> usize {
        self.params.n_scalars()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.to_string()).collect()
    }

    /// Normalized-scale predictions and, for the multimodal model, one gate
    /// vector per molecule.
    #[pyo3(signature = (molecules, text = None))]
    fn predict(&self, molecules: Vec<PyMolecule>, text: Option<Vec<Vec<f64>>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let graphs = molecules
            .iter()
            .map(|m| build_graph(&m.inner, &self.cfg.rbf))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let refs: Vec<&MoleculeGraph> = graphs.iter().collect();
        let rows: Option<Vec<&[f64]>> = text.as_ref().map(|t| t.iter().map(Vec::as_slice).collect());
        if let Some(r) = &rows {
            if r.len() != refs.len() {
                return Err(value_err(format!("{} text rows for {} molecules", r.len(), refs.len())));
            }
        }
        let out = infer(&self.params, &self.cfg, self.modality, &refs, rows.as_deref()).map_err(value_err)?;
        Ok((out.predictions, out.gates))
    }

    /// Gated fusion of a geometry embedding and a projected text vector.
    fn fuse(&self, g: Vec<f64>, t_p: Vec<f64>) -> PyResult<BTreeMap<&'static str, Vec<f64>>> {
        let r = fuse_vectors(&g, &t_p, &self.params, self.cfg.ln_eps).map_err(value_err)?;
        Ok(BTreeMap::from([
            ("g_tilde", r.g_tilde),
            ("t_tilde", r.t_tilde),
            ("gate", r.gate),
            ("f", r.f),
        ]))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(&path).map_err(io_err)?;
        write_checkpoint(BufWriter::new(f), &self.cfg, &self.params).map_err(io_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, modality = "multimodal"))]
    fn load(path: PathBuf, modality: &str) -> PyResult<PyModel> {
        let f = File::open(&path).map_err(io_err)?;
        let (cfg, params) = read_checkpoint(BufReader::new(f)).map_err(value_err)?;
        Ok(PyModel {
            cfg,
            modality: parse_modality(modality)?,
            params,
        })
    }
}

#[pyfunction]
fn parse_xyz(text: &str) -> PyResult<PyMolecule> {
    core_parse_xyz(text)
        .map(|inner| PyMolecule { inner })
        .map_err(value_err)
}

type DirContents = (Vec<PyMolecule>, Vec<(String, String)>);

/// Parses every `.xyz` file in a directory; returns molecules and
/// `(file stem, error)` pairs for files that failed.
#[pyfunction]
fn read_xyz_dir(path: PathBuf) -> PyResult<DirContents> {
    let scan = read_dir(&path, None).map_err(io_err)?;
    Ok((
        scan.molecules.into_iter().map(|inner| PyMolecule { inner }).collect(),
        scan.failures.into_iter().map(|(id, e)| (id, e.to_string())).collect(),
    ))
}

#[pyfunction]
#[pyo3(signature = (distance, cutoff = 5.0, n_centers = 50, gamma = 10.0))]
fn rbf_expand(distance: f64, cutoff: f64, n_centers: usize, gamma: f64) -> PyResult<Vec<f64>> {
    core_rbf_expand(
        distance,
        &RbfConfig {
            cutoff,
            n_centers,
            gamma,
        },
    )
    .map_err(value_err)
}

#[pyfunction]
fn split_folds(n: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    core_split_folds(n, k, seed).map_err(value_err)
}

#[pyfunction]
fn percent_change(mae_base: f64, mae_multi: f64) -> PyResult<f64> {
    core_percent_change(mae_base, mae_multi).map_err(value_err)
}

#[pyfunction]
fn format_change(pc: f64) -> String {
    core_format_change(pc)
}

#[pyfunction]
fn sha256_hex(text: &str) -> String {
    core_sha256(text)
}

/// Synthetic QM9-layout molecules.
#[pyfunction]
#[pyo3(signature = (n, seed = 0, leak = None))]
fn synth_corpus(n: usize, seed: u64, leak: Option<&str>) -> PyResult<Vec<PyMolecule>> {
    let leak = leak
        .map(|s| s.parse::<TargetId>())
        .transpose()
        .map_err(value_err)?;
    let cfg = SynthConfig {
        n_molecules: n,
        seed,
        leak,
        ..SynthConfig::default()
    };
    Ok(core_synth_corpus(&cfg)
        .into_iter()
        .map(|inner| PyMolecule { inner })
        .collect())
}

/// Embedding file as `{cid: (text_sha256, vector)}`.
#[pyfunction]
fn load_embeddings(path: PathBuf) -> PyResult<BTreeMap<u64, (String, Vec<f64>)>> {
    let set = core_load_embeddings(&path).map_err(value_err)?;
    Ok(set
        .records
        .into_values()
        .map(|r| (r.cid, (r.text_sha256, r.vector)))
        .collect())
}

#[pymodule]
fn molfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMolecule>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyDescriptors>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parse_xyz, m)?)?;
    m.add_function(wrap_pyfunction!(read_xyz_dir, m)?)?;
    m.add_function(wrap_pyfunction!(rbf_expand, m)?)?;
    m.add_function(wrap_pyfunction!(split_folds, m)?)?;
    m.add_function(wrap_pyfunction!(percent_change, m)?)?;
    m.add_function(wrap_pyfunction!(format_change, m)?)?;
    m.add_function(wrap_pyfunction!(sha256_hex, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add("TEXT_DIM", molfuse::text::TEXT_DIM)?;
    Ok(())
}
