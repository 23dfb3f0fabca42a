//! Named parameter storage, deterministic initialization and the binary
//! checkpoint container.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::RbfConfig;
use crate::numerics::{Tape, Tensor, Var};

/// Architecture hyperparameters shared by encoder, text head and fusion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width `n` of the encoder and fused representation.
    pub hidden: usize,
    /// Message-passing iterations `T`.
    pub iterations: usize,
    /// Projected text width `d`.
    pub text_dim: usize,
    pub rbf: RbfConfig,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            iterations: 3,
            text_dim: 16,
            rbf: RbfConfig::default(),
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Small profile used by tests and smoke runs.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 16,
            iterations: 1,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden < 2 {
            return Err(format!("hidden width must be at least 2, got {}", self.hidden));
        }
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if self.text_dim == 0 {
            return Err("text_dim must be at least 1".into());
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        self.rbf.validate().map_err(|e| e.to_string())
    }
}

/// Ordered map of parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("missing parameter {0:?}")]
    Missing(String),
    #[error("parameter {name:?} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// How a freshly created parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Creates a parameter. The values depend only on `(seed, name, shape)`,
    /// so two models sharing a parameter name start from identical values.
    pub fn init(&mut self, name: &str, shape: &[usize], init: Init, seed: u64) {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::filled(shape, 1.0),
            Init::Xavier => {
                let (fan_in, fan_out) = match shape {
                    [a, b] => (*a, *b),
                    [a] => (*a, 1),
                    _ => (shape.iter().product(), 1),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::new(shape.to_vec(), data).expect("shape product")
            }
        };
        self.params.insert(name.to_string(), t);
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.params.get(name).ok_or_else(|| ParamError::Missing(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ParamError> {
        self.params.get_mut(name).ok_or_else(|| ParamError::Missing(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

/// Parameters recorded on a tape, addressable by name.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binds variables already on a tape under the given names.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Bound {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var, ParamError> {
        self.vars.get(name).copied().ok_or_else(|| ParamError::Missing(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

const MAGIC: &[u8; 4] = b"MFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn to_u32(v: usize, what: &str) -> Result<u32, CheckpointError> {
    u32::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("{what} {v} exceeds u32")))
}

/// Writes the checkpoint container.
///
/// Layout (little endian): magic `MFCK`, u32 version, config block
/// (u32 hidden, u32 n_centers, u32 iterations, u32 text_dim, f64 cutoff,
/// f64 gamma, f64 ln_eps), u32 array count, then per array: u32 name length,
/// UTF-8 name, u32 rank, u32 extents, raw f64 data.
pub fn write_checkpoint<W: Write>(mut w: W, cfg: &ModelConfig, params: &ParamStore) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;
    for v in [cfg.hidden, cfg.rbf.n_centers, cfg.iterations, cfg.text_dim] {
        put_u32(&mut w, to_u32(v, "config value")?)?;
    }
    for v in [cfg.rbf.cutoff, cfg.rbf.gamma, cfg.ln_eps] {
        w.write_all(&v.to_le_bytes())?;
    }
    put_u32(&mut w, to_u32(params.len(), "array count")?)?;
    for (name, t) in params.iter() {
        put_u32(&mut w, to_u32(name.len(), "name length")?)?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, to_u32(t.rank(), "rank")?)?;
        for &e in t.shape() {
            put_u32(&mut w, to_u32(e, "extent")?)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelConfig, ParamStore), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hidden = get_u32(&mut r)? as usize;
    let n_centers = get_u32(&mut r)? as usize;
    let iterations = get_u32(&mut r)? as usize;
    let text_dim = get_u32(&mut r)? as usize;
    let cutoff = get_f64(&mut r)?;
    let gamma = get_f64(&mut r)?;
    let ln_eps = get_f64(&mut r)?;
    let cfg = ModelConfig {
        hidden,
        iterations,
        text_dim,
        rbf: RbfConfig {
            cutoff,
            n_centers,
            gamma,
        },
        ln_eps,
    };
    let count = get_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = get_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(CheckpointError::Corrupt(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let rank = get_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!("rank {rank} for {name}")));
        }
        let shape = (0..rank).map(|_| get_u32(&mut r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| get_f64(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        params.insert(name, t);
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new();
        a.init("x.w", &[3, 4], Init::Xavier, 7);
        a.init("y.w", &[3, 4], Init::Xavier, 7);
        let mut b = ParamStore::new();
        b.init("x.w", &[3, 4], Init::Xavier, 7);
        assert_eq!(a.get("x.w").unwrap(), b.get("x.w").unwrap());
        assert_ne!(a.get("x.w").unwrap(), a.get("y.w").unwrap());
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(a.get("x.w").unwrap().data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut p = ParamStore::new();
        p.init("encoder.atom_embed", &[5, 4], Init::Xavier, 1);
        p.init("fusion.gate.bias", &[4], Init::Zeros, 1);
        p.insert("odd", Tensor::vector(vec![f64::MIN_POSITIVE, -0.0, 1e300]));
        let cfg = ModelConfig::tiny();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &p).unwrap();
        assert_eq!(&buf[..4], b"MFCK");
        let (cfg2, p2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(p, p2);
        let bits = |s: &ParamStore| -> Vec<u64> { s.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect() };
        assert_eq!(bits(&p), bits(&p2));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(matches!(read_checkpoint(&b"NOPE0000"[..]), Err(CheckpointError::BadMagic)));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ModelConfig::tiny(), &ParamStore::new()).unwrap();
        buf[4] = 9;
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(CheckpointError::Version(9))));
        buf[4] = 1;
        buf.truncate(10);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(CheckpointError::Io(_))));
    }
}
