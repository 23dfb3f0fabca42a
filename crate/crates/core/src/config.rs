//! Run configuration: a TOML file layered over a named profile.
//!
//! ```toml
//! profile = "smoke"          # smoke | desk | full
//!
//! [data]
//! xyz_dir = "data/xyz"
//! exclusions = "data/uncharacterized.txt"   # optional
//! cache_dir = "cache/pubchem"
//! dataset = "out/dataset.jsonl"
//! max_molecules = 64                        # optional subset size
//!
//! [pubchem]
//! rate = 5
//! max_attempts = 5                          # per request, including retries
//!
//! [model]
//! hidden = 16
//! iterations = 1
//! text_dim = 16
//! cutoff = 5.0
//! n_rbf = 50
//! gamma = 10.0
//!
//! [train]
//! batch_size = 64
//! learning_rate = 1e-3
//! epochs = 30
//! seed = 0
//! fold_seed = 0
//! folds = 3
//! target = "homo"
//! modality = "multimodal"                   # geometry-only | multimodal
//! embedding_source = "featurizer"           # featurizer | file
//! embeddings = "out/embeddings.jsonl"       # required when source is file
//!
//! [ablation]
//! targets = ["homo", "gap"]
//! seeds = [0, 1, 2]
//! ```
//!
//! Every table rejects unknown keys. Keys left out take the profile value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Modality;
use crate::params::ModelConfig;
use crate::qm9::TargetId;
use crate::text::TextSource;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 64 molecules, tiny model, 30 epochs, one seed.
    #[default]
    Smoke,
    /// 1000 molecules, mid-size model, 300 epochs, three seeds.
    Desk,
    /// Every molecule, default model, 300 epochs, three seeds.
    Full,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Smoke => "smoke",
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoke" => Ok(Profile::Smoke),
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile {other:?} (expected smoke, desk or full)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub xyz_dir: PathBuf,
    pub exclusions: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub dataset: PathBuf,
    pub max_molecules: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTargets {
    pub targets: Vec<TargetId>,
    pub seeds: Vec<u64>,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub data: DataConfig,
    pub rate: u32,
    pub max_attempts: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub embeddings: Option<PathBuf>,
    pub ablation: AblationTargets,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> RunConfig {
        let (max_molecules, model, epochs, seeds) = match profile {
            Profile::Smoke => (Some(64), ModelConfig::tiny(), 30, vec![0]),
            Profile::Desk => (
                Some(1000),
                ModelConfig {
                    hidden: 32,
                    iterations: 2,
                    ..ModelConfig::default()
                },
                300,
                vec![0, 1, 2],
            ),
            Profile::Full => (None, ModelConfig::default(), 300, vec![0, 1, 2]),
        };
        RunConfig {
            profile,
            data: DataConfig {
                xyz_dir: PathBuf::from("data/xyz"),
                exclusions: None,
                cache_dir: PathBuf::from("cache/pubchem"),
                dataset: PathBuf::from("out/dataset.jsonl"),
                max_molecules,
            },
            rate: crate::pubchem::DEFAULT_RATE,
            max_attempts: crate::pubchem::RetryPolicy::default().max_attempts,
            model,
            train: TrainConfig {
                epochs,
                ..TrainConfig::default()
            },
            embeddings: None,
            ablation: AblationTargets {
                targets: vec![TargetId::Homo, TargetId::Gap],
                seeds,
            },
        }
    }

    /// Parses TOML text and layers it over its profile (or `profile_override`).
    pub fn from_toml(text: &str, profile_override: Option<Profile>) -> Result<RunConfig, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let profile = match (profile_override, file.profile.as_deref()) {
            (Some(p), _) => p,
            (None, Some(s)) => s.parse().map_err(|m| invalid("profile", m))?,
            (None, None) => Profile::default(),
        };
        let mut cfg = RunConfig::for_profile(profile);
        file.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile_override: Option<Profile>) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_toml(&text, profile_override)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(invalid("train.batch_size", "must be at least 1"));
        }
        if t.folds < 2 {
            return Err(invalid("train.folds", "must be at least 2"));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(invalid("train.learning_rate", "must be positive"));
        }
        if !t.target.is_benchmark() {
            return Err(invalid("train.target", format!("{} is not a benchmark target", t.target.name())));
        }
        if t.embedding_source == TextSource::File && self.embeddings.is_none() {
            return Err(invalid("train.embeddings", "required when embedding_source is \"file\""));
        }
        if self.rate == 0 {
            return Err(invalid("pubchem.rate", "must be at least 1"));
        }
        if self.max_attempts == 0 {
            return Err(invalid("pubchem.max_attempts", "must be at least 1"));
        }
        if self.data.max_molecules == Some(0) {
            return Err(invalid("data.max_molecules", "must be at least 1"));
        }
        let m = &self.model;
        if m.hidden == 0 {
            return Err(invalid("model.hidden", "must be at least 1"));
        }
        if m.text_dim == 0 {
            return Err(invalid("model.text_dim", "must be at least 1"));
        }
        m.rbf.validate().map_err(|e| invalid("model", e.to_string()))?;
        if self.ablation.targets.is_empty() {
            return Err(invalid("ablation.targets", "must name at least one target"));
        }
        if let Some(bad) = self.ablation.targets.iter().find(|t| !t.is_benchmark()) {
            return Err(invalid("ablation.targets", format!("{} is not a benchmark target", bad.name())));
        }
        if self.ablation.seeds.is_empty() {
            return Err(invalid("ablation.seeds", "must list at least one seed"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        ConfigFile::from(self).to_string()
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    xyz_dir: Option<PathBuf>,
    exclusions: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    dataset: Option<PathBuf>,
    max_molecules: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PubChemSection {
    rate: Option<u32>,
    max_attempts: Option<u32>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    hidden: Option<usize>,
    iterations: Option<usize>,
    text_dim: Option<usize>,
    cutoff: Option<f64>,
    n_rbf: Option<usize>,
    gamma: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    fold_seed: Option<u64>,
    folds: Option<usize>,
    target: Option<TargetId>,
    modality: Option<Modality>,
    embedding_source: Option<TextSource>,
    embeddings: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AblationSection {
    targets: Option<Vec<TargetId>>,
    seeds: Option<Vec<u64>>,
}

/// On-disk shape: every key optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    profile: Option<String>,
    #[serde(default)]
    data: DataSection,
    #[serde(default)]
    pubchem: PubChemSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    ablation: AblationSection,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl ConfigFile {
    fn apply(self, cfg: &mut RunConfig) {
        let d = self.data;
        set(&mut cfg.data.xyz_dir, d.xyz_dir);
        if d.exclusions.is_some() {
            cfg.data.exclusions = d.exclusions;
        }
        set(&mut cfg.data.cache_dir, d.cache_dir);
        set(&mut cfg.data.dataset, d.dataset);
        if d.max_molecules.is_some() {
            cfg.data.max_molecules = d.max_molecules;
        }
        set(&mut cfg.rate, self.pubchem.rate);
        set(&mut cfg.max_attempts, self.pubchem.max_attempts);

        let m = self.model;
        set(&mut cfg.model.hidden, m.hidden);
        set(&mut cfg.model.iterations, m.iterations);
        set(&mut cfg.model.text_dim, m.text_dim);
        set(&mut cfg.model.rbf.cutoff, m.cutoff);
        set(&mut cfg.model.rbf.n_centers, m.n_rbf);
        set(&mut cfg.model.rbf.gamma, m.gamma);

        let t = self.train;
        set(&mut cfg.train.batch_size, t.batch_size);
        set(&mut cfg.train.learning_rate, t.learning_rate);
        set(&mut cfg.train.epochs, t.epochs);
        set(&mut cfg.train.seed, t.seed);
        set(&mut cfg.train.fold_seed, t.fold_seed);
        set(&mut cfg.train.folds, t.folds);
        set(&mut cfg.train.target, t.target);
        set(&mut cfg.train.modality, t.modality);
        set(&mut cfg.train.embedding_source, t.embedding_source);
        if t.embeddings.is_some() {
            cfg.embeddings = t.embeddings;
        }

        set(&mut cfg.ablation.targets, self.ablation.targets);
        set(&mut cfg.ablation.seeds, self.ablation.seeds);
    }
}

impl From<&RunConfig> for ConfigFile {
    fn from(c: &RunConfig) -> Self {
        ConfigFile {
            profile: Some(c.profile.name().to_string()),
            data: DataSection {
                xyz_dir: Some(c.data.xyz_dir.clone()),
                exclusions: c.data.exclusions.clone(),
                cache_dir: Some(c.data.cache_dir.clone()),
                dataset: Some(c.data.dataset.clone()),
                max_molecules: c.data.max_molecules,
            },
            pubchem: PubChemSection {
                rate: Some(c.rate),
                max_attempts: Some(c.max_attempts),
            },
            model: ModelSection {
                hidden: Some(c.model.hidden),
                iterations: Some(c.model.iterations),
                text_dim: Some(c.model.text_dim),
                cutoff: Some(c.model.rbf.cutoff),
                n_rbf: Some(c.model.rbf.n_centers),
                gamma: Some(c.model.rbf.gamma),
            },
            train: TrainSection {
                batch_size: Some(c.train.batch_size),
                learning_rate: Some(c.train.learning_rate),
                epochs: Some(c.train.epochs),
                seed: Some(c.train.seed),
                fold_seed: Some(c.train.fold_seed),
                folds: Some(c.train.folds),
                target: Some(c.train.target),
                modality: Some(c.train.modality),
                embedding_source: Some(c.train.embedding_source),
                embeddings: c.embeddings.clone(),
            },
            ablation: AblationSection {
                targets: Some(c.ablation.targets.clone()),
                seeds: Some(c.ablation.seeds.clone()),
            },
        }
    }
}

impl fmt::Display for ConfigFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&toml::to_string(self).map_err(|_| fmt::Error)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_defaults() {
        let smoke = RunConfig::for_profile(Profile::Smoke);
        assert_eq!(smoke.data.max_molecules, Some(64));
        assert_eq!(smoke.model, ModelConfig::tiny());
        assert_eq!(smoke.train.epochs, 30);
        assert_eq!(smoke.train.batch_size, 64);
        assert_eq!(smoke.train.learning_rate, 1e-3);
        assert_eq!(smoke.train.folds, 3);
        let full = RunConfig::for_profile(Profile::Full);
        assert_eq!(full.model, ModelConfig::default());
        assert_eq!(full.train.epochs, 300);
        assert_eq!(full.ablation.seeds, vec![0, 1, 2]);
        assert_eq!(full.data.max_molecules, None);
    }

    #[test]
    fn file_overrides_profile() {
        let cfg = RunConfig::from_toml(
            "profile = \"desk\"\n[train]\nepochs = 7\ntarget = \"gap\"\nmodality = \"multimodal\"\n[model]\nn_rbf = 20\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.profile, Profile::Desk);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.target, TargetId::Gap);
        assert_eq!(cfg.train.modality, Modality::Multimodal);
        assert_eq!(cfg.model.rbf.n_centers, 20);
        assert_eq!(cfg.data.max_molecules, Some(1000));

        let forced = RunConfig::from_toml("profile = \"desk\"\n", Some(Profile::Smoke)).unwrap();
        assert_eq!(forced.profile, Profile::Smoke);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[train]\nbatchsize = 3\n", None).unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
        let err = RunConfig::from_toml("[trainer]\n", None).unwrap_err();
        assert!(err.to_string().contains("trainer"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_key() {
        for (text, key) in [
            ("[train]\nbatch_size = 0\n", "train.batch_size"),
            ("[train]\nfolds = 1\n", "train.folds"),
            ("[train]\nlearning_rate = -1.0\n", "train.learning_rate"),
            ("[train]\nembedding_source = \"file\"\n", "train.embeddings"),
            ("[pubchem]\nrate = 0\n", "pubchem.rate"),
            ("profile = \"huge\"\n", "profile"),
        ] {
            match RunConfig::from_toml(text, None) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::for_profile(Profile::Desk);
        cfg.embeddings = Some(PathBuf::from("e.jsonl"));
        cfg.train.learning_rate = 0.1 + 0.2;
        let back = RunConfig::from_toml(&cfg.to_toml(), None).unwrap();
        assert_eq!(back, cfg);
    }
}
