use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use molfuse::config::RunConfig;
use molfuse::dataset::content_hash;
use molfuse::text::{NumericScaling, TextSource};
use serde::{Deserialize, Serialize};

use crate::failure::{Classify, Failure};

pub const CODE_VERSION: &str = concat!("molfuse ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Run record written next to the artifacts of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub dataset_sha256: Option<String>,
    pub cache_snapshot: Option<String>,
    pub embedding_source: TextSource,
    pub embedding_file_sha256: Option<String>,
    /// Frozen numeric-slot standardization of the featurizer.
    pub numeric_scaling: Option<NumericScaling>,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<Artifact>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: &RunConfig) -> RunManifest {
        let t = now();
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            dataset_sha256: None,
            cache_snapshot: None,
            embedding_source: config.train.embedding_source,
            embedding_file_sha256: None,
            numeric_scaling: None,
            code_version: CODE_VERSION.to_string(),
            started_at: t.clone(),
            finished_at: t,
            artifacts: Vec::new(),
        }
    }

    /// Hashes every artifact and writes `<out>/<command>.manifest.json`.
    pub fn finish(mut self, out: &Path, artifacts: &[PathBuf]) -> Result<PathBuf, Failure> {
        for p in artifacts {
            let bytes = fs::read(p).user(format!("cannot read artifact {}", p.display()))?;
            self.artifacts.push(Artifact {
                path: p.clone(),
                sha256: content_hash(&bytes),
            });
        }
        self.finished_at = now();
        let path = out.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(&self).user("cannot serialize run manifest")?;
        fs::write(&path, json + "\n").env(format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
