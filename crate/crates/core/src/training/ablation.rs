use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::model::Modality;
use crate::params::ModelConfig;
use crate::qm9::TargetId;

use super::report::{aggregate, AblationReport, CsvRow};
use super::trainer::{train, TrainConfig};
use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub targets: Vec<TargetId>,
    /// One run per seed; every run uses the same folds.
    pub seeds: Vec<u64>,
    /// Template; `target`, `modality` and `seed` are overwritten per run.
    pub base: TrainConfig,
}

/// Mean gate value of one held-out molecule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub target: TargetId,
    pub seed: u64,
    pub fold: usize,
    pub id: String,
    pub mean_gate: f64,
}

#[derive(Clone, Debug)]
pub struct AblationOutput {
    pub rows: Vec<CsvRow>,
    pub gates: Vec<GateRow>,
    pub report: AblationReport,
}

/// Trains every (target, modality, seed) combination, in parallel across
/// combinations, and aggregates the held-out MAEs.
pub fn run_ablation(
    cfg: &AblationConfig,
    model_cfg: &ModelConfig,
    samples: &[Sample],
) -> Result<AblationOutput, TrainError> {
    if cfg.targets.is_empty() || cfg.seeds.is_empty() {
        return Err(TrainError::Config("ablation needs at least one target and one seed".into()));
    }
    let mut jobs = Vec::new();
    for &target in &cfg.targets {
        for modality in Modality::BOTH {
            for &seed in &cfg.seeds {
                jobs.push(TrainConfig {
                    target,
                    modality,
                    seed,
                    ..cfg.base.clone()
                });
            }
        }
    }
    let outcomes = jobs
        .par_iter()
        .map(|job| train(job, model_cfg, samples).map(|o| (job, o)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut gates = Vec::new();
    let mut hashes: BTreeMap<TargetId, String> = BTreeMap::new();
    for (job, outcome) in &outcomes {
        if let Some(h) = hashes.get(&job.target) {
            if *h != outcome.fold_hash {
                return Err(TrainError::Report(format!("{}: runs used different folds", job.target.name())));
            }
        }
        hashes.insert(job.target, outcome.fold_hash.clone());
        for f in &outcome.folds {
            rows.push(CsvRow {
                target: job.target,
                modality: job.modality,
                seed: job.seed,
                fold: f.fold,
                mae: f.mae,
            });
            for p in &f.predictions {
                if let Some(g) = p.mean_gate {
                    gates.push(GateRow {
                        target: job.target,
                        seed: job.seed,
                        fold: f.fold,
                        id: p.id.clone(),
                        mean_gate: g,
                    });
                }
            }
        }
    }
    let report = aggregate(&rows, &hashes)?;
    Ok(AblationOutput { rows, gates, report })
}
