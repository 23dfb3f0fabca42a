use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::encoder::GraphBatch;
use crate::model::{forward, infer, init_model, text_matrix, Modality};
use crate::numerics::{Tape, Tensor};
use crate::params::{ModelConfig, ParamStore};
use crate::qm9::{Normalizer, TargetId};
use crate::text::TextSource;

use super::adam::{Adam, AdamConfig};
use super::folds::{fold_hash, split_folds, training_indices};
use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Initialization and batch-order seed.
    pub seed: u64,
    /// Seed of the fold assignment, shared by every run of an ablation.
    pub fold_seed: u64,
    pub folds: usize,
    pub target: TargetId,
    pub modality: Modality,
    pub embedding_source: TextSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 30,
            seed: 0,
            fold_seed: 0,
            folds: 3,
            target: TargetId::Homo,
            modality: Modality::GeometryOnly,
            embedding_source: TextSource::Featurizer,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(TrainError::Config("folds must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.target.is_benchmark() {
            return Err(TrainError::Config(format!("{} is not a benchmark target", self.target.name())));
        }
        Ok(())
    }
}

/// Target standardization fitted on training indices. A constant target
/// keeps unit scale for the loss but de-normalizes every prediction to the
/// training mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaler {
    pub fn fit(ys: &[f64]) -> TargetScaler {
        match Normalizer::fit(ys) {
            Ok(n) => TargetScaler { mean: n.mean, std: n.std },
            Err(_) => TargetScaler {
                mean: ys.iter().sum::<f64>() / ys.len().max(1) as f64,
                std: 0.0,
            },
        }
    }

    pub fn transform(&self, y: f64) -> f64 {
        if self.std > 0.0 {
            (y - self.mean) / self.std
        } else {
            y - self.mean
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// Trained parameters for one fold plus the per-epoch mean training loss.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub params: ParamStore,
    pub scaler: TargetScaler,
    pub loss_curve: Vec<f64>,
}

fn batch_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17)
}

/// Trains one model on `train_idx`. `stream` decorrelates the batch order
/// of different folds that share a seed.
pub fn fit(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    samples: &[Sample],
    train_idx: &[usize],
    stream: u64,
) -> Result<Fitted, TrainError> {
    cfg.validate()?;
    model_cfg.validate().map_err(TrainError::Config)?;
    if train_idx.is_empty() {
        return Err(TrainError::Config("empty training fold".into()));
    }
    let ys: Vec<f64> = train_idx.iter().map(|&i| samples[i].targets.get(cfg.target)).collect();
    let scaler = TargetScaler::fit(&ys);
    let mut params = init_model(model_cfg, cfg.modality, cfg.seed);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(batch_seed(cfg.seed, stream));
    let mut order = train_idx.to_vec();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<_> = chunk.iter().map(|&i| &samples[i].graph).collect();
            let batch = GraphBatch::new(&graphs);
            let y: Vec<f64> = chunk
                .iter()
                .map(|&i| scaler.transform(samples[i].targets.get(cfg.target)))
                .collect();

            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let text = match cfg.modality {
                Modality::Multimodal => {
                    let rows: Vec<&[f64]> = chunk.iter().map(|&i| samples[i].text.as_slice()).collect();
                    Some(tape.constant(text_matrix(&rows)?))
                }
                Modality::GeometryOnly => None,
            };
            let out = forward(&mut tape, &p, model_cfg, cfg.modality, &batch, text)?;
            let target = tape.constant(Tensor::new(vec![chunk.len(), 1], y)?);
            let diff = tape.sub(out.prediction, target)?;
            let abs = tape.abs(diff)?;
            let loss = tape.mean(abs)?;
            total += tape.value(loss).data()[0] * chunk.len() as f64;

            let grads = tape.backward(loss)?;
            let mut by_name = BTreeMap::new();
            for (name, v) in p.iter() {
                if let Some(g) = grads.get(v) {
                    by_name.insert(name.to_string(), g.clone());
                }
            }
            opt.step(&mut params, &by_name)?;
        }
        loss_curve.push(total / order.len() as f64);
    }
    Ok(Fitted {
        params,
        scaler,
        loss_curve,
    })
}

/// Per-molecule predictions in native units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub target: f64,
    pub predicted: f64,
    /// Mean gate value over hidden units (multimodal only).
    pub mean_gate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub mae: f64,
    pub predictions: Vec<Prediction>,
}

const EVAL_BATCH: usize = 256;

pub fn evaluate(
    fitted: &Fitted,
    model_cfg: &ModelConfig,
    modality: Modality,
    target: TargetId,
    samples: &[Sample],
    idx: &[usize],
) -> Result<Evaluation, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::Config("empty evaluation fold".into()));
    }
    let mut predictions = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let graphs: Vec<_> = chunk.iter().map(|&i| &samples[i].graph).collect();
        let rows: Vec<&[f64]> = chunk.iter().map(|&i| samples[i].text.as_slice()).collect();
        let text = (modality == Modality::Multimodal).then_some(rows.as_slice());
        let out = infer(&fitted.params, model_cfg, modality, &graphs, text)?;
        for (k, &i) in chunk.iter().enumerate() {
            predictions.push(Prediction {
                id: samples[i].id.clone(),
                target: samples[i].targets.get(target),
                predicted: fitted.scaler.inverse(out.predictions[k]),
                mean_gate: out.gates.get(k).map(|g| g.iter().sum::<f64>() / g.len() as f64),
            });
        }
    }
    let mae = predictions.iter().map(|p| (p.target - p.predicted).abs()).sum::<f64>() / predictions.len() as f64;
    Ok(Evaluation { mae, predictions })
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    /// Held-out MAE in native units.
    pub mae: f64,
    pub n_train: usize,
    pub loss_curve: Vec<f64>,
    pub predictions: Vec<Prediction>,
    pub params: ParamStore,
    pub scaler: TargetScaler,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub folds: Vec<FoldResult>,
    pub mean_mae: f64,
    pub fold_hash: String,
}

impl TrainOutcome {
    pub fn fold_maes(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.mae).collect()
    }
}

/// k-fold cross-validation: train on k-1 folds, evaluate on the held-out one.
pub fn train(cfg: &TrainConfig, model_cfg: &ModelConfig, samples: &[Sample]) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let folds = split_folds(samples.len(), cfg.folds, cfg.fold_seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (k, held_out) in folds.iter().enumerate() {
        let train_idx = training_indices(&folds, k);
        let fitted = fit(cfg, model_cfg, samples, &train_idx, k as u64)?;
        let eval = evaluate(&fitted, model_cfg, cfg.modality, cfg.target, samples, held_out)?;
        log::debug!(
            "{} {} seed {} fold {k}: mae {}",
            cfg.target.name(),
            cfg.modality,
            cfg.seed,
            eval.mae
        );
        results.push(FoldResult {
            fold: k,
            mae: eval.mae,
            n_train: train_idx.len(),
            loss_curve: fitted.loss_curve,
            predictions: eval.predictions,
            params: fitted.params,
            scaler: fitted.scaler,
        });
    }
    let mean_mae = results.iter().map(|r| r.mae).sum::<f64>() / results.len() as f64;
    Ok(TrainOutcome {
        folds: results,
        mean_mae,
        fold_hash: fold_hash(&folds),
    })
}
