//! Per-kernel latency predictors: one GBDT per (op kind, executor, GPU kernel).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::device::{Dataset, Executor, LatencyModel, LatencySample};
use crate::dispatch::{cpu_features, features, select_kernel, DeviceProfile, FeatureMode, FeatureVector, KernelImpl};
use crate::error::{Error, Result};
use crate::gbdt::{fit_gbdt, mape, tune, GbdtModel, HyperparameterSpace, Hyperparams, TrainingSet, MIN_TRAINING_SAMPLES};
use crate::op::{OpDescriptor, OpKind};

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelKey {
    pub op_kind: OpKind,
    pub executor: Executor,
    /// GPU models only.
    pub kernel: Option<KernelImpl>,
}

impl ModelKey {
    /// The model that prices `op` on `executor` under `profile`.
    pub fn route(op: &OpDescriptor, executor: Executor, profile: &DeviceProfile) -> Self {
        Self {
            op_kind: op.kind(),
            executor,
            kernel: match executor {
                Executor::Gpu => Some(select_kernel(op, profile)),
                Executor::Cpu(_) => None,
            },
        }
    }

    fn of_sample(s: &LatencySample) -> Self {
        Self {
            op_kind: s.op.kind(),
            executor: s.executor,
            kernel: s.kernel,
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kernel {
            Some(k) => write!(f, "{}/{k}", self.executor),
            None => write!(f, "{}/{}", self.executor, self.op_kind),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub key: ModelKey,
    pub model: GbdtModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorEnsemble {
    pub version: u32,
    /// Profile the GPU features were computed against.
    pub profile: DeviceProfile,
    pub mode: FeatureMode,
    pub models: Vec<ModelEntry>,
}

fn feature_vector(op: &OpDescriptor, executor: Executor, profile: &DeviceProfile, mode: FeatureMode) -> FeatureVector {
    match executor {
        Executor::Gpu => features(op, profile, mode),
        Executor::Cpu(t) => cpu_features(op, t),
    }
}

impl PredictorEnsemble {
    pub fn model(&self, key: &ModelKey) -> Option<&GbdtModel> {
        self.models.iter().find(|e| &e.key == key).map(|e| &e.model)
    }

    pub fn keys(&self) -> Vec<ModelKey> {
        self.models.iter().map(|e| e.key).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Self = serde_json::from_str(s)?;
        if e.version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Training(format!(
                "ensemble format version {} unsupported",
                e.version
            )));
        }
        Ok(e)
    }
}

/// Predicted latency of `op` on `executor`, routing GPU ops by the kernel
/// `profile` selects.
pub fn predict_latency(
    ensemble: &PredictorEnsemble,
    op: &OpDescriptor,
    executor: Executor,
    profile: &DeviceProfile,
) -> Result<f64> {
    let key = ModelKey::route(op, executor, profile);
    let model = ensemble
        .model(&key)
        .ok_or_else(|| Error::Routing(key.to_string()))?;
    let fv = feature_vector(op, executor, profile, ensemble.mode);
    if model.feature_names.iter().ne(fv.names.iter()) {
        return Err(Error::contract(format!(
            "model {key} expects features {:?}, got {:?}",
            model.feature_names, fv.names
        )));
    }
    Ok(model.predict(&fv.values))
}

impl LatencyModel for PredictorEnsemble {
    fn gpu_latency_us(&self, op: &OpDescriptor) -> Result<f64> {
        predict_latency(self, op, Executor::Gpu, &self.profile)
    }

    fn cpu_latency_us(&self, op: &OpDescriptor, threads: u8) -> Result<f64> {
        predict_latency(self, op, Executor::cpu(threads)?, &self.profile)
    }
}

/// Feature rows for the samples of `key`.
pub fn training_set(
    dataset: &Dataset,
    key: &ModelKey,
    profile: &DeviceProfile,
    mode: FeatureMode,
) -> Result<TrainingSet> {
    let samples: Vec<&LatencySample> = dataset
        .samples
        .iter()
        .filter(|s| ModelKey::of_sample(s) == *key)
        .collect();
    let names: Vec<String> = match samples.first() {
        Some(s) => feature_vector(&s.op, s.executor, profile, mode)
            .names
            .iter()
            .map(|n| n.to_string())
            .collect(),
        None => return Err(Error::Training(format!("no samples for {key}"))),
    };
    let rows = samples
        .iter()
        .map(|s| feature_vector(&s.op, s.executor, profile, mode).values)
        .collect();
    let latency = samples.iter().map(|s| s.latency_us).collect();
    TrainingSet::new(names, rows, latency)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum TrainingPlan {
    Fixed(Hyperparams),
    Tune {
        space: HyperparameterSpace,
        trials: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub key: ModelKey,
    pub samples: usize,
    pub params: Hyperparams,
    /// MAPE on the 20% held out from training.
    pub validation_mape: f64,
    pub gain: Vec<(String, f64)>,
}

fn holdout_len(n: usize) -> usize {
    (n as f64 * HOLDOUT).round() as usize
}

const HOLDOUT: f64 = 0.2;

/// Train one model per key present in `dataset`. Each model is fit on a
/// seeded 80% and scored on the remaining 20%.
pub fn train_ensemble(
    dataset: &Dataset,
    profile: &DeviceProfile,
    mode: FeatureMode,
    plan: &TrainingPlan,
    seed: u64,
) -> Result<(PredictorEnsemble, Vec<ModelReport>)> {
    let mut counts: BTreeMap<ModelKey, usize> = BTreeMap::new();
    for s in &dataset.samples {
        *counts.entry(ModelKey::of_sample(s)).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    // Every key loses 20% to validation before fitting.
    let min_total = (MIN_TRAINING_SAMPLES..)
        .find(|&n| n - holdout_len(n) >= MIN_TRAINING_SAMPLES)
        .expect("finite");
    if let Some((key, n)) = counts.iter().find(|(_, &n)| n < min_total) {
        return Err(Error::Training(format!(
            "{key}: {n} samples, need at least {min_total} ({MIN_TRAINING_SAMPLES} after the 20% hold-out)"
        )));
    }
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for (i, (key, n)) in counts.into_iter().enumerate() {
        let set = training_set(dataset, &key, profile, mode)?;
        let key_seed = seed.wrapping_add(1000 * i as u64);
        let (model, params, validation_mape) = match plan {
            TrainingPlan::Fixed(hp) => {
                let (train, val) = set.split(HOLDOUT, key_seed);
                let model = fit_gbdt(&train, hp, key_seed)?;
                let err = mape(&model.predict_all(&val.rows), &val.latency_us)?;
                (model, hp.clone(), err)
            }
            TrainingPlan::Tune { space, trials } => {
                let r = tune(&set, space, *trials, key_seed)?;
                (r.model, r.params, r.validation_mape)
            }
        };
        reports.push(ModelReport {
            key,
            samples: n,
            params,
            validation_mape,
            gain: model.gain_importance(),
        });
        models.push(ModelEntry { key, model });
    }
    Ok((
        PredictorEnsemble {
            version: ENSEMBLE_FORMAT_VERSION,
            profile: profile.clone(),
            mode,
            models,
        },
        reports,
    ))
}

/// MAPE of `ensemble` over `dataset`, per model key.
pub fn evaluate(ensemble: &PredictorEnsemble, dataset: &Dataset) -> Result<Vec<(ModelKey, f64)>> {
    let mut groups: BTreeMap<ModelKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in &dataset.samples {
        let p = predict_latency(ensemble, &s.op, s.executor, &ensemble.profile)?;
        let g = groups.entry(ModelKey::route(&s.op, s.executor, &ensemble.profile)).or_default();
        g.0.push(p);
        g.1.push(s.latency_us);
    }
    groups
        .into_iter()
        .map(|(k, (p, a))| Ok((k, mape(&p, &a)?)))
        .collect()
}
