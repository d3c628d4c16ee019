//! Class-prototype transfer network.
//!
//! Seen classes get an aggregation target (class mean followed by window
//! pooling). A small MLP learns to map single feature vectors to their
//! class's target under a cosine loss, and is then applied to the shots of
//! novel classes.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::FeatureRecord;
use crate::diffcore::{cosine, mean_vector, Activation, AdamConfig, AdamState, Matrix, MlpNet, Tape};
use crate::error::{Error, Result};
use crate::rng::child_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Average,
    Max,
    None,
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" | "average" | "avgpool" => Ok(Pooling::Average),
            "max" | "maxpool" => Ok(Pooling::Max),
            "none" | "nopool" => Ok(Pooling::None),
            other => Err(Error::config(format!("unknown pooling '{other}'"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Average => "avg",
            Pooling::Max => "max",
            Pooling::None => "none",
        })
    }
}

/// Dimensionality reduction applied after the class mean. `factor` is the
/// width of the non-overlapping pooling windows and is ignored by
/// [`Pooling::None`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub pooling: Pooling,
    pub factor: usize,
}

impl AggregationConfig {
    /// Prototype width for features of width `d_x`.
    pub fn prototype_dim(&self, d_x: usize) -> Result<usize> {
        match self.pooling {
            Pooling::None => Ok(d_x),
            _ => {
                if self.factor == 0 || !d_x.is_multiple_of(self.factor) {
                    return Err(Error::config(format!(
                        "pool factor {} does not divide feature width {d_x}",
                        self.factor
                    )));
                }
                Ok(d_x / self.factor)
            }
        }
    }

    /// Applies the window reduction to one vector.
    pub fn reduce(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.prototype_dim(v.len())?;
        Ok(match self.pooling {
            Pooling::None => v.to_vec(),
            Pooling::Average => v
                .chunks_exact(self.factor)
                .map(|w| w.iter().sum::<f64>() / self.factor as f64)
                .collect(),
            Pooling::Max => v
                .chunks_exact(self.factor)
                .map(|w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
        })
    }
}

/// A class-prototype vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class: usize,
    pub values: Vec<f64>,
}

/// Class mean of `features` followed by the configured reduction.
pub fn aggregate_target<R: AsRef<[f64]>>(features: &[R], cfg: &AggregationConfig) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::contract("aggregation target of an empty class"));
    }
    cfg.reduce(&mean_vector(features)?)
}

/// Aggregation targets for every class present in `records`.
pub fn class_targets(
    records: &[FeatureRecord],
    cfg: &AggregationConfig,
) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut by_class: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.label).or_default().push(&r.features);
    }
    by_class
        .into_iter()
        .map(|(c, rows)| Ok((c, aggregate_target(&rows, cfg)?)))
        .collect()
}

/// `1 − cos(predicted, target)`, in `[0, 2]`.
pub fn cosine_loss(predicted: &[f64], target: &[f64]) -> f64 {
    1.0 - cosine(predicted, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CptnConfig {
    /// Hidden width; `0` means `d_x / 4`.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for CptnConfig {
    fn default() -> Self {
        CptnConfig {
            hidden: 0,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.005,
            weight_decay: 0.0005,
        }
    }
}

impl CptnConfig {
    fn hidden_for(&self, d_x: usize) -> usize {
        if self.hidden == 0 {
            (d_x / 4).max(1)
        } else {
            self.hidden
        }
    }
}

/// `d_x → hidden (LeakyReLU) → d_φ (Sigmoid)`.
pub fn init_cptn(d_x: usize, d_phi: usize, cfg: &CptnConfig, seed: u64) -> Result<MlpNet> {
    let mut rng = child_rng(seed, "cptn-init", 0);
    MlpNet::init(
        &[d_x, cfg.hidden_for(d_x), d_phi],
        &[Activation::leaky(), Activation::Sigmoid],
        &mut rng,
    )
}

#[derive(Debug, Clone)]
pub struct CptnModel {
    pub net: MlpNet,
    /// Mean per-sample loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a freshly initialised network. See [`train_cptn_from`].
pub fn train_cptn(
    records: &[FeatureRecord],
    agg: &AggregationConfig,
    cfg: &CptnConfig,
    seed: u64,
) -> Result<CptnModel> {
    let d_x = records
        .first()
        .ok_or_else(|| Error::contract("no seen records to train on"))?
        .features
        .len();
    let d_phi = agg.prototype_dim(d_x)?;
    let net = init_cptn(d_x, d_phi, cfg, seed)?;
    train_cptn_from(net, records, agg, cfg, seed)
}

/// Minimises the mean of `1 − cos(net(x), target(class(x)))` over the seen
/// records with Adam.
pub fn train_cptn_from(
    mut net: MlpNet,
    records: &[FeatureRecord],
    agg: &AggregationConfig,
    cfg: &CptnConfig,
    seed: u64,
) -> Result<CptnModel> {
    if records.is_empty() {
        return Err(Error::contract("no seen records to train on"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("CPTN batch size must be positive"));
    }
    let d_x = records[0].features.len();
    let d_phi = agg.prototype_dim(d_x)?;
    if net.in_dim() != d_x || net.out_dim() != d_phi {
        return Err(Error::config(format!(
            "CPTN maps {} -> {}, data needs {d_x} -> {d_phi}",
            net.in_dim(),
            net.out_dim()
        )));
    }
    let targets = class_targets(records, agg)?;
    let adam = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    adam.validate()?;
    let mut opt = AdamState::new(adam, net.params());
    let mut rng = child_rng(seed, "cptn-batches", 0);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x: Vec<&[f64]> = batch.iter().map(|&i| records[i].features.as_slice()).collect();
            let t: Vec<&[f64]> = batch
                .iter()
                .map(|&i| targets[&records[i].label].as_slice())
                .collect();
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let xs = tape.constant(Matrix::from_rows(&x)?);
            let ts = tape.constant(Matrix::from_rows(&t)?);
            let pred = net.forward_expr(&mut tape, &bound, xs)?;
            let cos = tape.row_cosine(pred, ts)?;
            let mean_cos = tape.mean(cos)?;
            let loss = tape.scale(mean_cos, -1.0);
            let loss = tape.add_scalar(loss, 1.0);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Numerical("CPTN loss is not finite".into()));
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            opt.step(&mut net.params_mut(), &bound.grads(&grads))?;
        }
        epoch_losses.push(total / records.len() as f64);
    }
    Ok(CptnModel { net, epoch_losses })
}

/// Mean of the network outputs over the shots.
pub fn infer_prototype<R: AsRef<[f64]>>(net: &MlpNet, shots: &[R]) -> Result<Vec<f64>> {
    if shots.is_empty() {
        return Err(Error::contract("prototype inference needs at least one shot"));
    }
    let out = net.forward(&Matrix::from_rows(shots)?)?;
    let rows: Vec<&[f64]> = out.iter_rows().collect();
    mean_vector(&rows)
}
