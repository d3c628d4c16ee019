//! Final classifiers, prototype strategies and training-set assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cptn::{infer_prototype, AggregationConfig};
use crate::data::{DatasetSplit, FeatureRecord};
use crate::diffcore::{mean_vector, norm, Activation, AdamConfig, AdamState, Matrix, MlpNet, Tape, NORM_FLOOR};
use crate::error::{Error, Result};
use crate::rng::{child_rng, standard_normal};
use crate::synth::SyntheticSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Gfsl,
    Fsl,
}

impl fmt::Display for TaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskMode::Gfsl => "gfsl",
            TaskMode::Fsl => "fsl",
        })
    }
}

impl FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gfsl" | "g-fsl" => Ok(TaskMode::Gfsl),
            "fsl" => Ok(TaskMode::Fsl),
            other => Err(Error::config(format!("unknown mode '{other}' (gfsl, fsl)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Base,
    Heuristic,
    Sample,
    Learned,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Base,
        Strategy::Heuristic,
        Strategy::Sample,
        Strategy::Learned,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Strategy::Base => "base",
            Strategy::Heuristic => "heuristic",
            Strategy::Sample => "sample",
            Strategy::Learned => "learned",
        }
    }

    /// Human-readable name used in tables.
    pub fn title(self) -> &'static str {
        match self {
            Strategy::Base => "Base-Classifier",
            Strategy::Heuristic => "Heuristic-Proto",
            Strategy::Sample => "Sample-Proto",
            Strategy::Learned => "Learned-Proto",
        }
    }

    pub fn synthesizes(self) -> bool {
        self != Strategy::Base
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" | "base-classifier" => Ok(Strategy::Base),
            "heuristic" | "heuristic-proto" => Ok(Strategy::Heuristic),
            "sample" | "sample-proto" => Ok(Strategy::Sample),
            "learned" | "learned-proto" => Ok(Strategy::Learned),
            other => Err(Error::config(format!(
                "unknown strategy '{other}' (base, heuristic, sample, learned)"
            ))),
        }
    }
}

/// A classifier's label space: all seen and novel classes (GFSL) or only
/// the novel ones (FSL). Output `i` of the network scores `labels[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierTask {
    pub mode: TaskMode,
    labels: Vec<usize>,
}

impl ClassifierTask {
    pub fn new(mode: TaskMode, seen: &[usize], novel: &[usize]) -> Result<Self> {
        let mut labels: Vec<usize> = match mode {
            TaskMode::Gfsl => seen.iter().chain(novel).copied().collect(),
            TaskMode::Fsl => novel.to_vec(),
        };
        labels.sort_unstable();
        let n = labels.len();
        labels.dedup();
        if labels.len() != n {
            return Err(Error::contract("seen and novel label sets overlap"));
        }
        if labels.is_empty() {
            return Err(Error::contract("empty label space"));
        }
        Ok(ClassifierTask { mode, labels })
    }

    pub fn for_split(mode: TaskMode, split: &DatasetSplit) -> Result<Self> {
        ClassifierTask::new(mode, &split.seen_classes, &split.novel_classes)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: usize) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 30,
            learning_rate: 0.001,
            weight_decay: 0.0,
            batch_size: 32,
        }
    }
}

/// A trained single-layer softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub task: ClassifierTask,
    pub net: MlpNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub scores: Vec<f64>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    /// Argmax over the logits; ties go to the lowest class id.
    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        let scores = self.net.forward_row(features)?;
        Ok(Prediction {
            label: self.task.labels[argmax(&scores)],
            scores,
        })
    }

    pub fn predict_batch(&self, rows: &[&[f64]]) -> Result<Vec<usize>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.net.forward(&Matrix::from_rows(rows)?)?;
        Ok(logits
            .iter_rows()
            .map(|r| self.task.labels[argmax(r)])
            .collect())
    }
}

/// Trains `d_x → |labels|` with softmax cross-entropy and Adam.
pub fn train_classifier(
    records: &[FeatureRecord],
    task: &ClassifierTask,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Classifier> {
    let dim = records
        .first()
        .ok_or_else(|| Error::contract("empty classifier training set"))?
        .features
        .len();
    if cfg.batch_size == 0 {
        return Err(Error::config("classifier batch size must be positive"));
    }
    let targets: Vec<usize> = records
        .iter()
        .map(|r| {
            task.index_of(r.label).ok_or_else(|| {
                Error::contract(format!("label {} outside the {} label space", r.label, task.mode))
            })
        })
        .collect::<Result<_>>()?;
    let mut net = MlpNet::init(
        &[dim, task.width()],
        &[Activation::Identity],
        &mut child_rng(seed, "classifier-init", 0),
    )?;
    let adam = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    adam.validate()?;
    let mut opt = AdamState::new(adam, net.params());
    let mut rng = child_rng(seed, "classifier-batches", 0);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x: Vec<&[f64]> = batch.iter().map(|&i| records[i].features.as_slice()).collect();
            let y: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let xs = tape.constant(Matrix::from_rows(&x)?);
            let logits = net.forward_expr(&mut tape, &bound, xs)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let grads = tape.backward(loss)?;
            opt.step(&mut net.params_mut(), &bound.grads(&grads))?;
        }
    }
    Ok(Classifier {
        task: task.clone(),
        net,
    })
}

/// `v / max(‖v‖, floor)`.
pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v).max(NORM_FLOOR);
    v.iter().map(|x| x / n).collect()
}

fn finish(v: Vec<f64>, normalize: bool) -> Vec<f64> {
    if normalize {
        unit(&v)
    } else {
        v
    }
}

/// Per-record conditioning vectors for training the GAN on seen classes.
/// `targets` holds each seen class's aggregation target.
///
/// Learned and Heuristic condition every record on its class target;
/// Sample conditions every record on its own pooled features.
pub fn seen_conditions(
    strategy: Strategy,
    records: &[FeatureRecord],
    targets: &BTreeMap<usize, Vec<f64>>,
    agg: &AggregationConfig,
    normalize: bool,
) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| match strategy {
            Strategy::Learned | Strategy::Heuristic => targets
                .get(&r.label)
                .map(|t| finish(t.clone(), normalize))
                .ok_or_else(|| Error::contract(format!("seen class {} has no target", r.label))),
            Strategy::Sample => Ok(finish(agg.reduce(&r.features)?, normalize)),
            Strategy::Base => Err(Error::contract("the base classifier has no conditioning")),
        })
        .collect()
}

/// Conditioning vectors for one novel class from its shots.
///
/// * Learned: mean of the CPTN outputs over the shots.
/// * Heuristic: the pooled mean of the shots.
/// * Sample: each shot pooled on its own, one vector per shot.
pub fn novel_conditions(
    strategy: Strategy,
    shots: &[&[f64]],
    agg: &AggregationConfig,
    cptn: Option<&MlpNet>,
    normalize: bool,
) -> Result<Vec<Vec<f64>>> {
    if shots.is_empty() {
        return Err(Error::contract("novel class without shots"));
    }
    Ok(match strategy {
        Strategy::Learned => {
            let net = cptn.ok_or_else(|| Error::contract("Learned-Proto needs a trained CPTN"))?;
            vec![finish(infer_prototype(net, shots)?, normalize)]
        }
        Strategy::Heuristic => vec![finish(agg.reduce(&mean_vector(shots)?)?, normalize)],
        Strategy::Sample => shots
            .iter()
            .map(|s| Ok(finish(agg.reduce(s)?, normalize)))
            .collect::<Result<_>>()?,
        Strategy::Base => return Err(Error::contract("the base classifier has no conditioning")),
    })
}

/// Feature-space stand-in for the base classifier's data augmentation:
/// every novel shot appears `multiple` times, the copies after the first
/// perturbed with Gaussian noise of `jitter ×` the per-dimension standard
/// deviation of the seen training features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseAugment {
    pub multiple: usize,
    pub jitter: f64,
}

impl Default for BaseAugment {
    fn default() -> Self {
        BaseAugment {
            multiple: 5,
            jitter: 0.01,
        }
    }
}

fn feature_std(records: &[FeatureRecord]) -> Vec<f64> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let d = first.features.len();
    let n = records.len() as f64;
    let mut mean = vec![0.0; d];
    for r in records {
        for (m, v) in mean.iter_mut().zip(&r.features) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in records {
        for ((s, v), m) in var.iter_mut().zip(&r.features).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

/// Assembles a classifier training set: seen training records (GFSL only),
/// the novel shots, and either the synthetic rows (prototype strategies) or
/// the augmented shot copies (base classifier).
pub fn build_training_set(
    split: &DatasetSplit,
    strategy: Strategy,
    mode: TaskMode,
    synthetic: Option<&[SyntheticSample]>,
    augment: &BaseAugment,
    seed: u64,
) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    if mode == TaskMode::Gfsl {
        out.extend(split.seen_train.iter().cloned());
    }
    out.extend(split.novel_shots.iter().cloned());
    match (strategy, synthetic) {
        (Strategy::Base, None) => {
            if augment.multiple == 0 {
                return Err(Error::config("augmentation multiple must be at least 1"));
            }
            if augment.multiple > 1 {
                let std = if split.seen_train.is_empty() {
                    feature_std(&split.novel_shots)
                } else {
                    feature_std(&split.seen_train)
                };
                let mut rng = child_rng(seed, "base-augment", 0);
                for shot in &split.novel_shots {
                    for _ in 1..augment.multiple {
                        let features = shot
                            .features
                            .iter()
                            .zip(&std)
                            .map(|(v, s)| v + augment.jitter * s * standard_normal(&mut rng))
                            .collect();
                        out.push(FeatureRecord::new(shot.label, features));
                    }
                }
            }
        }
        (Strategy::Base, Some(_)) => {
            return Err(Error::contract("the base classifier takes no synthetic rows"));
        }
        (_, None) => {
            return Err(Error::contract(format!(
                "{} needs synthetic features",
                strategy.title()
            )));
        }
        (_, Some(rows)) => {
            let novel: std::collections::BTreeSet<usize> =
                split.novel_classes.iter().copied().collect();
            for s in rows {
                if !novel.contains(&s.class) {
                    return Err(Error::contract(format!(
                        "synthetic row for non-novel class {}",
                        s.class
                    )));
                }
                out.push(FeatureRecord::new(s.class, s.features.clone()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cptn::Pooling;
    use crate::data::{generate_benchmark, SplitConfig, SyntheticBenchmarkSpec};
    use crate::diffcore::Layer;

    fn toy_split(k: usize) -> DatasetSplit {
        let ds = generate_benchmark(&SyntheticBenchmarkSpec {
            num_classes: 4,
            dim: 8,
            samples_per_class: 10,
            ..Default::default()
        })
        .unwrap();
        let cfg = SplitConfig {
            n_seen: 2,
            n_novel: 2,
            k,
            seen_test_fraction: 0.2,
        };
        DatasetSplit::build(&ds, &cfg, 5).unwrap()
    }

    fn fixed(weights: Vec<f64>, width: usize, bias: Vec<f64>, labels: &[usize]) -> Classifier {
        let d = weights.len() / width;
        Classifier {
            task: ClassifierTask::new(TaskMode::Fsl, &[], labels).unwrap(),
            net: MlpNet::new(vec![Layer::new(
                Matrix::from_vec(d, width, weights).unwrap(),
                Matrix::from_vec(1, width, bias).unwrap(),
                Activation::Identity,
            )
            .unwrap()])
            .unwrap(),
        }
    }

    #[test]
    fn predict_argmax_and_ties() {
        let c = fixed(vec![0.0, 0.0], 2, vec![0.2, 0.9], &[3, 7]);
        assert_eq!(c.predict(&[1.0]).unwrap().label, 7);
        let c = fixed(vec![0.0, 0.0], 2, vec![0.5, 0.5], &[3, 7]);
        assert_eq!(c.predict(&[1.0]).unwrap().label, 3);
        let c = fixed(vec![0.0, 0.0], 2, vec![100.2, 100.9], &[3, 7]);
        assert_eq!(c.predict(&[1.0]).unwrap().label, 7);
        assert!(c.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn task_label_spaces() {
        let g = ClassifierTask::new(TaskMode::Gfsl, &[0, 4], &[2, 1]).unwrap();
        assert_eq!(g.labels(), &[0, 1, 2, 4]);
        let f = ClassifierTask::new(TaskMode::Fsl, &[0, 4], &[2, 1]).unwrap();
        assert_eq!(f.labels(), &[1, 2]);
        assert!(ClassifierTask::new(TaskMode::Gfsl, &[1], &[1]).is_err());
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let mut recs = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 20.0;
            recs.push(FeatureRecord::new(0, vec![1.0 + t, -1.0, 0.5]));
            recs.push(FeatureRecord::new(1, vec![-1.0 - t, 1.0, 0.5]));
        }
        let task = ClassifierTask::new(TaskMode::Fsl, &[], &[0, 1]).unwrap();
        let cfg = ClassifierConfig {
            epochs: 200,
            ..Default::default()
        };
        let c = train_classifier(&recs, &task, &cfg, 1).unwrap();
        let correct = recs
            .iter()
            .filter(|r| c.predict(&r.features).unwrap().label == r.label)
            .count();
        assert_eq!(correct, recs.len());
        let again = train_classifier(&recs, &task, &cfg, 1).unwrap();
        assert_eq!(again.net, c.net);
    }

    #[test]
    fn single_class_always_predicted() {
        let recs = vec![FeatureRecord::new(5, vec![1.0, 2.0])];
        let task = ClassifierTask::new(TaskMode::Fsl, &[], &[5]).unwrap();
        let c = train_classifier(&recs, &task, &ClassifierConfig::default(), 0).unwrap();
        assert_eq!(c.predict(&[-40.0, 3.0]).unwrap().label, 5);
        let bad = vec![FeatureRecord::new(6, vec![1.0, 2.0])];
        assert!(train_classifier(&bad, &task, &ClassifierConfig::default(), 0).is_err());
    }

    #[test]
    fn base_without_augmentation_is_seen_plus_shots() {
        let split = toy_split(2);
        let aug = BaseAugment {
            multiple: 1,
            jitter: 0.01,
        };
        let set = build_training_set(&split, Strategy::Base, TaskMode::Gfsl, None, &aug, 0).unwrap();
        let expected: Vec<FeatureRecord> = split
            .seen_train
            .iter()
            .chain(&split.novel_shots)
            .cloned()
            .collect();
        assert_eq!(set, expected);
        let fsl = build_training_set(&split, Strategy::Base, TaskMode::Fsl, None, &aug, 0).unwrap();
        assert_eq!(fsl, split.novel_shots);
    }

    #[test]
    fn base_augmentation_counts() {
        let split = toy_split(1);
        let aug = BaseAugment::default();
        let set = build_training_set(&split, Strategy::Base, TaskMode::Gfsl, None, &aug, 0).unwrap();
        assert_eq!(
            set.len(),
            split.seen_train.len() + split.novel_shots.len() * aug.multiple
        );
    }

    #[test]
    fn missing_artifacts_are_contract_errors() {
        let split = toy_split(1);
        let aug = BaseAugment::default();
        for s in [Strategy::Learned, Strategy::Heuristic, Strategy::Sample] {
            assert!(matches!(
                build_training_set(&split, s, TaskMode::Gfsl, None, &aug, 0),
                Err(Error::Contract(_))
            ));
        }
        let agg = AggregationConfig {
            pooling: Pooling::Average,
            factor: 2,
        };
        let shot = vec![1.0; 8];
        assert!(novel_conditions(Strategy::Learned, &[&shot], &agg, None, true).is_err());
    }

    #[test]
    fn heuristic_one_shot_is_pooled_shot() {
        let agg = AggregationConfig {
            pooling: Pooling::Average,
            factor: 2,
        };
        let shot = [1.0, 3.0, 2.0, 4.0];
        let c = novel_conditions(Strategy::Heuristic, &[&shot], &agg, None, false).unwrap();
        assert_eq!(c, vec![vec![2.0, 3.0]]);
        let c = novel_conditions(Strategy::Heuristic, &[&shot], &agg, None, true).unwrap();
        let n = 13f64.sqrt();
        assert!((c[0][0] - 2.0 / n).abs() < 1e-15 && (c[0][1] - 3.0 / n).abs() < 1e-15);
        let s = novel_conditions(Strategy::Sample, &[&shot, &shot], &agg, None, false).unwrap();
        assert_eq!(s.len(), 2);
    }
}
