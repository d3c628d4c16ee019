//! Evaluation protocols, metrics and reports.

mod pipeline;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{Strategy, TaskMode};
use crate::diffcore::{cosine, mean_vector};
use crate::error::{Error, Result};

pub use pipeline::{
    evaluate_strategy, run_fsl, run_gfsl, run_once, run_protocol, run_seeds,
    synthesize_for_split, RunArtifacts, StrategySynthesis, SyntheticPool,
};
pub use report::{
    ablation_table, read_runs_jsonl, results_table, write_report_files, write_runs_csv,
    write_runs_jsonl, AblationArm,
};

/// Seeds of runs `0..n` derived from one master seed.
pub fn run_seed_list(master: u64, n: usize) -> Vec<u64> {
    (0..n).map(|i| crate::rng::derive_seed(master, "run", i as u64)).collect()
}

/// `2·s·n / (s + n)`, and 0 when both are 0.
pub fn harmonic_mean(seen: f64, novel: f64) -> Result<f64> {
    if !(seen >= 0.0 && novel >= 0.0) {
        return Err(Error::contract(format!(
            "accuracies must be non-negative, got ({seen}, {novel})"
        )));
    }
    if seen + novel == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * seen * novel / (seen + novel))
}

/// Square table of `(true label, predicted label) → count`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Confusion {
    counts: BTreeMap<(usize, usize), usize>,
}

impl Confusion {
    pub fn new() -> Self {
        Confusion::default()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        *self.counts.entry((truth, predicted)).or_default() += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts.get(&(truth, predicted)).copied().unwrap_or(0)
    }

    pub fn row_total(&self, truth: usize) -> usize {
        self.counts
            .iter()
            .filter(|((t, _), _)| *t == truth)
            .map(|(_, c)| c)
            .sum()
    }

    /// Percentage of `truth` rows predicted as `truth`, `None` if no rows.
    pub fn recall(&self, truth: usize) -> Option<f64> {
        let total = self.row_total(truth);
        (total > 0).then(|| 100.0 * self.count(truth, truth) as f64 / total as f64)
    }

    /// Micro-averaged accuracy over the rows whose true label is in `labels`.
    pub fn accuracy_over(&self, labels: &[usize]) -> Option<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for &l in labels {
            hit += self.count(l, l);
            total += self.row_total(l);
        }
        (total > 0).then(|| 100.0 * hit as f64 / total as f64)
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// `n − 1` denominator; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Sums run in ascending value order so the result does not depend on
    /// the order of `values`.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let mut sq: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
            sq.sort_by(f64::total_cmp);
            (sq.iter().sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

/// One run of one strategy under one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub mode: TaskMode,
    pub strategy: Strategy,
    pub k: usize,
    /// Percentages in `[0, 100]`; seen and harmonic are absent under FSL.
    pub seen_accuracy: Option<f64>,
    pub novel_accuracy: f64,
    pub harmonic: Option<f64>,
    /// Mean cosine distance between synthetic and real class means.
    pub synth_quality: Option<f64>,
    /// Recall of each novel class, keyed by original label.
    pub novel_recall: BTreeMap<u64, f64>,
}

impl RunRecord {
    /// Checks that the stored harmonic mean matches the stored accuracies.
    pub fn check(&self) -> Result<()> {
        if let (Some(s), Some(h)) = (self.seen_accuracy, self.harmonic) {
            let expected = harmonic_mean(s, self.novel_accuracy)?;
            if (expected - h).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "run {}: harmonic {h} vs recomputed {expected}",
                    self.run
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seen: Option<Stat>,
    pub novel: Stat,
    pub harmonic: Option<Stat>,
    pub synth_quality: Option<Stat>,
}

impl Aggregate {
    pub fn of(runs: &[RunRecord]) -> Result<Self> {
        let collect = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> {
            runs.iter().filter_map(f).collect()
        };
        let novel = Stat::of(&collect(&|r| Some(r.novel_accuracy)))
            .ok_or_else(|| Error::contract("aggregate of zero runs"))?;
        Ok(Aggregate {
            seen: Stat::of(&collect(&|r| r.seen_accuracy)),
            novel,
            // mean of per-run harmonic means
            harmonic: Stat::of(&collect(&|r| r.harmonic)),
            synth_quality: Stat::of(&collect(&|r| r.synth_quality)),
        })
    }
}

/// Every run of one (protocol, strategy, shots) cell, with its aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: TaskMode,
    pub strategy: Strategy,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
    pub per_class: BTreeMap<u64, f64>,
    /// Resolved configuration as `(key, value)` pairs.
    pub config: Vec<(String, String)>,
}

impl RunReport {
    pub fn new(runs: Vec<RunRecord>, config: Vec<(String, String)>) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::contract("report of zero runs"))?;
        let (mode, strategy, k) = (first.mode, first.strategy, first.k);
        if runs
            .iter()
            .any(|r| r.mode != mode || r.strategy != strategy || r.k != k)
        {
            return Err(Error::contract("report mixes protocols, strategies or shots"));
        }
        for r in &runs {
            r.check()?;
        }
        Ok(RunReport {
            mode,
            strategy,
            k,
            seeds: runs.iter().map(|r| r.seed).collect(),
            aggregate: Aggregate::of(&runs)?,
            per_class: per_class_accuracy(&runs),
            runs,
            config,
        })
    }
}

/// Mean recall of each class over the runs where it was novel.
pub fn per_class_accuracy(runs: &[RunRecord]) -> BTreeMap<u64, f64> {
    let mut acc: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (&c, &v) in &r.novel_recall {
            acc.entry(c).or_default().push(v);
        }
    }
    acc.into_iter()
        .map(|(c, v)| (c, Stat::of(&v).expect("non-empty").mean))
        .collect()
}

/// Mean over classes of `1 − cos(mean synthetic, mean real)`. Classes with
/// an empty synthetic or real pool are skipped with a warning.
pub fn synth_quality(
    synthetic: &BTreeMap<usize, Vec<Vec<f64>>>,
    real: &BTreeMap<usize, Vec<Vec<f64>>>,
) -> Result<f64> {
    let mut distances = Vec::new();
    for (class, fake) in synthetic {
        let Some(pool) = real.get(class).filter(|p| !p.is_empty()) else {
            log::warn!("class {class} has no real test records; skipped in synthesis quality");
            continue;
        };
        if fake.is_empty() {
            log::warn!("class {class} has no synthetic records; skipped in synthesis quality");
            continue;
        }
        distances.push(1.0 - cosine(&mean_vector(fake)?, &mean_vector(pool)?));
    }
    if distances.is_empty() {
        return Err(Error::contract("no class has both synthetic and real records"));
    }
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}
