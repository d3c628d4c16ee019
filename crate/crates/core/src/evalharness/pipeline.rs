use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{harmonic_mean, synth_quality, Confusion, RunRecord, RunReport};
use crate::cgan::{train_cgan, GanTraining, GanTriple};
use crate::classify::{
    build_training_set, novel_conditions, seen_conditions, train_classifier, ClassifierTask,
    Strategy, TaskMode,
};
use crate::config::Config;
use crate::cptn::{class_targets, train_cptn, CptnModel};
use crate::data::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::synth::{default_count, prune, synthesize_cycled, SyntheticSample};

/// Synthetic rows of one strategy for every novel class.
#[derive(Debug, Clone)]
pub struct StrategySynthesis {
    pub generated: Vec<SyntheticSample>,
    /// What the classifier trains on: `generated` after optional pruning.
    pub kept: Vec<SyntheticSample>,
    pub quality: f64,
}

/// Everything trained for one split.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub split: DatasetSplit,
    pub cptn: Option<CptnModel>,
    /// GAN conditioned on class targets (Learned and Heuristic).
    pub target_gan: Option<GanTraining>,
    /// GAN conditioned on individual pooled samples (Sample).
    pub sample_gan: Option<GanTraining>,
    pub synthesis: BTreeMap<Strategy, StrategySynthesis>,
}

impl RunArtifacts {
    pub fn triple_for(&self, strategy: Strategy) -> Option<&GanTriple> {
        match strategy {
            Strategy::Learned | Strategy::Heuristic => self.target_gan.as_ref().map(|g| &g.triple),
            Strategy::Sample => self.sample_gan.as_ref().map(|g| &g.triple),
            Strategy::Base => None,
        }
    }
}

fn class_pools(records: &[crate::data::FeatureRecord]) -> BTreeMap<usize, Vec<Vec<f64>>> {
    let mut pools: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for r in records {
        pools.entry(r.label).or_default().push(r.features.clone());
    }
    pools
}

/// Trains the CPTN and GANs the requested strategies need on the split's
/// seen classes, then synthesizes (and prunes) rows for every novel class.
pub fn synthesize_for_split(
    split: DatasetSplit,
    cfg: &Config,
    strategies: &[Strategy],
    seed: u64,
) -> Result<RunArtifacts> {
    let agg = &cfg.aggregation;
    let normalize = cfg.synth.normalize_conditioning;
    let wants = |s: Strategy| strategies.contains(&s);
    let seen = &split.seen_train;
    let feature_dim = seen
        .first()
        .ok_or_else(|| Error::contract("split has no seen training records"))?
        .features
        .len();
    let proto_dim = agg.prototype_dim(feature_dim)?;

    let cptn = if wants(Strategy::Learned) {
        Some(train_cptn(seen, agg, &cfg.cptn, derive_seed(seed, "cptn", 0))?)
    } else {
        None
    };

    let targets = class_targets(seen, agg)?;
    let gan_seed = derive_seed(seed, "cgan", 0);
    let train_gan = |strategy: Strategy| -> Result<GanTraining> {
        let conditions = seen_conditions(strategy, seen, &targets, agg, normalize)?;
        let dims = cfg.gan.dims(feature_dim, proto_dim);
        let triple = GanTriple::init(dims, &cfg.gan, gan_seed)?;
        train_cgan(seen, &conditions, triple, &cfg.gan, gan_seed)
    };
    let target_gan = if wants(Strategy::Learned) || wants(Strategy::Heuristic) {
        Some(train_gan(Strategy::Heuristic)?)
    } else {
        None
    };
    let sample_gan = if wants(Strategy::Sample) {
        Some(train_gan(Strategy::Sample)?)
    } else {
        None
    };

    let count = if cfg.synth.count == 0 {
        default_count(&split.seen_cardinalities())?
    } else {
        cfg.synth.count
    };
    let real_pools = class_pools(&split.novel_heldout);
    let mut artifacts = RunArtifacts {
        split,
        cptn,
        target_gan,
        sample_gan,
        synthesis: BTreeMap::new(),
    };

    for &strategy in strategies.iter().filter(|s| s.synthesizes()) {
        let triple = artifacts
            .triple_for(strategy)
            .ok_or_else(|| Error::contract(format!("{} has no GAN", strategy.title())))?;
        let mut generated = Vec::new();
        let mut kept = Vec::new();
        let mut fake_pools = BTreeMap::new();
        for &class in &artifacts.split.novel_classes {
            let shots: Vec<&[f64]> = artifacts
                .split
                .shots_of(class)
                .into_iter()
                .map(|r| r.features.as_slice())
                .collect();
            let conditions = novel_conditions(
                strategy,
                &shots,
                agg,
                artifacts.cptn.as_ref().map(|m| &m.net),
                normalize,
            )?;
            let samples = synthesize_cycled(
                triple,
                &conditions,
                class,
                count,
                derive_seed(seed, "synth", class as u64),
            )?;
            fake_pools.insert(
                class,
                samples.iter().map(|s| s.features.clone()).collect::<Vec<_>>(),
            );
            let class_kept = if cfg.synth.prune {
                prune(samples.clone(), cfg.synth.keep_fraction)?
            } else {
                samples.clone()
            };
            generated.extend(samples);
            kept.extend(class_kept);
        }
        let quality = synth_quality(&fake_pools, &real_pools)?;
        artifacts.synthesis.insert(
            strategy,
            StrategySynthesis {
                generated,
                kept,
                quality,
            },
        );
    }
    Ok(artifacts)
}

/// Which synthetic rows a classifier trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticPool {
    /// The pruned set (or everything when pruning is disabled).
    Kept,
    /// Every generated row, ignoring pruning.
    Generated,
}

/// Trains and scores one classifier on already synthesized artifacts.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_strategy(
    ds: &Dataset,
    artifacts: &RunArtifacts,
    cfg: &Config,
    mode: TaskMode,
    strategy: Strategy,
    pool: SyntheticPool,
    run: usize,
    seed: u64,
) -> Result<RunRecord> {
    let split = &artifacts.split;
    let task = ClassifierTask::for_split(mode, split)?;
    let synthesis = artifacts.synthesis.get(&strategy);
    let rows = synthesis.map(|s| match pool {
        SyntheticPool::Kept => s.kept.as_slice(),
        SyntheticPool::Generated => s.generated.as_slice(),
    });
    let train = build_training_set(
        split,
        strategy,
        mode,
        rows,
        &cfg.base,
        derive_seed(seed, "augment", 0),
    )?;
    let classifier =
        train_classifier(&train, &task, &cfg.classifier, derive_seed(seed, "classifier", 0))?;

    let mut confusion = Confusion::new();
    let test = match mode {
        TaskMode::Gfsl => split.seen_test.iter().chain(&split.novel_heldout).collect::<Vec<_>>(),
        TaskMode::Fsl => split.novel_heldout.iter().collect(),
    };
    let rows: Vec<&[f64]> = test.iter().map(|r| r.features.as_slice()).collect();
    for (r, p) in test.iter().zip(classifier.predict_batch(&rows)?) {
        confusion.add(r.label, p);
    }
    let novel_accuracy = confusion
        .accuracy_over(&split.novel_classes)
        .ok_or_else(|| Error::contract("no novel test records"))?;
    let seen_accuracy = match mode {
        TaskMode::Gfsl => Some(
            confusion
                .accuracy_over(&split.seen_classes)
                .ok_or_else(|| Error::contract("no seen test records"))?,
        ),
        TaskMode::Fsl => None,
    };
    let harmonic = seen_accuracy
        .map(|s| harmonic_mean(s, novel_accuracy))
        .transpose()?;
    let novel_recall = split
        .novel_classes
        .iter()
        .filter_map(|&c| confusion.recall(c).map(|r| (ds.label_map()[c], r)))
        .collect();
    Ok(RunRecord {
        run,
        seed,
        mode,
        strategy,
        k: split.k,
        seen_accuracy,
        novel_accuracy,
        harmonic,
        synth_quality: synthesis.map(|s| s.quality),
        novel_recall,
    })
}

/// One randomized run: split, train, synthesize, then one classifier per
/// (protocol, strategy). Records come out protocol-major in the given
/// orders.
pub fn run_once(
    ds: &Dataset,
    cfg: &Config,
    k: usize,
    modes: &[TaskMode],
    strategies: &[Strategy],
    run: usize,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    let split = DatasetSplit::build(ds, &cfg.split_config(k), seed)?;
    let artifacts = synthesize_for_split(split, cfg, strategies, seed)?;
    let mut records = Vec::new();
    for &mode in modes {
        for &strategy in strategies {
            records.push(evaluate_strategy(
                ds,
                &artifacts,
                cfg,
                mode,
                strategy,
                SyntheticPool::Kept,
                run,
                seed,
            )?);
        }
    }
    log::info!("run {run} (k = {k}, seed {seed:#x}) finished");
    Ok(records)
}

/// Runs every seed, up to `jobs` at a time, and returns the records in
/// run order.
pub fn run_seeds(
    ds: &Dataset,
    cfg: &Config,
    k: usize,
    modes: &[TaskMode],
    strategies: &[Strategy],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let one = |(run, &seed): (usize, &u64)| {
        run_once(ds, cfg, k, modes, strategies, run, seed).map_err(|e| Error::Run {
            run,
            source: Box::new(e),
        })
    };
    let per_run: Vec<Result<Vec<RunRecord>>> = if jobs <= 1 {
        seeds.iter().enumerate().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().enumerate().map(one).collect())
    };
    let mut out = Vec::new();
    for r in per_run {
        out.extend(r?);
    }
    Ok(out)
}

/// Runs the protocol and groups the records into one report per
/// (protocol, strategy), protocol-major.
pub fn run_protocol(
    ds: &Dataset,
    cfg: &Config,
    k: usize,
    modes: &[TaskMode],
    strategies: &[Strategy],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<RunReport>> {
    let records = run_seeds(ds, cfg, k, modes, strategies, seeds, jobs)?;
    let echo = cfg.echo();
    let mut reports = Vec::new();
    for &mode in modes {
        for &strategy in strategies {
            let runs: Vec<RunRecord> = records
                .iter()
                .filter(|r| r.mode == mode && r.strategy == strategy)
                .cloned()
                .collect();
            reports.push(RunReport::new(runs, echo.clone())?);
        }
    }
    Ok(reports)
}

pub fn run_gfsl(
    ds: &Dataset,
    k: usize,
    strategy: Strategy,
    seeds: &[u64],
    cfg: &Config,
    jobs: usize,
) -> Result<RunReport> {
    let mut r = run_protocol(ds, cfg, k, &[TaskMode::Gfsl], &[strategy], seeds, jobs)?;
    Ok(r.remove(0))
}

pub fn run_fsl(
    ds: &Dataset,
    k: usize,
    strategy: Strategy,
    seeds: &[u64],
    cfg: &Config,
    jobs: usize,
) -> Result<RunReport> {
    let mut r = run_protocol(ds, cfg, k, &[TaskMode::Fsl], &[strategy], seeds, jobs)?;
    Ok(r.remove(0))
}
