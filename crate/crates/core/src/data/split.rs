use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::rng::{child_rng, rng_from_seed};

/// Partitions the distinct labels into `n_seen` seen and `n_novel` novel
/// classes, uniformly at random. Both returned sets are sorted.
pub fn split_classes(
    all_labels: &[usize],
    n_seen: usize,
    n_novel: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut labels = all_labels.to_vec();
    labels.sort_unstable();
    labels.dedup();
    if n_seen + n_novel > labels.len() {
        return Err(Error::contract(format!(
            "{n_seen} seen + {n_novel} novel classes requested from {} labels",
            labels.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    labels.shuffle(&mut rng);
    let mut seen = labels[..n_seen].to_vec();
    let mut novel = labels[n_seen..n_seen + n_novel].to_vec();
    seen.sort_unstable();
    novel.sort_unstable();
    Ok((seen, novel))
}

/// Picks `k` items as shots; the rest are held out. Both parts keep the
/// input order.
pub fn sample_k_shots<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if k == 0 || k >= items.len() {
        return Err(Error::contract(format!(
            "{k} shots from a class of {} records (need 1 <= k < size)",
            items.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut picked = vec![false; items.len()];
    for i in index::sample(&mut rng, items.len(), k) {
        picked[i] = true;
    }
    let (mut shots, mut heldout) = (Vec::with_capacity(k), Vec::new());
    for (item, p) in items.iter().zip(picked) {
        if p {
            shots.push(item.clone());
        } else {
            heldout.push(item.clone());
        }
    }
    Ok((shots, heldout))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_seen: usize,
    pub n_novel: usize,
    pub k: usize,
    /// Fraction of each seen class held out as the seen test pool.
    pub seen_test_fraction: f64,
}

/// One randomized seen/novel partition with k-shot selections.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub seen_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub seen_train: Vec<FeatureRecord>,
    pub seen_test: Vec<FeatureRecord>,
    pub novel_shots: Vec<FeatureRecord>,
    pub novel_heldout: Vec<FeatureRecord>,
    pub k: usize,
    pub seed: u64,
}

impl DatasetSplit {
    /// Builds a split. Class partition, seen holdout and shot draws each use
    /// their own child seed of `seed` (`"split"`, `"seen-holdout"`/class,
    /// `"shots"`/class).
    pub fn build(ds: &Dataset, cfg: &SplitConfig, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.seen_test_fraction) {
            return Err(Error::config(format!(
                "seen test fraction {} not in [0, 1)",
                cfg.seen_test_fraction
            )));
        }
        let labels = ds.classes();
        let split_seed = crate::rng::derive_seed(seed, "split", 0);
        let (seen_classes, novel_classes) =
            split_classes(&labels, cfg.n_seen, cfg.n_novel, split_seed)?;

        let mut seen_train = Vec::new();
        let mut seen_test = Vec::new();
        let mut min_seen = usize::MAX;
        for &c in &seen_classes {
            let recs: Vec<FeatureRecord> = ds.class_records(c).into_iter().cloned().collect();
            let n_test = ((cfg.seen_test_fraction * recs.len() as f64).floor() as usize)
                .min(recs.len().saturating_sub(1));
            let mut order: Vec<usize> = (0..recs.len()).collect();
            order.shuffle(&mut child_rng(seed, "seen-holdout", c as u64));
            let mut is_test = vec![false; recs.len()];
            for &i in &order[..n_test] {
                is_test[i] = true;
            }
            let n_train = recs.len() - n_test;
            min_seen = min_seen.min(n_train);
            for (r, t) in recs.into_iter().zip(is_test) {
                if t {
                    seen_test.push(r);
                } else {
                    seen_train.push(r);
                }
            }
        }
        if cfg.n_seen > 0 && cfg.k >= min_seen {
            return Err(Error::contract(format!(
                "k = {} must be below the smallest seen training class ({min_seen})",
                cfg.k
            )));
        }

        let mut novel_shots = Vec::new();
        let mut novel_heldout = Vec::new();
        for &c in &novel_classes {
            let recs: Vec<FeatureRecord> = ds.class_records(c).into_iter().cloned().collect();
            let shot_seed = crate::rng::derive_seed(seed, "shots", c as u64);
            let (shots, held) = sample_k_shots(&recs, cfg.k, shot_seed)
                .map_err(|e| Error::contract(format!("novel class {c}: {e}")))?;
            novel_shots.extend(shots);
            novel_heldout.extend(held);
        }

        Ok(DatasetSplit {
            seen_classes,
            novel_classes,
            seen_train,
            seen_test,
            novel_shots,
            novel_heldout,
            k: cfg.k,
            seed,
        })
    }

    /// Seen training records per seen class, in `seen_classes` order.
    pub fn seen_cardinalities(&self) -> Vec<usize> {
        self.seen_classes
            .iter()
            .map(|&c| self.seen_train.iter().filter(|r| r.label == c).count())
            .collect()
    }

    pub fn shots_of(&self, class: usize) -> Vec<&FeatureRecord> {
        self.novel_shots.iter().filter(|r| r.label == class).collect()
    }
}
