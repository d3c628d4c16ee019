//! Feature-vector datasets: ingestion, class splits, k-shot sampling and the
//! synthetic benchmark generator.

mod benchmark;
mod io;
mod split;

use serde::{Deserialize, Serialize};

pub use benchmark::{generate_benchmark, SyntheticBenchmarkSpec};
pub use io::{load_features, read_binary, read_csv, save_features, write_binary, write_csv, FeatureFormat};
pub use split::{sample_k_shots, split_classes, DatasetSplit, SplitConfig};

use crate::error::{Error, Result};

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub label: usize,
    pub features: Vec<f64>,
}

impl FeatureRecord {
    pub fn new(label: usize, features: Vec<f64>) -> Self {
        FeatureRecord { label, features }
    }
}

/// Records of uniform dimension with dense labels `0..num_classes`.
///
/// `label_map[i]` is the label class `i` carried in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    records: Vec<FeatureRecord>,
    label_map: Vec<u64>,
}

impl Dataset {
    /// Validates dimensions and finiteness, then remaps labels to dense ids
    /// in ascending order of the original labels.
    pub fn new(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("feature dimension must be positive"));
        }
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != dim {
                return Err(Error::Ingestion {
                    row: i + 1,
                    message: format!("{} features, expected {dim}", r.features.len()),
                });
            }
            if let Some(j) = r.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::Ingestion {
                    row: i + 1,
                    message: format!("non-finite value in feature {j}"),
                });
            }
        }
        let mut originals: Vec<u64> = records.iter().map(|r| r.label as u64).collect();
        originals.sort_unstable();
        originals.dedup();
        let mut records = records;
        for r in &mut records {
            r.label = originals
                .binary_search(&(r.label as u64))
                .expect("label collected above");
        }
        Ok(Dataset {
            dim,
            records,
            label_map: originals,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn label_map(&self) -> &[u64] {
        &self.label_map
    }

    /// Distinct dense labels, ascending.
    pub fn classes(&self) -> Vec<usize> {
        (0..self.num_classes()).collect()
    }

    /// Records of one class in file order.
    pub fn class_records(&self, label: usize) -> Vec<&FeatureRecord> {
        self.records.iter().filter(|r| r.label == label).collect()
    }

    /// Per-class record counts indexed by dense label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }
}
