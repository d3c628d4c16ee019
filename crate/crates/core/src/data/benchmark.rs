use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::rng::{child_rng, standard_normal};

/// Gaussian-cluster stand-in for pretrained video features.
///
/// Class `c` gets a mean `offset + mean_scale · A z_c`, where `A` is a
/// `dim × latent_rank` matrix shared by all classes (entries `N(0, 1/rank)`)
/// and `z_c ~ N(0, I)`. With `latent_rank = 0` the mean is instead
/// `offset + mean_scale · N(0, I_dim)`. Samples are the mean plus
/// `N(0, within_std² I)` noise and are rounded to `f32` precision so the
/// binary format stores them exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmarkSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub mean_scale: f64,
    pub within_std: f64,
    pub latent_rank: usize,
    pub offset: f64,
    pub seed: u64,
}

impl Default for SyntheticBenchmarkSpec {
    fn default() -> Self {
        SyntheticBenchmarkSpec {
            num_classes: 16,
            dim: 64,
            samples_per_class: 50,
            mean_scale: 1.0,
            within_std: 1.0,
            latent_rank: 4,
            offset: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticBenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(Error::config("benchmark needs at least one class and dimension"));
        }
        if self.samples_per_class < 2 {
            return Err(Error::config(format!(
                "samples per class must be at least 2, got {}",
                self.samples_per_class
            )));
        }
        if !(self.within_std > 0.0 && self.within_std.is_finite()) {
            return Err(Error::config(format!(
                "within-class std must be positive, got {}",
                self.within_std
            )));
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite() && self.offset.is_finite()) {
            return Err(Error::config("mean scale and offset must be finite, scale >= 0"));
        }
        Ok(())
    }

    /// The class means the samples are drawn around.
    pub fn class_means(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let rank = self.latent_rank;
        let basis: Vec<f64> = if rank > 0 {
            let mut rng = child_rng(self.seed, "bench-basis", 0);
            let s = 1.0 / (rank as f64).sqrt();
            (0..self.dim * rank).map(|_| s * standard_normal(&mut rng)).collect()
        } else {
            Vec::new()
        };
        let means = (0..self.num_classes)
            .map(|c| {
                let mut rng = child_rng(self.seed, "bench-mean", c as u64);
                if rank > 0 {
                    let z: Vec<f64> = (0..rank).map(|_| standard_normal(&mut rng)).collect();
                    (0..self.dim)
                        .map(|j| {
                            let row = &basis[j * rank..(j + 1) * rank];
                            let proj: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                            self.offset + self.mean_scale * proj
                        })
                        .collect()
                } else {
                    (0..self.dim)
                        .map(|_| self.offset + self.mean_scale * standard_normal(&mut rng))
                        .collect()
                }
            })
            .collect();
        Ok(means)
    }
}

/// Draws the benchmark. Records are grouped by class, labels `0..num_classes`.
pub fn generate_benchmark(spec: &SyntheticBenchmarkSpec) -> Result<Dataset> {
    let means = spec.class_means()?;
    let mut records = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (c, mean) in means.iter().enumerate() {
        let mut rng = child_rng(spec.seed, "bench-samples", c as u64);
        for _ in 0..spec.samples_per_class {
            let features = mean
                .iter()
                .map(|&m| f64::from((m + spec.within_std * standard_normal(&mut rng)) as f32))
                .collect();
            records.push(FeatureRecord::new(c, features));
        }
    }
    Dataset::new(spec.dim, records)
}
