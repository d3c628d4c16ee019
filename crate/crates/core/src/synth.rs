//! Novel-class feature synthesis and reconstruction-loss pruning.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cgan::GanTriple;
use crate::data::{save_features, Dataset, FeatureFormat, FeatureRecord};
use crate::diffcore::cosine;
use crate::error::{Error, Result};
use crate::rng::{child_rng, standard_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub features: Vec<f64>,
    pub class: usize,
    /// `1 − cos(h(features), φ)` for the conditioning vector `φ` used.
    pub recon_loss: f64,
    /// Position in generation order; used as the pruning tie-break.
    pub index: usize,
}

/// `count` draws conditioned on `prototype`.
pub fn synthesize_class(
    triple: &GanTriple,
    prototype: &[f64],
    class: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    synthesize_cycled(triple, std::slice::from_ref(&prototype.to_vec()), class, count, seed)
}

/// `count` draws, draw `i` conditioned on `conditions[i % len]`.
pub fn synthesize_cycled(
    triple: &GanTriple,
    conditions: &[Vec<f64>],
    class: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    if count == 0 {
        return Err(Error::contract("synthesis count must be at least 1"));
    }
    if conditions.is_empty() {
        return Err(Error::contract("no conditioning vectors to synthesize from"));
    }
    let mut rng = child_rng(seed, "synth-noise", 0);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let phi = &conditions[i % conditions.len()];
        let z: Vec<f64> = (0..triple.dims.noise_dim)
            .map(|_| standard_normal(&mut rng))
            .collect();
        let features = triple.generate(phi, &z)?;
        let recon = triple.decoder.forward_row(&features)?;
        out.push(SyntheticSample {
            features,
            class,
            recon_loss: 1.0 - cosine(&recon, phi),
            index: i,
        });
    }
    Ok(out)
}

/// Twice the largest seen-class cardinality.
pub fn default_count(seen_cardinalities: &[usize]) -> Result<usize> {
    seen_cardinalities
        .iter()
        .max()
        .map(|m| 2 * m)
        .ok_or_else(|| Error::contract("no seen classes to size synthesis from"))
}

/// Keeps the `⌈keep_fraction · n⌉` samples with the lowest reconstruction
/// loss, ties broken by generation index. The result is in ascending loss
/// order.
pub fn prune(samples: Vec<SyntheticSample>, keep_fraction: f64) -> Result<Vec<SyntheticSample>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::config(format!(
            "keep fraction {keep_fraction} not in (0, 1]"
        )));
    }
    let keep = (keep_fraction * samples.len() as f64).ceil() as usize;
    let mut samples = samples;
    samples.sort_by(|a, b| {
        a.recon_loss
            .total_cmp(&b.recon_loss)
            .then(a.index.cmp(&b.index))
    });
    samples.truncate(keep.min(samples.len()));
    Ok(samples)
}

#[derive(Debug, Serialize)]
struct SynthManifest<'a> {
    synthetic: bool,
    records: usize,
    classes: Vec<usize>,
    features: &'a str,
}

/// Writes the samples as a feature file plus a `<path>.manifest.json`
/// sidecar flagging them as synthetic. Returns both paths.
pub fn dump_synthetic(
    path: &Path,
    samples: &[SyntheticSample],
    format: FeatureFormat,
) -> Result<Vec<PathBuf>> {
    let dim = samples
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| Error::contract("nothing to dump"))?;
    let records = samples
        .iter()
        .map(|s| FeatureRecord::new(s.class, s.features.clone()))
        .collect();
    let ds = Dataset::new(dim, records)?;
    save_features(path, &ds, format)?;
    let mut manifest_path = path.as_os_str().to_owned();
    manifest_path.push(".manifest.json");
    let manifest_path = PathBuf::from(manifest_path);
    let mut classes: Vec<usize> = samples.iter().map(|s| s.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let manifest = SynthManifest {
        synthetic: true,
        records: samples.len(),
        classes,
        features: &path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(vec![path.to_path_buf(), manifest_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::GanConfig;

    fn sample(loss: f64, index: usize) -> SyntheticSample {
        SyntheticSample {
            features: vec![index as f64],
            class: 0,
            recon_loss: loss,
            index,
        }
    }

    fn triple() -> GanTriple {
        let cfg = GanConfig::default();
        GanTriple::init(cfg.dims(6, 3), &cfg, 2).unwrap()
    }

    #[test]
    fn default_count_examples() {
        assert_eq!(default_count(&[10, 30, 20]).unwrap(), 60);
        assert_eq!(default_count(&[1]).unwrap(), 2);
        assert!(default_count(&[]).is_err());
    }

    #[test]
    fn prune_examples() {
        let s: Vec<_> = [0.1, 0.4, 0.2, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &l)| sample(l, i))
            .collect();
        let kept: Vec<f64> = prune(s.clone(), 0.5).unwrap().iter().map(|x| x.recon_loss).collect();
        assert_eq!(kept, vec![0.1, 0.2]);
        assert_eq!(prune(s.clone(), 1.0).unwrap().len(), 4);
        assert_eq!(prune(s.clone(), 0.3).unwrap().len(), 2);
        assert!(prune(s, 0.0).is_err());

        let ties: Vec<_> = (0..4).map(|i| sample(0.5, i)).collect();
        let kept: Vec<usize> = prune(ties, 0.5).unwrap().iter().map(|x| x.index).collect();
        assert_eq!(kept, vec![0, 1]);
        assert!(prune(Vec::new(), 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_draw_matches_generate() {
        let t = triple();
        let phi = [0.2, 0.5, 0.9];
        let out = synthesize_class(&t, &phi, 4, 1, 11).unwrap();
        assert_eq!(out.len(), 1);
        let mut rng = child_rng(11, "synth-noise", 0);
        let z: Vec<f64> = (0..3).map(|_| standard_normal(&mut rng)).collect();
        assert_eq!(out[0].features, t.generate(&phi, &z).unwrap());
        assert_eq!(out[0].class, 4);
        assert!((0.0..=2.0).contains(&out[0].recon_loss));
    }

    #[test]
    fn deterministic_and_bounded() {
        let t = triple();
        let a = synthesize_class(&t, &[1.0, 0.0, 0.5], 0, 20, 3).unwrap();
        assert_eq!(a, synthesize_class(&t, &[1.0, 0.0, 0.5], 0, 20, 3).unwrap());
        assert!(a.iter().all(|s| (0.0..=2.0).contains(&s.recon_loss)));
        assert!(synthesize_class(&t, &[1.0, 0.0], 0, 2, 3).is_err());
        assert!(synthesize_class(&t, &[1.0, 0.0, 0.5], 0, 0, 3).is_err());
    }

    #[test]
    fn constant_decoder_reconstructs_perfectly() {
        use crate::diffcore::{Activation, Layer, Matrix, MlpNet};
        let phi = vec![0.3, 0.1, 0.7];
        let t = triple();
        let decoder = MlpNet::new(vec![Layer::new(
            Matrix::zeros(6, 3),
            Matrix::row_vector(&phi).unwrap(),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let t = GanTriple::new(t.generator, t.critic, decoder, t.dims).unwrap();
        let s = synthesize_class(&t, &phi, 0, 8, 1).unwrap();
        assert!(s.iter().all(|x| x.recon_loss.abs() < 1e-15));
    }

    #[test]
    fn dump_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("syn.csv");
        let t = triple();
        let s = synthesize_class(&t, &[1.0, 0.0, 0.5], 2, 3, 3).unwrap();
        let files = dump_synthetic(&path, &s, FeatureFormat::Csv).unwrap();
        assert_eq!(files.len(), 2);
        let manifest = std::fs::read_to_string(&files[1]).unwrap();
        assert!(manifest.contains("\"synthetic\": true"));
    }
}
