//! Pipeline configuration as flat `section.key = value` pairs.
//!
//! Precedence is built-in defaults, then a config file, then explicit
//! overrides. Unknown keys are rejected. [`Config::echo`] renders the
//! resolved configuration in the same format the file parser accepts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cgan::GanConfig;
use crate::classify::{BaseAugment, ClassifierConfig, Strategy, TaskMode};
use crate::cptn::{AggregationConfig, CptnConfig, Pooling};
use crate::data::SplitConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Samples per novel class; `0` means twice the largest seen class.
    pub count: usize,
    pub prune: bool,
    pub keep_fraction: f64,
    /// Scale every conditioning vector to unit L2 norm.
    pub normalize_conditioning: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 0,
            prune: true,
            keep_fraction: 0.5,
            normalize_conditioning: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub runs: usize,
    pub seed: u64,
    pub shots: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub modes: Vec<TaskMode>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            runs: 20,
            seed: 0,
            shots: vec![1],
            strategies: Strategy::ALL.to_vec(),
            modes: vec![TaskMode::Gfsl],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub n_seen: usize,
    pub n_novel: usize,
    pub seen_test_fraction: f64,
    pub aggregation: AggregationConfig,
    pub cptn: CptnConfig,
    pub gan: GanConfig,
    pub synth: SynthConfig,
    pub classifier: ClassifierConfig,
    pub base: BaseAugment,
    pub run: RunSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            n_seen: 8,
            n_novel: 8,
            seen_test_fraction: 0.2,
            aggregation: AggregationConfig {
                pooling: Pooling::Average,
                factor: 4,
            },
            cptn: CptnConfig::default(),
            gan: GanConfig::default(),
            synth: SynthConfig::default(),
            classifier: ClassifierConfig::default(),
            base: BaseAugment::default(),
            run: RunSettings::default(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("split.seen", "number of seen classes per run"),
    ("split.novel", "number of novel classes per run"),
    ("split.seen_test_fraction", "fraction of each seen class held out for testing"),
    ("proto.pooling", "prototype reduction: avg, max or none"),
    ("proto.factor", "pooling window; prototype width is feature width / factor"),
    ("cptn.hidden", "CPTN hidden width, 0 = feature width / 4"),
    ("cptn.epochs", "CPTN epochs"),
    ("cptn.batch_size", "CPTN minibatch size"),
    ("cptn.learning_rate", "CPTN Adam learning rate"),
    ("cptn.weight_decay", "CPTN weight decay"),
    ("gan.noise_dim", "noise width, 0 = prototype width"),
    ("gan.gp_weight", "gradient penalty weight alpha"),
    ("gan.recon_weight", "reconstruction loss weight lambda"),
    ("gan.emd_weight", "embedding loss weight gamma"),
    ("gan.learning_rate", "GAN Adam learning rate"),
    ("gan.weight_decay", "GAN weight decay"),
    ("gan.epochs", "GAN epochs"),
    ("gan.batch_size", "GAN minibatch size"),
    ("gan.critic_steps", "critic updates per generator update"),
    ("gan.generator_hidden", "generator hidden width, 0 = feature width"),
    ("gan.critic_hidden", "critic hidden width, 0 = feature width"),
    ("gan.decoder_hidden", "decoder hidden width, 0 = feature width / 2"),
    ("gan.emd_enumerate_max", "largest batch for which every unmatched pair is used"),
    ("synth.count", "synthetic samples per novel class, 0 = twice the largest seen class"),
    ("synth.prune", "discard high reconstruction-loss samples (true/false)"),
    ("synth.keep_fraction", "fraction kept when pruning"),
    ("synth.normalize_conditioning", "scale conditioning vectors to unit norm (true/false)"),
    ("classifier.epochs", "classifier epochs"),
    ("classifier.learning_rate", "classifier Adam learning rate"),
    ("classifier.weight_decay", "classifier weight decay"),
    ("classifier.batch_size", "classifier minibatch size"),
    ("base.multiple", "copies of each novel shot for the base classifier"),
    ("base.jitter", "noise on shot copies, as a multiple of the per-feature std"),
    ("run.runs", "number of randomized runs"),
    ("run.seed", "master seed; run seeds are derived from it"),
    ("run.shots", "comma-separated shot counts"),
    ("run.strategies", "comma-separated strategies: base, heuristic, sample, learned"),
    ("run.modes", "comma-separated protocols: gfsl, fsl"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad boolean '{value}' for {key}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::config(format!("{key} needs at least one entry")));
    }
    Ok(items)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn split_config(&self, k: usize) -> SplitConfig {
        SplitConfig {
            n_seen: self.n_seen,
            n_novel: self.n_novel,
            k,
            seen_test_fraction: self.seen_test_fraction,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "split.seen" => self.n_seen = parse(key, v)?,
            "split.novel" => self.n_novel = parse(key, v)?,
            "split.seen_test_fraction" => self.seen_test_fraction = parse(key, v)?,
            "proto.pooling" => self.aggregation.pooling = parse(key, v)?,
            "proto.factor" => self.aggregation.factor = parse(key, v)?,
            "cptn.hidden" => self.cptn.hidden = parse(key, v)?,
            "cptn.epochs" => self.cptn.epochs = parse(key, v)?,
            "cptn.batch_size" => self.cptn.batch_size = parse(key, v)?,
            "cptn.learning_rate" => self.cptn.learning_rate = parse(key, v)?,
            "cptn.weight_decay" => self.cptn.weight_decay = parse(key, v)?,
            "gan.noise_dim" => self.gan.noise_dim = parse(key, v)?,
            "gan.gp_weight" => self.gan.gp_weight = parse(key, v)?,
            "gan.recon_weight" => self.gan.recon_weight = parse(key, v)?,
            "gan.emd_weight" => self.gan.emd_weight = parse(key, v)?,
            "gan.learning_rate" => self.gan.learning_rate = parse(key, v)?,
            "gan.weight_decay" => self.gan.weight_decay = parse(key, v)?,
            "gan.epochs" => self.gan.epochs = parse(key, v)?,
            "gan.batch_size" => self.gan.batch_size = parse(key, v)?,
            "gan.critic_steps" => self.gan.critic_steps = parse(key, v)?,
            "gan.generator_hidden" => self.gan.generator_hidden = parse(key, v)?,
            "gan.critic_hidden" => self.gan.critic_hidden = parse(key, v)?,
            "gan.decoder_hidden" => self.gan.decoder_hidden = parse(key, v)?,
            "gan.emd_enumerate_max" => self.gan.emd_enumerate_max = parse(key, v)?,
            "synth.count" => self.synth.count = parse(key, v)?,
            "synth.prune" => self.synth.prune = parse_bool(key, v)?,
            "synth.keep_fraction" => self.synth.keep_fraction = parse(key, v)?,
            "synth.normalize_conditioning" => {
                self.synth.normalize_conditioning = parse_bool(key, v)?
            }
            "classifier.epochs" => self.classifier.epochs = parse(key, v)?,
            "classifier.learning_rate" => self.classifier.learning_rate = parse(key, v)?,
            "classifier.weight_decay" => self.classifier.weight_decay = parse(key, v)?,
            "classifier.batch_size" => self.classifier.batch_size = parse(key, v)?,
            "base.multiple" => self.base.multiple = parse(key, v)?,
            "base.jitter" => self.base.jitter = parse(key, v)?,
            "run.runs" => self.run.runs = parse(key, v)?,
            "run.seed" => self.run.seed = parse(key, v)?,
            "run.shots" => self.run.shots = parse_list(key, v)?,
            "run.strategies" => self.run.strategies = parse_list(key, v)?,
            "run.modes" => self.run.modes = parse_list(key, v)?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "split.seen" => self.n_seen.to_string(),
            "split.novel" => self.n_novel.to_string(),
            "split.seen_test_fraction" => self.seen_test_fraction.to_string(),
            "proto.pooling" => self.aggregation.pooling.to_string(),
            "proto.factor" => self.aggregation.factor.to_string(),
            "cptn.hidden" => self.cptn.hidden.to_string(),
            "cptn.epochs" => self.cptn.epochs.to_string(),
            "cptn.batch_size" => self.cptn.batch_size.to_string(),
            "cptn.learning_rate" => self.cptn.learning_rate.to_string(),
            "cptn.weight_decay" => self.cptn.weight_decay.to_string(),
            "gan.noise_dim" => self.gan.noise_dim.to_string(),
            "gan.gp_weight" => self.gan.gp_weight.to_string(),
            "gan.recon_weight" => self.gan.recon_weight.to_string(),
            "gan.emd_weight" => self.gan.emd_weight.to_string(),
            "gan.learning_rate" => self.gan.learning_rate.to_string(),
            "gan.weight_decay" => self.gan.weight_decay.to_string(),
            "gan.epochs" => self.gan.epochs.to_string(),
            "gan.batch_size" => self.gan.batch_size.to_string(),
            "gan.critic_steps" => self.gan.critic_steps.to_string(),
            "gan.generator_hidden" => self.gan.generator_hidden.to_string(),
            "gan.critic_hidden" => self.gan.critic_hidden.to_string(),
            "gan.decoder_hidden" => self.gan.decoder_hidden.to_string(),
            "gan.emd_enumerate_max" => self.gan.emd_enumerate_max.to_string(),
            "synth.count" => self.synth.count.to_string(),
            "synth.prune" => self.synth.prune.to_string(),
            "synth.keep_fraction" => self.synth.keep_fraction.to_string(),
            "synth.normalize_conditioning" => self.synth.normalize_conditioning.to_string(),
            "classifier.epochs" => self.classifier.epochs.to_string(),
            "classifier.learning_rate" => self.classifier.learning_rate.to_string(),
            "classifier.weight_decay" => self.classifier.weight_decay.to_string(),
            "classifier.batch_size" => self.classifier.batch_size.to_string(),
            "base.multiple" => self.base.multiple.to_string(),
            "base.jitter" => self.base.jitter.to_string(),
            "run.runs" => self.run.runs.to_string(),
            "run.seed" => self.run.seed.to_string(),
            "run.shots" => join(&self.run.shots),
            "run.strategies" => join(&self.run.strategies),
            "run.modes" => join(&self.run.modes),
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value', got '{line}'", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Resolved `(key, value)` pairs in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every listed key resolves")))
            .collect()
    }

    pub fn echo_text(&self) -> String {
        self.echo()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_novel == 0 {
            return Err(Error::config("at least one novel class is required"));
        }
        if !(0.0..1.0).contains(&self.seen_test_fraction) {
            return Err(Error::config("split.seen_test_fraction must lie in [0, 1)"));
        }
        if self.aggregation.factor == 0 {
            return Err(Error::config("proto.factor must be at least 1"));
        }
        if !(self.synth.keep_fraction > 0.0 && self.synth.keep_fraction <= 1.0) {
            return Err(Error::config("synth.keep_fraction must lie in (0, 1]"));
        }
        if self.base.multiple == 0 || self.base.jitter.is_nan() || self.base.jitter < 0.0 {
            return Err(Error::config("base.multiple >= 1 and base.jitter >= 0 required"));
        }
        if self.run.runs == 0 {
            return Err(Error::config("run.runs must be at least 1"));
        }
        if self.run.shots.contains(&0) {
            return Err(Error::config("shot counts must be at least 1"));
        }
        self.gan.validate()
    }
}

/// Help text listing every key with its default.
pub fn describe_keys() -> String {
    let d = Config::default();
    let mut out = String::new();
    for (k, doc) in KEYS {
        out.push_str(&format!("  {k:<30} {doc} [default: {}]\n", d.get(k).unwrap()));
    }
    out
}
