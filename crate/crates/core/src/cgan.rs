//! Prototype-conditioned WGAN-GP with a prototype-reconstructing decoder.
//!
//! * generator `g([φ ‖ z]) → x̄`
//! * critic `f([x ‖ φ]) → score`
//! * decoder `h(x̄) → φ_recon`
//!
//! The critic minimises `E[f(x̄, φ)] − E[f(x, φ)] + α E[(‖∇_x̂ f(x̂, φ)‖ − 1)²]`.
//! Generator and decoder share one optimizer and minimise
//! `−E[f(x̄, φ)] + λ·recon + γ·emd`.

use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::FeatureRecord;
use crate::diffcore::{
    cosine, Activation, AdamConfig, AdamState, BoundNet, Expr, Matrix, MlpNet, Tape,
};
use crate::error::{Error, Result};
use crate::rng::{child_rng, standard_normal, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    /// Noise width; `0` means the prototype width.
    pub noise_dim: usize,
    pub gp_weight: f64,
    pub recon_weight: f64,
    pub emd_weight: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    /// Hidden widths; `0` picks the feature width (decoder: half of it).
    pub generator_hidden: usize,
    pub critic_hidden: usize,
    pub decoder_hidden: usize,
    /// Batches up to this size use every unmatched pair in the embedding
    /// loss; larger batches sample one per generated row.
    pub emd_enumerate_max: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 0,
            gp_weight: 10.0,
            recon_weight: 0.01,
            emd_weight: 0.1,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            epochs: 25,
            batch_size: 64,
            critic_steps: 5,
            generator_hidden: 0,
            critic_hidden: 0,
            decoder_hidden: 0,
            emd_enumerate_max: 16,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gp_weight.is_nan() || self.gp_weight <= 0.0 {
            return Err(Error::config(format!("gradient penalty weight {} must be > 0", self.gp_weight)));
        }
        if !(self.recon_weight >= 0.0 && self.emd_weight >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if self.critic_steps == 0 || self.batch_size == 0 {
            return Err(Error::config("critic steps and batch size must be at least 1"));
        }
        AdamConfig::new(self.learning_rate, self.weight_decay).validate()
    }

    pub fn dims(&self, feature_dim: usize, proto_dim: usize) -> GanDims {
        GanDims {
            feature_dim,
            proto_dim,
            noise_dim: if self.noise_dim == 0 { proto_dim } else { self.noise_dim },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanDims {
    pub feature_dim: usize,
    pub proto_dim: usize,
    pub noise_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTriple {
    pub generator: MlpNet,
    pub critic: MlpNet,
    pub decoder: MlpNet,
    pub dims: GanDims,
}

impl GanTriple {
    /// Two-layer networks with LeakyReLU hidden units and linear outputs.
    pub fn init(dims: GanDims, cfg: &GanConfig, seed: u64) -> Result<Self> {
        let GanDims {
            feature_dim: dx,
            proto_dim: dp,
            noise_dim: dz,
        } = dims;
        if dx == 0 || dp == 0 || dz == 0 {
            return Err(Error::config(format!("degenerate GAN dimensions {dims:?}")));
        }
        let pick = |w: usize, default: usize| if w == 0 { default.max(1) } else { w };
        let acts = [Activation::leaky(), Activation::Identity];
        let generator = MlpNet::init(
            &[dp + dz, pick(cfg.generator_hidden, dx), dx],
            &acts,
            &mut child_rng(seed, "gen-init", 0),
        )?;
        let critic = MlpNet::init(
            &[dx + dp, pick(cfg.critic_hidden, dx), 1],
            &acts,
            &mut child_rng(seed, "critic-init", 0),
        )?;
        let decoder = MlpNet::init(
            &[dx, pick(cfg.decoder_hidden, dx / 2), dp],
            &acts,
            &mut child_rng(seed, "decoder-init", 0),
        )?;
        GanTriple::new(generator, critic, decoder, dims)
    }

    pub fn new(generator: MlpNet, critic: MlpNet, decoder: MlpNet, dims: GanDims) -> Result<Self> {
        let GanDims {
            feature_dim: dx,
            proto_dim: dp,
            noise_dim: dz,
        } = dims;
        let checks = [
            ("generator input", generator.in_dim(), dp + dz),
            ("generator output", generator.out_dim(), dx),
            ("critic input", critic.in_dim(), dx + dp),
            ("critic output", critic.out_dim(), 1),
            ("decoder input", decoder.in_dim(), dx),
            ("decoder output", decoder.out_dim(), dp),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::shape(format!("{what} is {got}, expected {want}")));
            }
        }
        Ok(GanTriple {
            generator,
            critic,
            decoder,
            dims,
        })
    }

    /// `g([prototype ‖ z])` for a single draw.
    pub fn generate(&self, prototype: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if prototype.len() != self.dims.proto_dim || z.len() != self.dims.noise_dim {
            return Err(Error::shape(format!(
                "prototype {} / noise {}, expected {} / {}",
                prototype.len(),
                z.len(),
                self.dims.proto_dim,
                self.dims.noise_dim
            )));
        }
        let input: Vec<f64> = prototype.iter().chain(z).copied().collect();
        self.generator.forward_row(&input)
    }

    /// Batched generation from row-aligned prototypes and noise.
    pub fn generate_batch(&self, prototypes: &Matrix, noise: &Matrix) -> Result<Matrix> {
        self.generator.forward(&prototypes.hcat(noise)?)
    }

    /// Decoder reconstructions of `features`.
    pub fn reconstruct(&self, features: &Matrix) -> Result<Matrix> {
        self.decoder.forward(features)
    }

    /// Writes `PGG1`, u32 feature/prototype/noise widths, a u32-length-prefixed
    /// JSON manifest, then the generator, critic and decoder as `PGM1` blobs.
    pub fn write_to<W: Write>(&self, w: &mut W, manifest: &str) -> std::io::Result<()> {
        w.write_all(b"PGG1")?;
        for d in [self.dims.feature_dim, self.dims.proto_dim, self.dims.noise_dim] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(manifest.len() as u32).to_le_bytes())?;
        w.write_all(manifest.as_bytes())?;
        self.generator.write_to(w)?;
        self.critic.write_to(w)?;
        self.decoder.write_to(w)
    }

    /// Inverse of [`GanTriple::write_to`]; returns the manifest alongside.
    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, String)> {
        let fmt = |message: String| Error::Format {
            what: "GAN blob",
            message,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| fmt(e.to_string()))?;
        if &magic != b"PGG1" {
            return Err(fmt(format!("bad magic {magic:?}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = crate::diffcore::read_u32(r).map_err(|e| fmt(e.to_string()))? as usize;
        }
        let len = crate::diffcore::read_u32(r).map_err(|e| fmt(e.to_string()))? as usize;
        if len > 1 << 24 {
            return Err(fmt(format!("manifest of {len} bytes")));
        }
        let mut manifest = vec![0u8; len];
        r.read_exact(&mut manifest).map_err(|e| fmt(e.to_string()))?;
        let manifest = String::from_utf8(manifest).map_err(|e| fmt(e.to_string()))?;
        let generator = MlpNet::read_from(r)?;
        let critic = MlpNet::read_from(r)?;
        let decoder = MlpNet::read_from(r)?;
        let dims = GanDims {
            feature_dim: dims[0],
            proto_dim: dims[1],
            noise_dim: dims[2],
        };
        Ok((GanTriple::new(generator, critic, decoder, dims)?, manifest))
    }
}

fn check_batch(real: &Matrix, fake: &Matrix, protos: &Matrix, mix: &[f64]) -> Result<()> {
    if real.rows() == 0 {
        return Err(Error::contract("critic loss of an empty batch"));
    }
    if real.shape() != fake.shape() {
        return Err(Error::shape(format!(
            "real batch {:?} vs fake batch {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    if protos.rows() != real.rows() || mix.len() != real.rows() {
        return Err(Error::shape(format!(
            "{} rows need as many prototypes ({}) and mixing draws ({})",
            real.rows(),
            protos.rows(),
            mix.len()
        )));
    }
    if let Some(u) = mix.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        return Err(Error::contract(format!("mixing coefficient {u} outside [0, 1]")));
    }
    Ok(())
}

/// Row `i` is `mix[i]·real[i] + (1 − mix[i])·fake[i]`.
pub fn interpolate(real: &Matrix, fake: &Matrix, mix: &[f64]) -> Matrix {
    let mut out = real.clone();
    for (i, &u) in mix.iter().enumerate() {
        for (o, &f) in out.row_mut(i).iter_mut().zip(fake.row(i)) {
            *o = u * *o + (1.0 - u) * f;
        }
    }
    out
}

/// Critic loss terms recorded on a tape.
pub struct CriticTerms {
    pub loss: Expr,
    pub real_score: Expr,
    pub fake_score: Expr,
    pub penalty: Expr,
}

/// Records the critic objective for fixed `real`/`fake` batches.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_expr(
    tape: &mut Tape,
    critic: &MlpNet,
    bound: &BoundNet,
    real: &Matrix,
    fake: &Matrix,
    protos: &Matrix,
    gp_weight: f64,
    mix: &[f64],
) -> Result<CriticTerms> {
    check_batch(real, fake, protos, mix)?;
    let dx = real.cols();
    let real_in = tape.constant(real.hcat(protos)?);
    let fake_in = tape.constant(fake.hcat(protos)?);
    let real_out = critic.forward_expr(tape, bound, real_in)?;
    let fake_out = critic.forward_expr(tape, bound, fake_in)?;
    let real_score = tape.mean(real_out)?;
    let fake_score = tape.mean(fake_out)?;

    let mixed = interpolate(real, fake, mix).hcat(protos)?;
    let grad = critic.input_gradient(tape, bound, &mixed)?;
    let grad_x = tape.slice_cols(grad, 0, dx)?;
    let norms = tape.row_norm(grad_x);
    let dev = tape.add_scalar(norms, -1.0);
    let sq = tape.square(dev);
    let penalty = tape.mean(sq)?;

    let gap = tape.sub(fake_score, real_score)?;
    let weighted = tape.scale(penalty, gp_weight);
    let loss = tape.add(gap, weighted)?;
    Ok(CriticTerms {
        loss,
        real_score,
        fake_score,
        penalty,
    })
}

/// `E[f(fake, φ)] − E[f(real, φ)] + α·E[(‖∇_x̂ f(x̂, φ)‖₂ − 1)²]` with
/// `x̂ = u·real + (1 − u)·fake` and `u = mix[row]`.
pub fn wgan_gp_loss(
    critic: &MlpNet,
    real: &Matrix,
    fake: &Matrix,
    protos: &Matrix,
    gp_weight: f64,
    mix: &[f64],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = critic.bind(&mut tape, false);
    let terms = critic_loss_expr(&mut tape, critic, &bound, real, fake, protos, gp_weight, mix)?;
    Ok(tape.scalar(terms.loss))
}

/// Every `(real_row, fake_row)` pair with different labels.
pub fn all_unmatched_pairs(labels_real: &[usize], labels_fake: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in labels_real.iter().enumerate() {
        for (j, b) in labels_fake.iter().enumerate() {
            if a != b {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// One uniformly chosen different-class real row per fake row. Fake rows
/// whose class is the only one in the real batch get no pair.
pub fn sampled_unmatched_pairs(
    labels_real: &[usize],
    labels_fake: &[usize],
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(labels_fake.len());
    for (j, b) in labels_fake.iter().enumerate() {
        let candidates: Vec<usize> = labels_real
            .iter()
            .enumerate()
            .filter(|(_, a)| *a != b)
            .map(|(i, _)| i)
            .collect();
        if !candidates.is_empty() {
            pairs.push((candidates[rng.random_range(0..candidates.len())], j));
        }
    }
    pairs
}

/// Mean of `max(0, cos(real_i, fake_j))` over every unmatched pair; 0 when
/// there is none.
pub fn embedding_loss(
    real: &Matrix,
    fake: &Matrix,
    labels_real: &[usize],
    labels_fake: &[usize],
) -> Result<f64> {
    if real.rows() != labels_real.len() || fake.rows() != labels_fake.len() {
        return Err(Error::shape("one label per batch row is required"));
    }
    let pairs = all_unmatched_pairs(labels_real, labels_fake);
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| cosine(real.row(i), fake.row(j)).max(0.0))
        .sum();
    Ok(total / pairs.len() as f64)
}

fn embedding_loss_expr(
    tape: &mut Tape,
    real: Expr,
    fake: Expr,
    pairs: &[(usize, usize)],
) -> Result<Option<Expr>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (ri, fj): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let r = tape.select_rows(real, &ri)?;
    let f = tape.select_rows(fake, &fj)?;
    let cos = tape.row_cosine(r, f)?;
    let hinge = tape.relu(cos);
    Ok(Some(tape.mean(hinge)?))
}

fn recon_loss_expr(tape: &mut Tape, recon: Expr, protos: Expr) -> Result<Expr> {
    let cos = tape.row_cosine(recon, protos)?;
    let m = tape.mean(cos)?;
    let neg = tape.scale(m, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Mean over rows of `1 − cos(h(fake_row), prototype_row)`.
pub fn recon_loss(decoder: &MlpNet, fake: &Matrix, protos: &Matrix) -> Result<f64> {
    if fake.rows() != protos.rows() || fake.rows() == 0 {
        return Err(Error::shape(format!(
            "{} generated rows for {} prototypes",
            fake.rows(),
            protos.rows()
        )));
    }
    let out = decoder.forward(fake)?;
    if out.cols() != protos.cols() {
        return Err(Error::shape(format!(
            "decoder emits {} values, prototypes have {}",
            out.cols(),
            protos.cols()
        )));
    }
    let total: f64 = out
        .iter_rows()
        .zip(protos.iter_rows())
        .map(|(h, p)| 1.0 - cosine(h, p))
        .sum();
    Ok(total / fake.rows() as f64)
}

/// Generator/decoder objective terms recorded on a tape.
pub struct GeneratorTerms {
    pub loss: Expr,
    pub adversarial: Expr,
    pub recon: Expr,
    pub emd: Option<Expr>,
}

/// Records `−E[f(x̄, φ)] + λ·recon + γ·emd` for `x̄ = g([φ ‖ z])`. The
/// critic is placed on the tape as constants.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss_expr(
    tape: &mut Tape,
    triple: &GanTriple,
    gen: &BoundNet,
    dec: &BoundNet,
    real: &Matrix,
    labels: &[usize],
    protos: &Matrix,
    noise: &Matrix,
    pairs: &[(usize, usize)],
    cfg: &GanConfig,
) -> Result<GeneratorTerms> {
    let critic = triple.critic.bind(tape, false);
    let gen_in = tape.constant(protos.hcat(noise)?);
    let fake = triple.generator.forward_expr(tape, gen, gen_in)?;
    let phi = tape.constant(protos.clone());
    let critic_in = tape.hcat(fake, phi)?;
    let score = triple.critic.forward_expr(tape, &critic, critic_in)?;
    let mean_score = tape.mean(score)?;
    let adversarial = tape.scale(mean_score, -1.0);

    let recon_out = triple.decoder.forward_expr(tape, dec, fake)?;
    let recon = recon_loss_expr(tape, recon_out, phi)?;

    if labels.len() != real.rows() {
        return Err(Error::shape("one label per real row is required"));
    }
    let real_c = tape.constant(real.clone());
    let emd = embedding_loss_expr(tape, real_c, fake, pairs)?;

    let weighted_recon = tape.scale(recon, cfg.recon_weight);
    let mut loss = tape.add(adversarial, weighted_recon)?;
    if let Some(e) = emd {
        let weighted = tape.scale(e, cfg.emd_weight);
        loss = tape.add(loss, weighted)?;
    }
    Ok(GeneratorTerms {
        loss,
        adversarial,
        recon,
        emd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GanEpochStats {
    pub critic_loss: f64,
    /// Mean of `E[f(real)] − E[f(fake)]` over the epoch's critic steps.
    pub wasserstein_gap: f64,
    pub penalty: f64,
    pub generator_loss: f64,
    pub recon_loss: f64,
    pub emd_loss: f64,
}

#[derive(Debug, Clone)]
pub struct GanTraining {
    pub triple: GanTriple,
    pub history: Vec<GanEpochStats>,
}

fn noise_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| standard_normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite normal draws")
}

/// Alternating WGAN-GP training. `conditions[i]` is the conditioning
/// vector of `records[i]`; every generated row uses the condition of the
/// real row it is paired with, so pairs always share a class.
///
/// Each epoch runs `ceil(n / batch_size)` generator steps, each preceded by
/// `critic_steps` critic steps on freshly sampled batches.
pub fn train_cgan(
    records: &[FeatureRecord],
    conditions: &[Vec<f64>],
    triple: GanTriple,
    cfg: &GanConfig,
    seed: u64,
) -> Result<GanTraining> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::contract("no seen records to train the GAN on"));
    }
    if conditions.len() != records.len() {
        return Err(Error::contract(format!(
            "{} conditioning vectors for {} records",
            conditions.len(),
            records.len()
        )));
    }
    let dims = triple.dims;
    if let Some(r) = records.iter().find(|r| r.features.len() != dims.feature_dim) {
        return Err(Error::config(format!(
            "record of width {} for a GAN over width {}",
            r.features.len(),
            dims.feature_dim
        )));
    }
    if let Some(c) = conditions.iter().find(|c| c.len() != dims.proto_dim) {
        return Err(Error::config(format!(
            "conditioning vector of width {} for prototype width {}",
            c.len(),
            dims.proto_dim
        )));
    }

    let GanTriple {
        mut generator,
        mut critic,
        mut decoder,
        ..
    } = triple;
    let adam = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    let mut critic_opt = AdamState::new(adam, critic.params());
    let mut gen_opt = AdamState::new(
        adam,
        generator.params().into_iter().chain(decoder.params()),
    );

    let n = records.len();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let mut batch_rng = child_rng(seed, "cgan-batches", 0);
    let mut noise_rng = child_rng(seed, "cgan-noise", 0);
    let mut mix_rng = child_rng(seed, "cgan-mix", 0);
    let mut pair_rng = child_rng(seed, "cgan-pairs", 0);
    let mut history = Vec::with_capacity(cfg.epochs);

    let gather = |idx: &[usize]| -> Result<(Matrix, Matrix, Vec<usize>)> {
        let x: Vec<&[f64]> = idx.iter().map(|&i| records[i].features.as_slice()).collect();
        let p: Vec<&[f64]> = idx.iter().map(|&i| conditions[i].as_slice()).collect();
        let labels = idx.iter().map(|&i| records[i].label).collect();
        Ok((Matrix::from_rows(&x)?, Matrix::from_rows(&p)?, labels))
    };

    for _ in 0..cfg.epochs {
        let mut stats = GanEpochStats::default();
        let mut critic_count = 0usize;
        for _ in 0..steps_per_epoch {
            for _ in 0..cfg.critic_steps {
                let idx = index::sample(&mut batch_rng, n, batch).into_vec();
                let (real, protos, _) = gather(&idx)?;
                let noise = noise_matrix(batch, dims.noise_dim, &mut noise_rng);
                let fake = generator.forward(&protos.hcat(&noise)?)?;
                let mix: Vec<f64> = (0..batch).map(|_| mix_rng.random::<f64>()).collect();

                let mut tape = Tape::new();
                let bound = critic.bind(&mut tape, true);
                let terms = critic_loss_expr(
                    &mut tape, &critic, &bound, &real, &fake, &protos, cfg.gp_weight, &mix,
                )?;
                let loss = tape.scalar(terms.loss);
                if !loss.is_finite() {
                    return Err(Error::Numerical("critic loss is not finite".into()));
                }
                stats.critic_loss += loss;
                stats.wasserstein_gap += tape.scalar(terms.real_score) - tape.scalar(terms.fake_score);
                stats.penalty += tape.scalar(terms.penalty);
                critic_count += 1;
                let grads = tape.backward(terms.loss)?;
                critic_opt.step(&mut critic.params_mut(), &bound.grads(&grads))?;
            }

            let idx = index::sample(&mut batch_rng, n, batch).into_vec();
            let (real, protos, labels) = gather(&idx)?;
            let noise = noise_matrix(batch, dims.noise_dim, &mut noise_rng);
            let pairs = if batch <= cfg.emd_enumerate_max {
                all_unmatched_pairs(&labels, &labels)
            } else {
                sampled_unmatched_pairs(&labels, &labels, &mut pair_rng)
            };
            let view = GanTriple {
                generator,
                critic,
                decoder,
                dims,
            };
            let mut tape = Tape::new();
            let gen_b = view.generator.bind(&mut tape, true);
            let dec_b = view.decoder.bind(&mut tape, true);
            let terms = generator_loss_expr(
                &mut tape, &view, &gen_b, &dec_b, &real, &labels, &protos, &noise, &pairs, cfg,
            )?;
            let loss = tape.scalar(terms.loss);
            if !loss.is_finite() {
                return Err(Error::Numerical("generator loss is not finite".into()));
            }
            stats.generator_loss += loss;
            stats.recon_loss += tape.scalar(terms.recon);
            stats.emd_loss += terms.emd.map_or(0.0, |e| tape.scalar(e));
            let grads = tape.backward(terms.loss)?;
            let mut g = gen_b.grads(&grads);
            g.extend(dec_b.grads(&grads));
            GanTriple {
                generator,
                critic,
                decoder,
                ..
            } = view;
            let mut params = generator.params_mut();
            params.extend(decoder.params_mut());
            gen_opt.step(&mut params, &g)?;
        }
        let c = critic_count.max(1) as f64;
        let s = steps_per_epoch.max(1) as f64;
        stats.critic_loss /= c;
        stats.wasserstein_gap /= c;
        stats.penalty /= c;
        stats.generator_loss /= s;
        stats.recon_loss /= s;
        stats.emd_loss /= s;
        history.push(stats);
    }

    Ok(GanTraining {
        triple: GanTriple::new(generator, critic, decoder, dims)?,
        history,
    })
}
