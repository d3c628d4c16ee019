//! Randomized gradient and loss checks, shared by the focused test files
//! and the acceptance run. Each returns the worst error it observed.

use protogan::cgan::{
    all_unmatched_pairs, critic_loss_expr, embedding_loss, generator_loss_expr, recon_loss,
    wgan_gp_loss, GanConfig, GanDims, GanTriple,
};
use protogan::cptn::cosine_loss;
use protogan::diffcore::{Activation, Matrix, Tape};
use rand::Rng;

use super::*;

pub const FD_STEP: f64 = 1e-6;
/// Relative errors use `max(|a|, |b|, REL_FLOOR)` as the scale.
pub const REL_FLOOR: f64 = 1e-3;

fn batch(rng: &mut TestRng, n: usize, d: usize) -> Matrix {
    uniform_matrix(rng, n, d, 1.5)
}

/// Worst relative error between tape and central-difference parameter
/// gradients for `cases` random networks under linear, cosine and softmax
/// cross-entropy heads.
pub fn first_order(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let depth = rng.random_range(1..=3);
        let out = rng.random_range(1..=8);
        let dims = random_dims(&mut rng, depth, out);
        let acts = random_acts(&mut rng, depth);
        let net = random_net(&mut rng, &dims, &acts, 1.0);
        let n = rng.random_range(1..=4);
        let x = batch(&mut rng, n, dims[0]);
        let xr = rows(&x);
        if min_kink_distance(&net, &xr) < 1e-4 {
            continue;
        }
        let head = done % 3;
        let coef = batch(&mut rng, n, out);
        let targets = batch(&mut rng, n, out);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..out)).collect();

        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let xin = tape.constant(x.clone());
        let y = net.forward_expr(&mut tape, &bound, xin).unwrap();
        let loss = match head {
            0 => {
                let c = tape.constant(coef.clone());
                let p = tape.hadamard(y, c).unwrap();
                tape.sum(p)
            }
            1 => {
                let t = tape.constant(targets.clone());
                let c = tape.row_cosine(y, t).unwrap();
                let m = tape.mean(c).unwrap();
                let neg = tape.scale(m, -1.0);
                tape.add_scalar(neg, 1.0)
            }
            _ => tape.softmax_cross_entropy(y, &labels).unwrap(),
        };
        let grads = bound.grads(&tape.backward(loss).unwrap());

        let scalar = |net: &protogan::diffcore::MlpNet| -> f64 {
            let outs: Vec<Vec<f64>> = xr.iter().map(|r| forward(net, r)).collect();
            match head {
                0 => outs
                    .iter()
                    .zip(coef.iter_rows())
                    .map(|(o, c)| o.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
                    .sum(),
                1 => {
                    outs.iter()
                        .zip(targets.iter_rows())
                        .map(|(o, t)| 1.0 - cos(o, t))
                        .sum::<f64>()
                        / n as f64
                }
                _ => {
                    outs.iter()
                        .zip(&labels)
                        .map(|(o, &l)| {
                            let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let lse = m + o.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                            lse - o[l]
                        })
                        .sum::<f64>()
                        / n as f64
                }
            }
        };
        let fd = fd_params(&net, FD_STEP, scalar);
        worst = worst.max(max_rel_err(&grads, &fd, REL_FLOOR));
        done += 1;
    }
    worst
}

/// Worst relative error of the recorded input gradient against central
/// differences of the network output with respect to its input.
pub fn input_gradient_values(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let depth = rng.random_range(1..=3);
        let dims = random_dims(&mut rng, depth, 1);
        let acts = random_piecewise_acts(&mut rng, depth);
        let net = random_net(&mut rng, &dims, &acts, 1.0);
        let n = rng.random_range(1..=4);
        let x = batch(&mut rng, n, dims[0]);
        let xr = rows(&x);
        if min_kink_distance(&net, &xr) < 1e-4 {
            continue;
        }
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, false);
        let g = net.input_gradient(&mut tape, &bound, &x).unwrap();
        let got = tape.value(g).clone();
        let mut fd = Matrix::zeros(n, dims[0]);
        for (i, r) in xr.iter().enumerate() {
            for j in 0..r.len() {
                let mut up = r.clone();
                up[j] += FD_STEP;
                let mut down = r.clone();
                down[j] -= FD_STEP;
                fd.set(i, j, (forward(&net, &up)[0] - forward(&net, &down)[0]) / (2.0 * FD_STEP));
            }
        }
        worst = worst.max(max_rel_err(&[got], &[fd], REL_FLOOR));
        done += 1;
    }
    worst
}

struct CriticCase {
    critic: protogan::diffcore::MlpNet,
    real: Matrix,
    fake: Matrix,
    protos: Matrix,
    mix: Vec<f64>,
    alpha: f64,
}

fn critic_case(rng: &mut TestRng, max_batch: usize) -> Option<CriticCase> {
    let dx = rng.random_range(1..=5);
    let dp = rng.random_range(1..=3);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![dx + dp];
    for _ in 1..depth {
        dims.push(rng.random_range(1..=8));
    }
    dims.push(1);
    let acts = random_piecewise_acts(rng, depth);
    let critic = random_net(rng, &dims, &acts, 1.0);
    let n = rng.random_range(1..=max_batch);
    let real = batch(rng, n, dx);
    let fake = batch(rng, n, dx);
    let protos = batch(rng, n, dp);
    let mix: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let alpha = rng.random_range(0.5..12.0);

    let mixed = protogan::cgan::interpolate(&real, &fake, &mix);
    let inputs: Vec<Vec<f64>> = [&real, &fake, &mixed]
        .iter()
        .flat_map(|m| rows(&m.hcat(&protos).unwrap()))
        .collect();
    (min_kink_distance(&critic, &inputs) > 1e-4).then_some(CriticCase {
        critic,
        real,
        fake,
        protos,
        mix,
        alpha,
    })
}

/// Worst relative error of critic parameter gradients through the full
/// penalized objective, which differentiates the input gradient.
pub fn penalty_second_order(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let Some(c) = critic_case(&mut rng, 4) else {
            continue;
        };
        let mut tape = Tape::new();
        let bound = c.critic.bind(&mut tape, true);
        let terms = critic_loss_expr(
            &mut tape, &c.critic, &bound, &c.real, &c.fake, &c.protos, c.alpha, &c.mix,
        )
        .unwrap();
        let grads = bound.grads(&tape.backward(terms.loss).unwrap());
        let (real, fake, protos) = (rows(&c.real), rows(&c.fake), rows(&c.protos));
        let fd = fd_params(&c.critic, FD_STEP, |net| {
            critic_loss(net, &real, &fake, &protos, c.alpha, &c.mix)
        });
        worst = worst.max(max_rel_err(&grads, &fd, REL_FLOOR));
        done += 1;
    }
    worst
}

/// Worst relative error of generator and decoder gradients through the
/// adversarial, reconstruction and embedding terms.
pub fn generator_path(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let dx = rng.random_range(1..=5);
        let dp = rng.random_range(1..=3);
        let dz = rng.random_range(1..=3);
        let h = rng.random_range(1..=8);
        let acts = random_piecewise_acts(&mut rng, 2);
        let generator = random_net(&mut rng, &[dp + dz, h, dx], &acts, 1.0);
        let acts = random_piecewise_acts(&mut rng, 2);
        let critic = random_net(&mut rng, &[dx + dp, h, 1], &acts, 1.0);
        let acts = random_piecewise_acts(&mut rng, 2);
        let decoder = random_net(&mut rng, &[dx, h, dp], &acts, 1.0);
        let dims = GanDims {
            feature_dim: dx,
            proto_dim: dp,
            noise_dim: dz,
        };
        let triple = GanTriple::new(generator, critic, decoder, dims).unwrap();
        let n = rng.random_range(1..=4);
        let real = batch(&mut rng, n, dx);
        let protos = batch(&mut rng, n, dp);
        let noise = batch(&mut rng, n, dz);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let cfg = GanConfig {
            recon_weight: rng.random_range(0.0..2.0),
            emd_weight: rng.random_range(0.0..2.0),
            ..GanConfig::default()
        };

        let gen_in: Vec<Vec<f64>> = rows(&protos.hcat(&noise).unwrap());
        let fake: Vec<Vec<f64>> = gen_in.iter().map(|r| forward(&triple.generator, r)).collect();
        let crit_in: Vec<Vec<f64>> = fake
            .iter()
            .zip(rows(&protos))
            .map(|(f, p)| f.iter().chain(&p).copied().collect())
            .collect();
        if min_kink_distance(&triple.generator, &gen_in) < 1e-4
            || min_kink_distance(&triple.critic, &crit_in) < 1e-4
            || min_kink_distance(&triple.decoder, &fake) < 1e-4
        {
            continue;
        }

        let pairs = all_unmatched_pairs(&labels, &labels);
        let mut tape = Tape::new();
        let gb = triple.generator.bind(&mut tape, true);
        let db = triple.decoder.bind(&mut tape, true);
        let terms = generator_loss_expr(
            &mut tape, &triple, &gb, &db, &real, &labels, &protos, &noise, &pairs, &cfg,
        )
        .unwrap();
        let g = tape.backward(terms.loss).unwrap();
        let (gg, dg) = (gb.grads(&g), db.grads(&g));

        let (rr, pr, nr) = (rows(&real), rows(&protos), rows(&noise));
        let fd_g = fd_params(&triple.generator, FD_STEP, |net| {
            generator_loss(
                net, &triple.critic, &triple.decoder, &rr, &labels, &pr, &nr,
                cfg.recon_weight, cfg.emd_weight,
            )
        });
        let fd_d = fd_params(&triple.decoder, FD_STEP, |net| {
            generator_loss(
                &triple.generator, &triple.critic, net, &rr, &labels, &pr, &nr,
                cfg.recon_weight, cfg.emd_weight,
            )
        });
        worst = worst
            .max(max_rel_err(&gg, &fd_g, REL_FLOOR))
            .max(max_rel_err(&dg, &fd_d, REL_FLOOR));
        done += 1;
    }
    worst
}

/// Worst absolute difference between the library losses and the scalar
/// reimplementations on random batches of size at most 4. Returns
/// `(critic, embedding, recon, cosine)`.
pub fn loss_oracles(cases: usize, seed: u64) -> (f64, f64, f64, f64) {
    let mut rng = rng(seed);
    let (mut w_gp, mut w_emd, mut w_rec, mut w_cos): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut done = 0;
    while done < cases {
        let Some(c) = critic_case(&mut rng, 4) else {
            continue;
        };
        let lib = wgan_gp_loss(&c.critic, &c.real, &c.fake, &c.protos, c.alpha, &c.mix).unwrap();
        let (real, fake, protos) = (rows(&c.real), rows(&c.fake), rows(&c.protos));
        let oracle = critic_loss(&c.critic, &real, &fake, &protos, c.alpha, &c.mix);
        w_gp = w_gp.max((lib - oracle).abs());

        let n = real.len();
        let lr: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let lf: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let lib = embedding_loss(&c.real, &c.fake, &lr, &lf).unwrap();
        w_emd = w_emd.max((lib - embedding(&real, &fake, &lr, &lf)).abs());

        let dx = c.real.cols();
        let dp = c.protos.cols();
        let h = rng.random_range(1..=8);
        let acts = [
            Activation::leaky(),
            if rng.random_bool(0.5) {
                Activation::Identity
            } else {
                Activation::Sigmoid
            },
        ];
        let decoder = random_net(&mut rng, &[dx, h, dp], &acts, 1.0);
        let lib = recon_loss(&decoder, &c.fake, &c.protos).unwrap();
        w_rec = w_rec.max((lib - recon(&decoder, &fake, &protos)).abs());

        for (a, b) in real.iter().zip(&fake) {
            w_cos = w_cos.max((cosine_loss(a, b) - (1.0 - cos(a, b))).abs());
        }
        done += 1;
    }
    (w_gp, w_emd, w_rec, w_cos)
}

/// `(unit-norm linear critic penalty, |constant critic penalty − α|)`.
pub fn penalty_exactness(cases: usize, seed: u64) -> (f64, f64) {
    use protogan::diffcore::{Layer, MlpNet};
    let mut rng = rng(seed);
    let (mut unit, mut constant): (f64, f64) = (0.0, 0.0);
    for _ in 0..cases {
        let dx = rng.random_range(1..=6);
        let dp = rng.random_range(1..=4);
        let n = rng.random_range(1..=4);
        let real = batch(&mut rng, n, dx);
        let fake = batch(&mut rng, n, dx);
        let protos = batch(&mut rng, n, dp);
        let mix: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let alpha = rng.random_range(0.5..12.0);

        let mut wx = uniform_vec(&mut rng, dx, 1.0);
        let nrm = wx.iter().map(|v| v * v).sum::<f64>().sqrt();
        wx.iter_mut().for_each(|v| *v /= nrm);
        let mut w = wx;
        w.extend(uniform_vec(&mut rng, dp, 1.0));
        let linear = MlpNet::new(vec![Layer::new(
            Matrix::from_vec(dx + dp, 1, w).unwrap(),
            uniform_matrix(&mut rng, 1, 1, 1.0),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let mut tape = Tape::new();
        let b = linear.bind(&mut tape, false);
        let t = critic_loss_expr(&mut tape, &linear, &b, &real, &fake, &protos, alpha, &mix).unwrap();
        unit = unit.max(tape.scalar(t.penalty).abs());

        let flat = MlpNet::new(vec![Layer::new(
            Matrix::zeros(dx + dp, 1),
            uniform_matrix(&mut rng, 1, 1, 1.0),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let mut tape = Tape::new();
        let b = flat.bind(&mut tape, false);
        let t = critic_loss_expr(&mut tape, &flat, &b, &real, &fake, &protos, alpha, &mix).unwrap();
        let weighted = tape.scalar(t.loss) - (tape.scalar(t.fake_score) - tape.scalar(t.real_score));
        constant = constant.max((weighted - alpha).abs());
    }
    (unit, constant)
}
