//! Straight-line scalar reference implementations shared by the
//! integration tests. Nothing here calls into the library's numeric code.

#![allow(dead_code)]

pub mod checks;

use protogan::diffcore::{Activation, Layer, Matrix, MlpNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut TestRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn uniform_matrix(rng: &mut TestRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, uniform_vec(rng, rows * cols, scale)).unwrap()
}

/// A network with the given widths, activations and uniform parameters.
pub fn random_net(rng: &mut TestRng, dims: &[usize], acts: &[Activation], scale: f64) -> MlpNet {
    let layers = dims
        .windows(2)
        .zip(acts)
        .map(|(w, &a)| {
            Layer::new(
                uniform_matrix(rng, w[0], w[1], scale),
                uniform_matrix(rng, 1, w[1], scale),
                a,
            )
            .unwrap()
        })
        .collect();
    MlpNet::new(layers).unwrap()
}

pub fn random_dims(rng: &mut TestRng, depth: usize, out: usize) -> Vec<usize> {
    let mut d: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
    d.push(out);
    d
}

pub fn random_piecewise_acts(rng: &mut TestRng, n: usize) -> Vec<Activation> {
    (0..n)
        .map(|_| {
            if rng.random_bool(0.7) {
                Activation::LeakyRelu(rng.random_range(0.01..0.3))
            } else {
                Activation::Identity
            }
        })
        .collect()
}

pub fn random_acts(rng: &mut TestRng, n: usize) -> Vec<Activation> {
    (0..n)
        .map(|_| match rng.random_range(0..3) {
            0 => Activation::LeakyRelu(rng.random_range(0.01..0.3)),
            1 => Activation::Sigmoid,
            _ => Activation::Identity,
        })
        .collect()
}

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::LeakyRelu(s) => {
            if x > 0.0 {
                x
            } else {
                s * x
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Identity => x,
    }
}

fn act_slope(a: Activation, x: f64) -> f64 {
    match a {
        Activation::LeakyRelu(s) => {
            if x > 0.0 {
                1.0
            } else {
                s
            }
        }
        Activation::Sigmoid => {
            let y = 1.0 / (1.0 + (-x).exp());
            y * (1.0 - y)
        }
        Activation::Identity => 1.0,
    }
}

/// Pre-activations and activations of every layer for one input row.
fn trace(net: &MlpNet, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut pre = Vec::new();
    let mut post = vec![x.to_vec()];
    for layer in net.layers() {
        let h = post.last().unwrap();
        let mut z = vec![0.0; layer.out_dim()];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut s = layer.bias.get(0, j);
            for (i, hi) in h.iter().enumerate() {
                s += hi * layer.weight.get(i, j);
            }
            *zj = s;
        }
        post.push(z.iter().map(|&v| act(layer.activation, v)).collect());
        pre.push(z);
    }
    (pre, post)
}

pub fn forward(net: &MlpNet, x: &[f64]) -> Vec<f64> {
    trace(net, x).1.pop().unwrap()
}

/// `d net(x)[0] / d x` by hand-written backpropagation.
pub fn input_grad(net: &MlpNet, x: &[f64]) -> Vec<f64> {
    let (pre, _) = trace(net, x);
    let layers = net.layers();
    let mut delta: Vec<f64> = vec![1.0];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let dz: Vec<f64> = delta
            .iter()
            .zip(&pre[l])
            .map(|(d, &z)| d * act_slope(layer.activation, z))
            .collect();
        let mut dh = vec![0.0; layer.in_dim()];
        for (i, dhi) in dh.iter_mut().enumerate() {
            for (j, dzj) in dz.iter().enumerate() {
                *dhi += layer.weight.get(i, j) * dzj;
            }
        }
        delta = dh;
    }
    delta
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Critic objective evaluated row by row.
pub fn critic_loss(
    critic: &MlpNet,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    protos: &[Vec<f64>],
    alpha: f64,
    mix: &[f64],
) -> f64 {
    let n = real.len() as f64;
    let mut real_score = 0.0;
    let mut fake_score = 0.0;
    let mut penalty = 0.0;
    for i in 0..real.len() {
        real_score += forward(critic, &concat(&real[i], &protos[i]))[0];
        fake_score += forward(critic, &concat(&fake[i], &protos[i]))[0];
        let mixed: Vec<f64> = real[i]
            .iter()
            .zip(&fake[i])
            .map(|(r, f)| mix[i] * r + (1.0 - mix[i]) * f)
            .collect();
        let g = input_grad(critic, &concat(&mixed, &protos[i]));
        let norm = g[..real[i].len()].iter().map(|v| v * v).sum::<f64>().sqrt();
        penalty += (norm - 1.0) * (norm - 1.0);
    }
    fake_score / n - real_score / n + alpha * penalty / n
}

/// Mean hinge cosine over every pair of rows with different labels.
pub fn embedding(real: &[Vec<f64>], fake: &[Vec<f64>], lr: &[usize], lf: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, r) in real.iter().enumerate() {
        for (j, f) in fake.iter().enumerate() {
            if lr[i] != lf[j] {
                total += cos(r, f).max(0.0);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn recon(decoder: &MlpNet, fake: &[Vec<f64>], protos: &[Vec<f64>]) -> f64 {
    let total: f64 = fake
        .iter()
        .zip(protos)
        .map(|(f, p)| 1.0 - cos(&forward(decoder, f), p))
        .sum();
    total / fake.len() as f64
}

/// Generator objective: `−mean critic(g(φ‖z), φ) + λ·recon + γ·emd` with
/// every unmatched pair.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss(
    generator: &MlpNet,
    critic: &MlpNet,
    decoder: &MlpNet,
    real: &[Vec<f64>],
    labels: &[usize],
    protos: &[Vec<f64>],
    noise: &[Vec<f64>],
    lambda: f64,
    gamma: f64,
) -> f64 {
    let fake: Vec<Vec<f64>> = protos
        .iter()
        .zip(noise)
        .map(|(p, z)| forward(generator, &concat(p, z)))
        .collect();
    let adv: f64 = fake
        .iter()
        .zip(protos)
        .map(|(f, p)| forward(critic, &concat(f, p))[0])
        .sum::<f64>()
        / fake.len() as f64;
    -adv + lambda * recon(decoder, &fake, protos) + gamma * embedding(real, &fake, labels, labels)
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

/// Central difference of `f` with respect to every parameter of `net`, in
/// `[w0, b0, w1, b1, ..]` order.
pub fn fd_params(net: &MlpNet, h: f64, f: impl Fn(&MlpNet) -> f64) -> Vec<Matrix> {
    let mut probe = net.clone();
    let shapes: Vec<(usize, usize)> = net.params().iter().map(|p| p.shape()).collect();
    let mut out = Vec::new();
    for (p, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Matrix::zeros(r, c);
        for k in 0..r * c {
            let orig = probe.params()[p].data()[k];
            probe.params_mut()[p].data_mut()[k] = orig + h;
            let up = f(&probe);
            probe.params_mut()[p].data_mut()[k] = orig - h;
            let down = f(&probe);
            probe.params_mut()[p].data_mut()[k] = orig;
            g.data_mut()[k] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_rel_err(a: &[Matrix], b: &[Matrix], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.shape(), y.shape());
        for (u, v) in x.data().iter().zip(y.data()) {
            let scale = u.abs().max(v.abs()).max(floor);
            worst = worst.max((u - v).abs() / scale);
        }
    }
    worst
}

/// Smallest distance of any pre-activation to a LeakyReLU kink; FD is
/// unreliable within `h` of one.
pub fn min_kink_distance(net: &MlpNet, inputs: &[Vec<f64>]) -> f64 {
    let mut m = f64::INFINITY;
    for x in inputs {
        let (pre, _) = trace(net, x);
        for (layer, z) in net.layers().iter().zip(pre) {
            if matches!(layer.activation, Activation::LeakyRelu(_)) {
                for v in z {
                    m = m.min(v.abs());
                }
            }
        }
    }
    m
}

/// Settings small enough for a CLI round trip in a few seconds.
pub const TINY_RUN: [&str; 10] = [
    "--set", "split.seen=3",
    "--set", "split.novel=2",
    "--set", "cptn.epochs=2",
    "--set", "gan.epochs=2",
    "--set", "classifier.epochs=3",
];

/// Generates a small benchmark with `cli`, then runs the protocol into two
/// separate directories with the same seed (serially, then with two jobs).
/// Returns the two `gfsl.csv` contents. `cli` maps arguments to
/// `(exit code, stderr)`.
pub fn cli_run_twice(
    root: &std::path::Path,
    cli: impl Fn(&[&str]) -> (i32, String),
) -> (Vec<u8>, Vec<u8>) {
    let root_s = root.to_str().unwrap();
    let (code, err) = cli(&[
        "--out", root_s, "gen-benchmark", "--classes", "5", "--dim", "8", "--per-class", "12",
        "--seed", "3",
    ]);
    assert_eq!(code, 0, "{err}");
    let features = root.join("benchmark.pgf");
    let mut outputs = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "2")] {
        let dir = root.join(name);
        let mut args = vec![
            "--out", dir.to_str().unwrap(), "--jobs", jobs, "run",
            "--features", features.to_str().unwrap(), "--runs", "2", "--seed", "11",
            "--k", "1",
        ];
        args.extend(TINY_RUN);
        let (code, err) = cli(&args);
        assert_eq!(code, 0, "{err}");
        outputs.push(std::fs::read(dir.join("gfsl.csv")).unwrap());
    }
    let b = outputs.pop().unwrap();
    (outputs.pop().unwrap(), b)
}
