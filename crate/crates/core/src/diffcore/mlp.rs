use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{leaky_slope, sigmoid, Expr, Gradients, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default negative slope for LeakyReLU layers.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f64),
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu(LEAKY_SLOPE)
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Slope of a piecewise-linear activation at `x`; `None` for sigmoid.
    fn linear_slope(self, x: f64) -> Option<f64> {
        match self {
            Activation::LeakyRelu(s) => Some(leaky_slope(x, s)),
            Activation::Identity => Some(1.0),
            Activation::Sigmoid => None,
        }
    }

    fn tag(self) -> (u8, f64) {
        match self {
            Activation::Identity => (0, 0.0),
            Activation::LeakyRelu(s) => (1, s),
            Activation::Sigmoid => (2, 0.0),
        }
    }

    fn from_tag(tag: u8, param: f64) -> Result<Self> {
        let act = match tag {
            0 => Activation::Identity,
            1 => Activation::LeakyRelu(param),
            2 => Activation::Sigmoid,
            t => {
                return Err(Error::Format {
                    what: "network blob",
                    message: format!("unknown activation tag {t}"),
                })
            }
        };
        act.validate()?;
        Ok(act)
    }

    fn validate(self) -> Result<()> {
        if let Activation::LeakyRelu(s) = self {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::config(format!("LeakyReLU slope {s} not in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// One fully connected layer: `act(x · weight + bias)` with `weight` stored
/// as `in × out` and `bias` as `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Matrix, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape(format!(
                "bias {:?} for weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        activation.validate()?;
        Ok(Layer {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// A small fully connected network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    layers: Vec<Layer>,
}

/// A network's parameters placed on a tape, in `[w0, b0, w1, b1, ..]` order.
#[derive(Debug, Clone)]
pub struct BoundNet {
    params: Vec<Expr>,
}

impl BoundNet {
    pub fn params(&self) -> &[Expr] {
        &self.params
    }

    fn weight(&self, layer: usize) -> Expr {
        self.params[2 * layer]
    }

    fn bias(&self, layer: usize) -> Expr {
        self.params[2 * layer + 1]
    }

    /// Gradients in the same order as [`MlpNet::params_mut`].
    pub fn grads(&self, grads: &Gradients) -> Vec<Matrix> {
        self.params.iter().map(|&p| grads.wrt(p)).collect()
    }
}

impl MlpNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(MlpNet { layers })
    }

    /// Randomly initialised network through the widths in `dims`, with
    /// `activations[i]` on layer `i`. Weights and biases are uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::config(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::config("layer width 0"));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (w, &act) in dims.windows(2).zip(activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            layers.push(Layer::new(
                Matrix::from_raw(fan_in, fan_out, weight),
                Matrix::from_raw(1, fan_out, bias),
                act,
            )?);
        }
        MlpNet::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Plain forward pass without recording a graph.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut h = input.clone();
        for layer in &self.layers {
            let mut z = h.matmul_unchecked(&layer.weight).add_row(&layer.bias)?;
            let act = layer.activation;
            z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            h = z;
        }
        Ok(h)
    }

    pub fn forward_row(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Matrix::row_vector(input)?)?.into_vec())
    }

    /// Places the parameters on `tape`, tracked or as constants.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundNet {
        let params = self
            .params()
            .into_iter()
            .map(|p| {
                if track {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        BoundNet { params }
    }

    /// Forward pass recorded on `tape`.
    pub fn forward_expr(&self, tape: &mut Tape, bound: &BoundNet, input: Expr) -> Result<Expr> {
        self.check_input(tape.value(input))?;
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, bound.weight(i))?;
            let z = tape.add_row(z, bound.bias(i))?;
            h = match layer.activation {
                Activation::LeakyRelu(s) => tape.leaky_relu(z, s),
                Activation::Sigmoid => tape.sigmoid(z),
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Gradient of the scalar network output with respect to its input, one
    /// row per input row, recorded on `tape` as a function of the bound
    /// weights so that it can itself be differentiated.
    ///
    /// Every activation must be piecewise linear (LeakyReLU or Identity).
    /// The input gradient is then `D_L W_Lᵀ ⋯ D_1 W_1ᵀ` per row, where the
    /// diagonal slope masks `D_l` are constant almost everywhere, so the
    /// recorded expression is exact away from the kinks.
    pub fn input_gradient(&self, tape: &mut Tape, bound: &BoundNet, input: &Matrix) -> Result<Expr> {
        if self.out_dim() != 1 {
            return Err(Error::contract(format!(
                "input gradient needs a scalar-output network, got {} outputs",
                self.out_dim()
            )));
        }
        self.check_input(input)?;
        if self.layers.iter().any(|l| l.activation == Activation::Sigmoid) {
            return Err(Error::contract(
                "input gradient requires piecewise-linear activations",
            ));
        }

        // Slope masks from a plain forward pass.
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = input.clone();
        for layer in &self.layers {
            let z = h.matmul_unchecked(&layer.weight).add_row(&layer.bias)?;
            let act = layer.activation;
            masks.push(z.map(|v| act.linear_slope(v).expect("piecewise linear")));
            h = z.map(|v| act.apply(v));
        }

        let last = self.layers.len() - 1;
        let mut upstream = tape.constant(masks[last].clone());
        let mut grad = upstream;
        for l in (0..=last).rev() {
            grad = tape.matmul_t(upstream, bound.weight(l))?;
            if l > 0 {
                let mask = tape.constant(masks[l - 1].clone());
                upstream = tape.hadamard(grad, mask)?;
            }
        }
        Ok(grad)
    }

    /// Writes the `PGM1` blob: magic, u32 layer count, then per layer
    /// u32 in, u32 out, u8 activation tag, f64 activation parameter,
    /// `in × out` f64 weights (row-major) and `out` f64 biases. All
    /// little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b"PGM1")?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
            w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
            let (tag, param) = layer.activation.tag();
            w.write_all(&[tag])?;
            w.write_all(&param.to_le_bytes())?;
            for v in layer.weight.data().iter().chain(layer.bias.data()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |message: String| Error::Format {
            what: "network blob",
            message,
        };
        let io = |e: std::io::Error| fmt(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"PGM1" {
            return Err(fmt(format!("bad magic {magic:?}")));
        }
        let count = read_u32(r).map_err(io)? as usize;
        if count == 0 || count > 1024 {
            return Err(fmt(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(r).map_err(io)? as usize;
            let cols = read_u32(r).map_err(io)? as usize;
            if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
                return Err(fmt(format!("implausible layer shape {rows}x{cols}")));
            }
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(io)?;
            let param = read_f64(r).map_err(io)?;
            let activation = Activation::from_tag(tag[0], param)?;
            let weight = (0..rows * cols)
                .map(|_| read_f64(r))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            let bias = (0..cols)
                .map(|_| read_f64(r))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io)?;
            layers.push(Layer::new(
                Matrix::from_vec(rows, cols, weight)?,
                Matrix::from_vec(1, cols, bias)?,
                activation,
            )?);
        }
        MlpNet::new(layers)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn single(weight: Matrix, bias: Matrix, act: Activation) -> MlpNet {
        MlpNet::new(vec![Layer::new(weight, bias, act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = single(Matrix::identity(3), Matrix::zeros(1, 3), Activation::Identity);
        assert_eq!(net.forward_row(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn leaky_negative_input() {
        let net = single(Matrix::identity(1), Matrix::zeros(1, 1), Activation::leaky());
        assert_eq!(net.forward_row(&[-1.0]).unwrap(), vec![-0.01]);
    }

    #[test]
    fn zero_network_outputs() {
        let net = single(Matrix::zeros(2, 2), Matrix::zeros(1, 2), Activation::leaky());
        assert_eq!(net.forward_row(&[3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
        let net = single(Matrix::zeros(2, 2), Matrix::zeros(1, 2), Activation::Sigmoid);
        assert_eq!(net.forward_row(&[3.0, 4.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn dimension_checks() {
        let mut rng = rng_from_seed(1);
        let net = MlpNet::init(&[3, 4, 2], &[Activation::leaky(), Activation::Identity], &mut rng)
            .unwrap();
        assert!(matches!(net.forward(&Matrix::zeros(1, 2)), Err(Error::Shape(_))));
        let a = Layer::new(Matrix::zeros(3, 4), Matrix::zeros(1, 4), Activation::Identity).unwrap();
        let b = Layer::new(Matrix::zeros(5, 1), Matrix::zeros(1, 1), Activation::Identity).unwrap();
        assert!(MlpNet::new(vec![a, b]).is_err());
        assert!(Layer::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1), Activation::LeakyRelu(1.5))
            .is_err());
    }

    #[test]
    fn linear_input_gradient_is_weight() {
        let w = Matrix::from_vec(3, 1, vec![0.5, -1.0, 2.0]).unwrap();
        let net = single(w, Matrix::zeros(1, 1), Activation::Identity);
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -4.0, 0.0, 9.0]).unwrap();
        let g = net.input_gradient(&mut tape, &bound, &x).unwrap();
        assert_eq!(tape.value(g).data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn input_gradient_rejects_vector_output_and_sigmoid() {
        let mut rng = rng_from_seed(2);
        let net = MlpNet::init(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        assert!(matches!(
            net.input_gradient(&mut tape, &bound, &Matrix::zeros(1, 3)),
            Err(Error::Contract(_))
        ));
        let net = MlpNet::init(&[3, 1], &[Activation::Sigmoid], &mut rng).unwrap();
        let bound = net.bind(&mut tape, true);
        assert!(net.input_gradient(&mut tape, &bound, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn blob_roundtrip() {
        let mut rng = rng_from_seed(3);
        let net = MlpNet::init(&[4, 3, 2], &[Activation::leaky(), Activation::Sigmoid], &mut rng)
            .unwrap();
        let bytes = net.to_bytes();
        let back = MlpNet::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(net, back);
        assert!(MlpNet::read_from(&mut &b"PGMX"[..]).is_err());
        assert!(MlpNet::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }
}
