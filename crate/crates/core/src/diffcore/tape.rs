//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is acyclic and already
//! topologically sorted; [`Tape::backward`] walks it once in reverse. Only
//! nodes that depend on a tracked parameter receive gradients.

use super::matrix::{Matrix, NORM_FLOOR};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Expr(usize);

impl Expr {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Expr, Expr),
    /// `a · bᵀ`
    MatMulT(Expr, Expr),
    AddRow(Expr, Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Hadamard(Expr, Expr),
    Scale(Expr, f64),
    AddScalar(Expr),
    LeakyRelu(Expr, f64),
    Sigmoid(Expr),
    Relu(Expr),
    Square(Expr),
    HCat(Expr, Expr),
    SliceCols(Expr, usize),
    SelectRows(Expr, Vec<usize>),
    RowNorm(Expr),
    RowCosine(Expr, Expr),
    Sum(Expr),
    Mean(Expr),
    SoftmaxCrossEntropy(Expr, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Recording of a computation, owned by a single training step.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `e`; zeros when the loss does not depend on it.
    pub fn wrt(&self, e: Expr) -> Matrix {
        match &self.grads[e.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[e.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, e: Expr) -> Matrix {
        let (r, c) = self.shapes[e.0];
        self.grads[e.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of LeakyReLU; at exactly 0 it is the negative slope.
pub fn leaky_slope(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, e: Expr) -> &Matrix {
        &self.nodes[e.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, e: Expr) -> f64 {
        self.nodes[e.0].value.data()[0]
    }

    pub fn is_tracked(&self, e: Expr) -> bool {
        self.nodes[e.0].tracked
    }

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Expr {
        self.nodes.push(Node { value, op, tracked });
        Expr(self.nodes.len() - 1)
    }

    fn tracked(&self, es: &[Expr]) -> bool {
        es.iter().any(|e| self.nodes[e.0].tracked)
    }

    /// A parameter whose gradient is wanted.
    pub fn param(&mut self, value: Matrix) -> Expr {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Expr {
        self.push(value, Op::Leaf, false)
    }

    fn shape(&self, e: Expr) -> (usize, usize) {
        self.nodes[e.0].value.shape()
    }

    fn same_shape(&self, a: Expr, b: Expr, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn unary(&mut self, a: Expr, value: Matrix, op: Op) -> Expr {
        let t = self.tracked(&[a]);
        self.push(value, op, t)
    }

    fn binary(&mut self, a: Expr, b: Expr, value: Matrix, op: Op) -> Expr {
        let t = self.tracked(&[a, b]);
        self.push(value, op, t)
    }

    pub fn matmul(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(Error::shape(format!(
                "matmul_t: {:?} by transpose of {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let v = self.value(a).matmul_t(self.value(b));
        Ok(self.binary(a, b, v, Op::MatMulT(a, b)))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.value(a).add_row(self.value(b))?;
        Ok(self.binary(a, b, v, Op::AddRow(a, b)))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.binary(a, b, v, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Expr, s: f64) -> Expr {
        let v = self.value(a).scale(s);
        self.unary(a, v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Expr, s: f64) -> Expr {
        let v = self.value(a).map(|x| x + s);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Expr, slope: f64) -> Expr {
        let v = self.value(a).map(|x| leaky(x, slope));
        self.unary(a, v, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        let v = self.value(a).map(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    /// `max(0, x)`, derivative 0 at the kink.
    pub fn relu(&mut self, a: Expr) -> Expr {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn square(&mut self, a: Expr) -> Expr {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    pub fn hcat(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        let v = self.value(a).hcat(self.value(b))?;
        Ok(self.binary(a, b, v, Op::HCat(a, b)))
    }

    pub fn slice_cols(&mut self, a: Expr, start: usize, end: usize) -> Result<Expr> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.unary(a, v, Op::SliceCols(a, start)))
    }

    pub fn select_rows(&mut self, a: Expr, idx: &[usize]) -> Result<Expr> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("row {bad} out of {rows}")));
        }
        let v = self.value(a).select_rows(idx);
        Ok(self.unary(a, v, Op::SelectRows(a, idx.to_vec())))
    }

    /// Euclidean norm of each row as a column vector.
    pub fn row_norm(&mut self, a: Expr) -> Expr {
        let m = self.value(a);
        let v: Vec<f64> = m.iter_rows().map(super::matrix::norm).collect();
        let v = Matrix::from_raw(m.rows(), 1, v);
        self.unary(a, v, Op::RowNorm(a))
    }

    /// Row-wise cosine similarity with norms floored at [`NORM_FLOOR`].
    pub fn row_cosine(&mut self, a: Expr, b: Expr) -> Result<Expr> {
        self.same_shape(a, b, "row_cosine")?;
        let (ma, mb) = (self.value(a), self.value(b));
        let v: Vec<f64> = ma
            .iter_rows()
            .zip(mb.iter_rows())
            .map(|(x, y)| super::matrix::cosine(x, y))
            .collect();
        let v = Matrix::from_raw(ma.rows(), 1, v);
        Ok(self.binary(a, b, v, Op::RowCosine(a, b)))
    }

    pub fn sum(&mut self, a: Expr) -> Expr {
        let v = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Expr) -> Result<Expr> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::contract("mean of an empty node"));
        }
        let v = Matrix::from_raw(1, 1, vec![m.sum() / m.len() as f64]);
        Ok(self.unary(a, v, Op::Mean(a)))
    }

    /// Mean softmax cross-entropy of `logits` (batch × classes) against
    /// class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Expr, labels: &[usize]) -> Result<Expr> {
        let m = self.value(logits);
        if m.rows() != labels.len() || m.rows() == 0 {
            return Err(Error::shape(format!(
                "{} logit rows for {} labels",
                m.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m.cols()) {
            return Err(Error::contract(format!(
                "label {bad} outside {} classes",
                m.cols()
            )));
        }
        let mut total = 0.0;
        for (row, &y) in m.iter_rows().zip(labels) {
            total += log_sum_exp(row) - row[y];
        }
        let v = Matrix::from_raw(1, 1, vec![total / labels.len() as f64]);
        Ok(self.unary(logits, v, Op::SoftmaxCrossEntropy(logits, labels.to_vec())))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Expr) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], e: Expr, g: Matrix) {
        if !self.nodes[e.0].tracked {
            return;
        }
        match &mut grads[e.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |e: Expr| &self.nodes[e.0].value;
        let wants = |e: Expr| self.nodes[e.0].tracked;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if wants(a) {
                    self.accumulate(grads, a, g.matmul_t(val(b)));
                }
                if wants(b) {
                    self.accumulate(grads, b, val(a).t_matmul(g));
                }
            }
            &Op::MatMulT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if wants(a) {
                    self.accumulate(grads, a, g.matmul_unchecked(val(b)));
                }
                if wants(b) {
                    self.accumulate(grads, b, g.t_matmul(val(a)));
                }
            }
            &Op::AddRow(a, b) => {
                if wants(b) {
                    self.accumulate(grads, b, g.sum_rows());
                }
                self.accumulate(grads, a, g.clone());
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                if wants(b) {
                    self.accumulate(grads, b, g.scale(-1.0));
                }
            }
            &Op::Hadamard(a, b) => {
                if wants(a) {
                    self.accumulate(grads, a, g.zip_map(val(b), |x, y| x * y));
                }
                if wants(b) {
                    self.accumulate(grads, b, g.zip_map(val(a), |x, y| x * y));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.scale(s)),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            &Op::LeakyRelu(a, slope) => {
                let d = g.zip_map(val(a), |gv, x| gv * leaky_slope(x, slope));
                self.accumulate(grads, a, d);
            }
            &Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, a, d);
            }
            &Op::Relu(a) => {
                let d = g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, a, d);
            }
            &Op::Square(a) => {
                let d = g.zip_map(val(a), |gv, x| 2.0 * gv * x);
                self.accumulate(grads, a, d);
            }
            &Op::HCat(a, b) => {
                let split = val(a).cols();
                let total = g.cols();
                if wants(a) {
                    self.accumulate(grads, a, g.slice_cols(0, split).expect("hcat split"));
                }
                if wants(b) {
                    self.accumulate(grads, b, g.slice_cols(split, total).expect("hcat split"));
                }
            }
            &Op::SliceCols(a, start) => {
                let src = val(a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, a, d);
            }
            Op::SelectRows(a, idx) => {
                let src = val(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            &Op::RowNorm(a) => {
                let src = val(a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for r in 0..src.rows() {
                    let n = node.value.get(r, 0);
                    // subgradient 0 at the origin
                    if n > NORM_FLOOR {
                        let s = g.get(r, 0) / n;
                        for (o, x) in d.row_mut(r).iter_mut().zip(src.row(r)) {
                            *o = s * x;
                        }
                    }
                }
                self.accumulate(grads, a, d);
            }
            &Op::RowCosine(a, b) => {
                let (ma, mb) = (val(a), val(b));
                let mut da = Matrix::zeros(ma.rows(), ma.cols());
                let mut db = Matrix::zeros(mb.rows(), mb.cols());
                for r in 0..ma.rows() {
                    let (x, y) = (ma.row(r), mb.row(r));
                    let (nx, ny) = (super::matrix::norm(x), super::matrix::norm(y));
                    let (fx, fy) = (nx.max(NORM_FLOOR), ny.max(NORM_FLOOR));
                    let c = node.value.get(r, 0);
                    let gr = g.get(r, 0);
                    let x_free = nx > NORM_FLOOR;
                    let y_free = ny > NORM_FLOOR;
                    for (k, o) in da.row_mut(r).iter_mut().enumerate() {
                        let mut v = y[k] / (fx * fy);
                        if x_free {
                            v -= c * x[k] / (fx * fx);
                        }
                        *o = gr * v;
                    }
                    for (k, o) in db.row_mut(r).iter_mut().enumerate() {
                        let mut v = x[k] / (fx * fy);
                        if y_free {
                            v -= c * y[k] / (fy * fy);
                        }
                        *o = gr * v;
                    }
                }
                if wants(a) {
                    self.accumulate(grads, a, da);
                }
                if wants(b) {
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Sum(a) => {
                let (r, c) = val(a).shape();
                self.accumulate(grads, a, Matrix::filled(r, c, g.data()[0]));
            }
            &Op::Mean(a) => {
                let (r, c) = val(a).shape();
                let s = g.data()[0] / (r * c) as f64;
                self.accumulate(grads, a, Matrix::filled(r, c, s));
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                let logits = val(*a);
                let scale = g.data()[0] / labels.len() as f64;
                let mut d = Matrix::zeros(logits.rows(), logits.cols());
                for (r, &y) in labels.iter().enumerate() {
                    let row = logits.row(r);
                    let lse = log_sum_exp(row);
                    for (k, o) in d.row_mut(r).iter_mut().enumerate() {
                        let p = (row[k] - lse).exp();
                        *o = scale * (p - if k == y { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(r, c, v.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(m(1, 1, &[3.0]));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn self_cosine_has_zero_gradient() {
        let mut t = Tape::new();
        let v = t.param(m(1, 3, &[0.3, -1.2, 2.0]));
        let c = t.row_cosine(v, v).unwrap();
        let s = t.sum(c);
        assert!((t.scalar(s) - 1.0).abs() < 1e-15);
        let g = t.backward(s).unwrap();
        for x in g.wrt(v).data() {
            assert!(x.abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let v = t.param(m(1, 2, &[1.0, 2.0]));
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn untouched_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(m(1, 2, &[1.0, 2.0]));
        let b = t.param(m(2, 2, &[1.0; 4]));
        let s = t.sum(a);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(b), Matrix::zeros(2, 2));
        assert_eq!(g.wrt(a).data(), &[1.0, 1.0]);
    }

    #[test]
    fn leaky_relu_kink_uses_negative_slope() {
        let mut t = Tape::new();
        let x = t.param(m(1, 1, &[0.0]));
        let y = t.leaky_relu(x, 0.01);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.01]);
    }

    #[test]
    fn constants_do_not_propagate() {
        let mut t = Tape::new();
        let c = t.constant(m(1, 1, &[2.0]));
        let x = t.param(m(1, 1, &[5.0]));
        let p = t.hadamard(c, x).unwrap();
        assert!(!t.is_tracked(c));
        let g = t.backward(p).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0]);
        assert_eq!(g.wrt(c).data(), &[0.0]);
    }
}
