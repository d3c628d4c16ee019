//! Dense matrices, reverse-mode differentiation, small MLPs and Adam.

mod adam;
mod matrix;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{cosine, dot, mean_vector, norm, Matrix, NORM_FLOOR};
pub use mlp::{Activation, BoundNet, Layer, MlpNet, LEAKY_SLOPE};
pub use tape::{log_sum_exp, sigmoid, Expr, Gradients, Tape};

pub(crate) use mlp::read_u32;
