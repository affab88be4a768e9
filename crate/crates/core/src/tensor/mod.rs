//! Dense `f64` tensors with a reverse-mode tape, Adam, and initializers.

mod optim;
mod tape;

pub use optim::{kaiming_uniform, Adam, AdamConfig, Bound, Param, ParamId, ParamStore};
pub use tape::{softmax_rows, Binary, Gradients, Matrix, Tape, Unary, Var};

/// Clamp used before every log and Bernoulli-parameter division.
pub const EPS: f64 = 1e-10;

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: rand::Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize),
    rate: f64,
) -> Matrix {
    if rate <= 0.0 {
        return Matrix::ones(shape);
    }
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}
