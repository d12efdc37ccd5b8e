//! Reverse-mode differentiation for the parameter shapes this crate trains:
//! complex FIR taps (stored as interleaved real pairs, with hand-derived
//! gradients elsewhere) and small fully connected networks (taped).
//!
//! Complex gradient convention used throughout the crate: for a real loss
//! `L` and complex variable `z`, the gradient is `∂L/∂Re z + j·∂L/∂Im z`.
//! For `w = a·z` with fixed `a` this makes `grad_z = conj(a)·grad_w`.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use mlp::{Activation, Mlp, MlpSpec, Residual, Tape};
pub use tensor::{l2_penalty, ParamTensor};

use num_complex::Complex64;

/// Straight-through quantization: the forward value is `hard`.
pub fn straight_through(soft: &[Complex64], hard: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(soft.len(), hard.len(), "straight-through operands differ in length");
    hard.to_vec()
}

/// Backward pass of [`straight_through`]: the gradient arriving at the
/// quantized value is copied onto the soft input; the hard input receives none.
pub fn straight_through_backward(grad_out: &[Complex64]) -> Vec<Complex64> {
    grad_out.to_vec()
}
