//! Tensors, reverse-mode differentiation, AdamW and the learning-rate schedule.

pub(crate) mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{adamw_step, lr_at, AdamWConfig, LrDecay, LrSchedule, OptimState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{DtsError, Result};

/// Per-pixel channel softmax of a `[C,H,W]` tensor.
pub fn softmax_channel(logits: &Tensor) -> Result<Tensor> {
    let (c, h, w) = logits.chw()?;
    if !logits.all_finite() {
        return Err(DtsError::NonFinite("softmax input"));
    }
    let mut out = vec![0.0; c * h * w];
    kernels::softmax_channels(c, h * w, logits.data(), &mut out);
    Tensor::new(&[c, h, w], out)
}
