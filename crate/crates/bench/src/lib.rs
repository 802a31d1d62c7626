//! Fixtures shared by the benchmarks.

use dts_core::{Arch, Tensor};

/// A deterministic `[c,h,w]` image with values in `[0,1)`.
pub fn test_image(c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * h * w)
        .map(|i| ((i * 7919) % 1000) as f32 / 1000.0)
        .collect();
    Tensor::new(&[c, h, w], data).expect("non-empty shape")
}

pub fn default_arch() -> Arch {
    Arch::default()
}
