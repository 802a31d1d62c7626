use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::LabelMap;
use crate::error::{DtsError, Result};
use crate::numeric::Tensor;

/// Domain a training sample was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainTag {
    /// Pure source image with ground truth.
    S,
    /// Source pixels pasted over a target image.
    ST,
    /// Target pixels pasted over another target image.
    TT,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::S => "S",
            DomainTag::ST => "ST",
            DomainTag::TT => "TT",
        })
    }
}

/// Binary mix mask; `true` takes the pixel from the first image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl MixMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(DtsError::dim(format!(
                "{height}x{width} mask with {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if self.height != h || self.width != w {
            return Err(DtsError::dim(format!(
                "mask is {}x{} but inputs are {h}x{w}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// A training sample ready for the student.
#[derive(Clone, Debug)]
pub struct MixedSample {
    pub image: Tensor,
    pub label: LabelMap,
    pub pixel_weight: Vec<f32>,
    pub provenance: DomainTag,
    /// Pixels copied from a target-domain image.
    pub target_pixels: usize,
}

/// ClassMix mask: picks `ceil(K/2)` of the `K` classes present in `label`
/// uniformly without replacement and marks their pixels.
pub fn classmix_mask<R: Rng + ?Sized>(label: &LabelMap, rng: &mut R) -> Result<MixMask> {
    let classes = label.classes_present();
    if classes.is_empty() {
        return Err(DtsError::InvalidArgument(
            "cannot build a class mask from a fully ignored label map".into(),
        ));
    }
    let n = classes.len().div_ceil(2);
    let mut chosen = [false; 256];
    for &c in classes.choose_multiple(rng, n) {
        chosen[c as usize] = true;
    }
    let bits = label
        .data()
        .iter()
        .map(|&v| chosen[v as usize] && v != LabelMap::IGNORE)
        .collect();
    MixMask::new(label.height(), label.width(), bits)
}

/// `a * M + b * (1 - M)` on `[3,H,W]` images.
pub fn mix(a: &Tensor, b: &Tensor, mask: &MixMask) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(DtsError::dim(format!(
            "mixing {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (c, h, w) = a.chw()?;
    mask.check(h, w)?;
    let hw = h * w;
    let mut out = b.data().to_vec();
    for ch in 0..c {
        let (src, dst) = (
            &a.data()[ch * hw..(ch + 1) * hw],
            &mut out[ch * hw..(ch + 1) * hw],
        );
        for ((d, &s), &m) in dst.iter_mut().zip(src).zip(mask.bits()) {
            if m {
                *d = s;
            }
        }
    }
    Tensor::new(a.shape(), out)
}

/// Mixes label maps and their per-pixel loss weights with the same mask.
pub fn mix_labels(
    a: &LabelMap,
    b: &LabelMap,
    weight_a: &[f32],
    weight_b: &[f32],
    mask: &MixMask,
) -> Result<(LabelMap, Vec<f32>)> {
    if !a.same_size(b) {
        return Err(DtsError::dim(format!(
            "mixing {}x{} labels with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    mask.check(a.height(), a.width())?;
    if weight_a.len() != a.len() || weight_b.len() != b.len() {
        return Err(DtsError::dim("weight maps must match label size"));
    }
    let n = a.len();
    let mut labels = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for p in 0..n {
        if mask.bits()[p] {
            labels.push(a.data()[p]);
            weights.push(weight_a[p]);
        } else {
            labels.push(b.data()[p]);
            weights.push(weight_b[p]);
        }
    }
    Ok((LabelMap::new(a.height(), a.width(), labels)?, weights))
}
