use super::LabelMap;
use crate::error::{DtsError, Result};
use crate::numeric::{softmax_channel, Tensor};

/// Teacher prediction used as a training target.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub labels: LabelMap,
    /// Per-pixel max class probability.
    pub conf: Vec<f32>,
    /// Fraction of counted pixels whose confidence reaches the threshold.
    pub gamma: f32,
}

/// Argmax labels, confidences and the confidence factor of one image.
pub fn pseudo_label(teacher_logits: &Tensor, tau: f32) -> Result<PseudoLabel> {
    pseudo_label_masked(teacher_logits, tau, None)
}

/// Like [`pseudo_label`], but pixels where `valid` is `false` become
/// [`LabelMap::IGNORE`] and do not count towards `gamma`.
pub fn pseudo_label_masked(
    teacher_logits: &Tensor,
    tau: f32,
    valid: Option<&[bool]>,
) -> Result<PseudoLabel> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(DtsError::InvalidArgument(format!(
            "tau {tau} must lie in (0, 1)"
        )));
    }
    let (c, h, w) = teacher_logits.chw()?;
    if c > 255 {
        return Err(DtsError::dim(format!("{c} classes do not fit a label map")));
    }
    let hw = h * w;
    if let Some(v) = valid {
        if v.len() != hw {
            return Err(DtsError::dim("validity mask size"));
        }
    }
    let probs = softmax_channel(teacher_logits)?;
    let p = probs.data();
    let mut labels = vec![0u8; hw];
    let mut conf = vec![0.0f32; hw];
    let (mut counted, mut confident) = (0usize, 0usize);
    for px in 0..hw {
        let (mut best, mut best_p) = (0usize, p[px]);
        for ch in 1..c {
            if p[ch * hw + px] > best_p {
                best = ch;
                best_p = p[ch * hw + px];
            }
        }
        conf[px] = best_p;
        if valid.is_none_or(|v| v[px]) {
            labels[px] = best as u8;
            counted += 1;
            if best_p >= tau {
                confident += 1;
            }
        } else {
            labels[px] = LabelMap::IGNORE;
        }
    }
    let gamma = if counted == 0 {
        0.0
    } else {
        confident as f32 / counted as f32
    };
    Ok(PseudoLabel {
        labels: LabelMap::new(h, w, labels)?,
        conf,
        gamma,
    })
}

/// Which of two target images supplies the ⟨T,T⟩ class mask: the one with
/// the larger confidence factor, the first on ties.
pub fn choose_tt_mask_source(a: &PseudoLabel, b: &PseudoLabel) -> usize {
    if b.gamma > a.gamma {
        1
    } else {
        0
    }
}
