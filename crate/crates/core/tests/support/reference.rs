//! Double-precision reference implementations used as test oracles.
//! Written directly from the definitions, without sharing code with the
//! library.
#![allow(dead_code)]

use dts_core::{Arch, LabelMap, SegNet};

pub const IGNORE: u8 = 255;

/// `[c_out, h_out, w_out]` convolution of a `[c, h, w]` input with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    kernel: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * ho * wo];
    for o in 0..c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += kernel[((o * c + ci) * k + ky) * k + kx]
                                * input[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    (out, ho, wo)
}

fn bias_relu(x: &mut [f64], bias: &[f64], hw: usize, relu: bool) {
    for (ch, &b) in bias.iter().enumerate() {
        for v in &mut x[ch * hw..(ch + 1) * hw] {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Logits `[C, H, W]` of the default network topology.
pub fn forward(arch: &Arch, params: &[Vec<f64>], image: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (sw, wd, f) = (arch.stem_width, arch.width, arch.downsample);
    let (mut x, mut hh, mut ww) = conv(image, (arch.in_channels, h, w), &params[0], sw, 3, 1, 1);
    bias_relu(&mut x, &params[1], hh * ww, true);
    let (mut y, h2, w2) = conv(&x, (sw, hh, ww), &params[2], wd, 3, f, 1);
    bias_relu(&mut y, &params[3], h2 * w2, true);
    (hh, ww) = (h2, w2);
    for i in 0..arch.mid_layers {
        let (mut z, _, _) = conv(&y, (wd, hh, ww), &params[4 + 2 * i], wd, 3, 1, 1);
        bias_relu(&mut z, &params[5 + 2 * i], hh * ww, true);
        y = z;
    }
    let (uh, uw) = (hh * f, ww * f);
    let mut up = vec![0.0; wd * uh * uw];
    for ch in 0..wd {
        for yy in 0..uh {
            for xx in 0..uw {
                up[(ch * uh + yy) * uw + xx] = y[(ch * hh + yy / f) * ww + xx / f];
            }
        }
    }
    let hd = 4 + 2 * arch.mid_layers;
    let (mut logits, _, _) = conv(&up, (wd, uh, uw), &params[hd], arch.num_classes, 1, 1, 0);
    bias_relu(&mut logits, &params[hd + 1], uh * uw, false);
    logits
}

/// Mean over non-ignored pixels of `weight * cross-entropy`.
pub fn weighted_ce(logits: &[f64], c: usize, labels: &[u8], weights: &[f32]) -> f64 {
    let hw = labels.len();
    let (mut total, mut n) = (0.0, 0usize);
    for p in 0..hw {
        if labels[p] == IGNORE {
            continue;
        }
        let m = (0..c)
            .map(|ch| logits[ch * hw + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m
            + (0..c)
                .map(|ch| (logits[ch * hw + p] - m).exp())
                .sum::<f64>()
                .ln();
        total += weights[p] as f64 * (lse - logits[labels[p] as usize * hw + p]);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn params_f64(net: &SegNet) -> Vec<Vec<f64>> {
    net.params()
        .iter()
        .map(|p| p.data().iter().map(|&v| v as f64).collect())
        .collect()
}

pub fn loss(
    arch: &Arch,
    params: &[Vec<f64>],
    image: &[f64],
    label: &LabelMap,
    weights: &[f32],
) -> f64 {
    let logits = forward(arch, params, image, label.height(), label.width());
    weighted_ce(&logits, arch.num_classes, label.data(), weights)
}

/// Central finite difference of the loss with respect to one coordinate.
#[allow(clippy::too_many_arguments)]
pub fn fd_grad(
    arch: &Arch,
    params: &[Vec<f64>],
    which: usize,
    coord: usize,
    image: &[f64],
    label: &LabelMap,
    weights: &[f32],
    eps: f64,
) -> f64 {
    let mut p = params.to_vec();
    p[which][coord] += eps;
    let up = loss(arch, &p, image, label, weights);
    p[which][coord] -= 2.0 * eps;
    let down = loss(arch, &p, image, label, weights);
    (up - down) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
