//! Weak (rescale + crop) and strong (color jitter + blur) augmentations.

use rand::Rng;

use super::LabelMap;
use crate::error::{DtsError, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Range of the per-channel brightness and contrast factors.
    pub jitter: (f32, f32),
    pub blur_sigma_max: f32,
    pub blur_prob: f32,
    pub scale: (f32, f32),
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            jitter: (0.8, 1.2),
            blur_sigma_max: 1.1,
            blur_prob: 0.5,
            scale: (0.75, 1.25),
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.jitter.0 > 0.0
            && self.jitter.0 <= self.jitter.1
            && self.blur_sigma_max >= 0.0
            && (0.0..=1.0).contains(&self.blur_prob)
            && self.scale.0 > 0.0
            && self.scale.0 <= self.scale.1;
        if ok {
            Ok(())
        } else {
            Err(DtsError::InvalidArgument(format!(
                "augmentation parameters out of range: {self:?}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricDraw {
    pub brightness: [f32; 3],
    pub contrast: [f32; 3],
    /// Zero means no blur.
    pub blur_sigma: f32,
}

impl PhotometricDraw {
    pub const IDENTITY: Self = Self {
        brightness: [1.0; 3],
        contrast: [1.0; 3],
        blur_sigma: 0.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricDraw {
    pub scale: f32,
    /// Crop or pad position along each axis as a fraction in `[0, 1)`.
    pub offset: (f32, f32),
}

impl GeometricDraw {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        offset: (0.0, 0.0),
    };
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

pub fn sample_photometric<R: Rng + ?Sized>(rng: &mut R, params: &AugmentParams) -> PhotometricDraw {
    let mut d = PhotometricDraw::IDENTITY;
    for c in 0..3 {
        d.brightness[c] = uniform(rng, params.jitter);
        d.contrast[c] = uniform(rng, params.jitter);
    }
    let blur: f32 = rng.gen();
    let sigma = uniform(rng, (0.0, params.blur_sigma_max));
    if blur < params.blur_prob {
        d.blur_sigma = sigma;
    }
    d
}

pub fn sample_geometric<R: Rng + ?Sized>(rng: &mut R, params: &AugmentParams) -> GeometricDraw {
    GeometricDraw {
        scale: uniform(rng, params.scale),
        offset: (rng.gen(), rng.gen()),
    }
}

/// Color jitter followed by optional Gaussian blur; output clamped to `[0, 1]`.
pub fn apply_photometric(image: &Tensor, draw: &PhotometricDraw) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    let hw = h * w;
    let mut out = image.data().to_vec();
    for ch in 0..c {
        let (b, k) = (draw.brightness[ch % 3], draw.contrast[ch % 3]);
        if b == 1.0 && k == 1.0 {
            continue;
        }
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        let mean = plane.iter().map(|&v| (v * b) as f64).sum::<f64>() as f32 / hw as f32;
        for v in plane.iter_mut() {
            *v = (k * (*v * b - mean) + mean).clamp(0.0, 1.0);
        }
    }
    let out = Tensor::new(image.shape(), out)?;
    if draw.blur_sigma > 0.0 {
        gaussian_blur(&out, draw.blur_sigma)
    } else {
        Ok(out)
    }
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and clamped borders.
pub fn gaussian_blur(image: &Tensor, sigma: f32) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if sigma <= 0.0 {
        return Ok(image.clone());
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f32 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= z);

    let hw = h * w;
    let mut tmp = vec![0.0f32; c * hw];
    let mut out = vec![0.0f32; c * hw];
    let src = image.data();
    for ch in 0..c {
        let base = ch * hw;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &t) in taps.iter().enumerate() {
                    let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += t * src[base + y * w + xx];
                }
                tmp[base + y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &t) in taps.iter().enumerate() {
                    let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += t * tmp[base + yy * w + x];
                }
                out[base + y * w + x] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Rescales image (bilinear) and label (nearest) by `draw.scale`, then crops
/// or pads back to the original size. Padded pixels are zero in the image
/// and [`LabelMap::IGNORE`] in the label.
pub fn apply_geometric(
    image: &Tensor,
    label: &LabelMap,
    draw: &GeometricDraw,
) -> Result<(Tensor, LabelMap)> {
    let (c, h, w) = image.chw()?;
    if label.height() != h || label.width() != w {
        return Err(DtsError::dim("label and image sizes differ"));
    }
    let nh = ((h as f32 * draw.scale).round() as usize).max(1);
    let nw = ((w as f32 * draw.scale).round() as usize).max(1);
    if nh == h && nw == w {
        return Ok((image.clone(), label.clone()));
    }
    // placement of the resized canvas relative to the output window
    let place = |n: usize, len: usize, u: f32| -> isize {
        let slack = n.abs_diff(len);
        let off = ((u * (slack + 1) as f32) as usize).min(slack) as isize;
        if n >= len {
            -off
        } else {
            off
        }
    };
    let (py, px) = (place(nh, h, draw.offset.0), place(nw, w, draw.offset.1));
    let (sy, sx) = (h as f32 / nh as f32, w as f32 / nw as f32);
    let hw = h * w;
    let mut out = vec![0.0f32; c * hw];
    let mut lab = vec![LabelMap::IGNORE; hw];
    for y in 0..h {
        let ry = y as isize - py;
        if ry < 0 || ry >= nh as isize {
            continue;
        }
        let fy = ((ry as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(h - 1);
        let ny = (((ry as f32 + 0.5) * sy) as usize).min(h - 1);
        for x in 0..w {
            let rx = x as isize - px;
            if rx < 0 || rx >= nw as isize {
                continue;
            }
            let fx = ((rx as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let nx = (((rx as f32 + 0.5) * sx) as usize).min(w - 1);
            lab[y * w + x] = label.data()[ny * w + nx];
            for ch in 0..c {
                let p = &image.data()[ch * hw..(ch + 1) * hw];
                let top = p[y0 * w + x0] * (1.0 - tx) + p[y0 * w + x1] * tx;
                let bot = p[y1 * w + x0] * (1.0 - tx) + p[y1 * w + x1] * tx;
                out[ch * hw + y * w + x] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    Ok((Tensor::new(&[c, h, w], out)?, LabelMap::new(h, w, lab)?))
}

/// Full pipeline on a lone image: rescale/crop, color jitter, blur.
pub fn augment<R: Rng + ?Sized>(
    image: &Tensor,
    rng: &mut R,
    params: &AugmentParams,
) -> Result<Tensor> {
    params.validate()?;
    let (_, h, w) = image.chw()?;
    let geo = sample_geometric(rng, params);
    let photo = sample_photometric(rng, params);
    let (img, _) = apply_geometric(image, &LabelMap::filled(h, w, 0), &geo)?;
    apply_photometric(&img, &photo)
}
