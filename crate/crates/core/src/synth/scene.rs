//! ShapesWorld scene layout and domain-styled rendering.

use rand::Rng;

use crate::domain_mix::{gaussian_blur, LabelMap};
use crate::error::{DtsError, Result};
use crate::kv::KvDoc;
use crate::numeric::Tensor;
use crate::rng::{stream, streams};

/// Base colors per class; class 0 is background.
pub const BASE_PALETTE: [[f32; 3]; 8] = [
    [0.45, 0.45, 0.45],
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.30],
    [0.25, 0.35, 0.85],
    [0.90, 0.80, 0.25],
    [0.70, 0.30, 0.80],
    [0.25, 0.80, 0.80],
    [0.95, 0.55, 0.15],
];

/// Visual style of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub palette: Vec<[f32; 3]>,
    /// Amplitude of a sinusoidal texture added to every pixel.
    pub texture_amp: f32,
    /// Hue rotation in turns, applied as a rotation about the gray axis.
    pub hue_shift: f32,
    pub noise_sigma: f32,
    pub blur_sigma: f32,
    /// Peak-to-peak strength of a linear illumination ramp.
    pub illumination: f32,
}

impl DomainSpec {
    pub fn source() -> Self {
        Self {
            palette: BASE_PALETTE.to_vec(),
            texture_amp: 0.0,
            hue_shift: 0.0,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            illumination: 0.15,
        }
    }

    pub fn target() -> Self {
        Self {
            texture_amp: 0.1,
            hue_shift: 0.15,
            noise_sigma: 0.05,
            ..Self::source()
        }
    }

    /// No texture, noise, blur or illumination: every region is flat.
    pub fn flat() -> Self {
        Self {
            illumination: 0.0,
            ..Self::source()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.palette.len() >= 2
            && self
                .palette
                .iter()
                .flatten()
                .all(|v| (0.0..=1.0).contains(v))
            && (0.0..=0.5).contains(&self.texture_amp)
            && (-1.0..=1.0).contains(&self.hue_shift)
            && (0.0..=0.5).contains(&self.noise_sigma)
            && (0.0..=3.0).contains(&self.blur_sigma)
            && (0.0..=1.0).contains(&self.illumination);
        if ok {
            Ok(())
        } else {
            Err(DtsError::Config(format!(
                "domain spec out of range: {self:?}"
            )))
        }
    }

    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        doc.set(&format!("{section}.texture_amp"), self.texture_amp);
        doc.set(&format!("{section}.hue_shift"), self.hue_shift);
        doc.set(&format!("{section}.noise_sigma"), self.noise_sigma);
        doc.set(&format!("{section}.blur_sigma"), self.blur_sigma);
        doc.set(&format!("{section}.illumination"), self.illumination);
    }

    /// Overrides fields present under `section` in `doc`.
    pub fn read_kv(mut self, doc: &KvDoc, section: &str) -> Result<Self> {
        let f = |k: &str| doc.get::<f32>(&format!("{section}.{k}"));
        if let Some(v) = f("texture_amp")? {
            self.texture_amp = v;
        }
        if let Some(v) = f("hue_shift")? {
            self.hue_shift = v;
        }
        if let Some(v) = f("noise_sigma")? {
            self.noise_sigma = v;
        }
        if let Some(v) = f("blur_sigma")? {
            self.blur_sigma = v;
        }
        if let Some(v) = f("illumination")? {
            self.illumination = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub const KV_KEYS: [&'static str; 5] = [
        "texture_amp",
        "hue_shift",
        "noise_sigma",
        "blur_sigma",
        "illumination",
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: Tensor,
    pub label: LabelMap,
    pub seed: u64,
    pub domain: Domain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Background plus 3-6 non-overlapping shapes.
    Shapes,
    /// Equal-width vertical stripes, one per class, in random order.
    Balanced,
}

fn check_size(h: usize, w: usize, c: usize) -> Result<()> {
    if h < 32 || w < 32 {
        return Err(DtsError::InvalidArgument(format!(
            "scene must be at least 32x32, got {h}x{w}"
        )));
    }
    if !(2..=8).contains(&c) {
        return Err(DtsError::InvalidArgument(format!(
            "class count {c} outside [2, 8]"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum ShapeKind {
    Rect,
    Disc,
    Triangle,
    Bar,
}

/// Label map of a shapes scene; depends only on `(seed, h, w, c)`.
pub fn shapes_layout(seed: u64, h: usize, w: usize, c: usize) -> Result<LabelMap> {
    check_size(h, w, c)?;
    let mut rng = stream(seed, &[streams::LAYOUT]);
    let mut label = LabelMap::filled(h, w, 0);
    let short = h.min(w) as f32;
    let n_shapes = rng.gen_range(3..=6);
    let mut boxes: Vec<(isize, isize, isize, isize)> = Vec::new();
    for _ in 0..n_shapes {
        let class = rng.gen_range(1..c) as u8;
        let kind = match rng.gen_range(0..4) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Disc,
            2 => ShapeKind::Triangle,
            _ => ShapeKind::Bar,
        };
        let size = (rng.gen_range(0.1..0.4) * short).round().max(4.0) as isize;
        let (bh, bw) = match kind {
            ShapeKind::Rect => (
                ((size as f32) * rng.gen_range(0.6..1.0)).round() as isize,
                size,
            ),
            ShapeKind::Disc | ShapeKind::Triangle => (size, size),
            ShapeKind::Bar => {
                let thick = (size / 3).max(3);
                if rng.gen_bool(0.5) {
                    (thick, size)
                } else {
                    (size, thick)
                }
            }
        };
        let flip = rng.gen_bool(0.5);
        // rejection-sample a position whose box (plus a 1px margin) is free
        let mut placed = None;
        for _ in 0..50 {
            let y0 = rng.gen_range(0..=(h as isize - bh));
            let x0 = rng.gen_range(0..=(w as isize - bw));
            let clash = boxes.iter().any(|&(by, bx, eh, ew)| {
                y0 <= by + eh && by <= y0 + bh && x0 <= bx + ew && bx <= x0 + bw
            });
            if !clash {
                placed = Some((y0, x0));
                break;
            }
        }
        let Some((y0, x0)) = placed else { continue };
        boxes.push((y0, x0, bh, bw));
        for dy in 0..bh {
            for dx in 0..bw {
                let inside = match kind {
                    ShapeKind::Rect | ShapeKind::Bar => true,
                    ShapeKind::Disc => {
                        let r = bh as f32 / 2.0;
                        let (cy, cx) = (dy as f32 + 0.5 - r, dx as f32 + 0.5 - r);
                        cy * cy + cx * cx <= r * r
                    }
                    ShapeKind::Triangle => {
                        let row = if flip { bh - 1 - dy } else { dy };
                        let half = (row as f32 + 1.0) / bh as f32 * bw as f32 / 2.0;
                        (dx as f32 + 0.5 - bw as f32 / 2.0).abs() <= half
                    }
                };
                if inside {
                    label.data_mut()[(y0 + dy) as usize * w + (x0 + dx) as usize] = class;
                }
            }
        }
    }
    Ok(label)
}

/// Vertical stripes of equal width, one per class.
pub fn balanced_layout(seed: u64, h: usize, w: usize, c: usize) -> Result<LabelMap> {
    check_size(h, w, c)?;
    if !w.is_multiple_of(c) {
        return Err(DtsError::InvalidArgument(format!(
            "balanced layout needs width {w} divisible by {c}"
        )));
    }
    let mut rng = stream(seed, &[streams::LAYOUT]);
    let mut order: Vec<u8> = (0..c as u8).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let stripe = w / c;
    let data = (0..h * w).map(|p| order[(p % w) / stripe]).collect();
    LabelMap::new(h, w, data)
}

fn hue_rotation(turns: f32) -> [[f32; 3]; 3] {
    // Rodrigues rotation about (1,1,1)/sqrt(3)
    let th = turns * std::f32::consts::TAU;
    let (s, c) = th.sin_cos();
    let k = (1.0 - c) / 3.0;
    let r = s / 3f32.sqrt();
    [
        [c + k, k - r, k + r],
        [k + r, c + k, k - r],
        [k - r, k + r, c + k],
    ]
}

/// Styles a label map into an image in `[0, 1]`.
pub fn render(label: &LabelMap, spec: &DomainSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let (h, w) = (label.height(), label.width());
    let mut rng = stream(seed, &[streams::STYLE]);
    let rot = hue_rotation(spec.hue_shift);
    let colors: Vec<[f32; 3]> = spec
        .palette
        .iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for (i, o) in out.iter_mut().enumerate() {
                *o = (rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2]).clamp(0.0, 1.0);
            }
            out
        })
        .collect();
    // style draws are taken unconditionally so the stream layout is spec-independent
    let dir: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let freq: f32 = rng.gen_range(0.3..0.9);
    let tex_dir: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = dir.sin_cos();
    let (ty, tx) = tex_dir.sin_cos();
    let hw = h * w;
    let mut data = vec![0.0f32; 3 * hw];
    let normal = rand_distr::Normal::new(0.0f32, 1.0).expect("unit normal");
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let class = label.data()[p];
            let base = colors.get(class as usize).copied().unwrap_or([0.0; 3]);
            let (ny, nx) = (y as f32 / h as f32 - 0.5, x as f32 / w as f32 - 0.5);
            let illum = 1.0 + spec.illumination * (ny * dy + nx * dx);
            let tex = spec.texture_amp * (freq * (y as f32 * ty + x as f32 * tx) + phase).sin();
            for ch in 0..3 {
                let noise: f32 = rand_distr::Distribution::sample(&normal, &mut rng);
                data[ch * hw + p] =
                    (base[ch] * illum + tex + spec.noise_sigma * noise).clamp(0.0, 1.0);
            }
        }
    }
    let img = Tensor::new(&[3, h, w], data)?;
    if spec.blur_sigma > 0.0 {
        gaussian_blur(&img, spec.blur_sigma)
    } else {
        Ok(img)
    }
}

pub fn generate_scene(
    seed: u64,
    spec: &DomainSpec,
    h: usize,
    w: usize,
    c: usize,
) -> Result<SceneSample> {
    generate_with_layout(seed, spec, h, w, c, Layout::Shapes, Domain::Source)
}

pub fn generate_with_layout(
    seed: u64,
    spec: &DomainSpec,
    h: usize,
    w: usize,
    c: usize,
    layout: Layout,
    domain: Domain,
) -> Result<SceneSample> {
    if spec.palette.len() < c {
        return Err(DtsError::InvalidArgument(format!(
            "palette has {} colors for {c} classes",
            spec.palette.len()
        )));
    }
    let label = match layout {
        Layout::Shapes => shapes_layout(seed, h, w, c)?,
        Layout::Balanced => balanced_layout(seed, h, w, c)?,
    };
    let image = render(&label, spec, seed)?;
    Ok(SceneSample {
        image,
        label,
        seed,
        domain,
    })
}

/// Fraction of images containing each class.
pub fn class_frequency<'a>(
    labels: impl IntoIterator<Item = &'a LabelMap>,
    num_classes: usize,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; num_classes];
    let mut n = 0usize;
    for l in labels {
        n += 1;
        for c in l.classes_present() {
            if (c as usize) < num_classes {
                counts[c as usize] += 1;
            }
        }
    }
    if n == 0 {
        return Err(DtsError::InvalidArgument(
            "class frequency of an empty dataset".into(),
        ));
    }
    Ok(counts.into_iter().map(|k| k as f64 / n as f64).collect())
}
