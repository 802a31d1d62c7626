use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::combination::DataCombination;
use crate::domain_mix::{
    apply_geometric, apply_photometric, choose_tt_mask_source, classmix_mask, mix, mix_labels,
    sample_geometric, sample_photometric, AugmentParams, DomainTag, LabelMap, MixedSample,
    PseudoLabel,
};
use crate::error::{DtsError, Result};
use crate::numeric::Tensor;

/// Endless shuffled index stream over `0..len`, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(len: usize, rng: ChaCha8Rng) -> Result<Self> {
        if len == 0 {
            return Err(DtsError::InvalidArgument(
                "cannot sample from an empty dataset".into(),
            ));
        }
        let mut s = Self {
            order: (0..len).collect(),
            pos: 0,
            epoch: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Augmentation switches for one batch.
#[derive(Clone, Debug, Default)]
pub struct BatchAugment {
    /// Rescale-and-crop applied to raw images before the teacher sees them.
    pub weak: Option<AugmentParams>,
    /// Color jitter and blur applied to mixed samples.
    pub strong: Option<AugmentParams>,
}

/// A target image as the teacher saw it.
#[derive(Clone, Debug)]
pub struct TargetView {
    pub image: Tensor,
    /// `false` on padding introduced by the weak augmentation.
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct AssembledBatch {
    pub samples: Vec<MixedSample>,
    /// Target images in slot order.
    pub targets: Vec<TargetView>,
    /// Pseudo label of each target slot.
    pub pseudo: Vec<PseudoLabel>,
}

impl AssembledBatch {
    /// Share of training pixels that come from target images.
    pub fn target_fraction(&self) -> f64 {
        let total: usize = self.samples.iter().map(|s| s.label.len()).sum();
        let target: usize = self.samples.iter().map(|s| s.target_pixels).sum();
        target as f64 / total as f64
    }

    pub fn mean_gamma(&self) -> Option<f32> {
        (!self.pseudo.is_empty())
            .then(|| self.pseudo.iter().map(|p| p.gamma).sum::<f32>() / self.pseudo.len() as f32)
    }
}

/// Builds one batch for `combination`.
///
/// Draws `counts.source_images()` source and `counts.target_images()` target
/// images, weakly augments them, asks `teacher(slot, view)` for a pseudo
/// label of every target slot, then builds in order: pure-S samples,
/// ⟨S,T⟩ samples (mask from the source ground truth) and ⟨T,T⟩ samples
/// (mask from whichever of the two pseudo labels has the higher γ). Mixed
/// samples are then strongly augmented.
///
/// Target slots are numbered in consumption order: one per ⟨S,T⟩ sample,
/// then two per ⟨T,T⟩ sample.
pub fn assemble_batch<R: Rng + ?Sized>(
    combination: &DataCombination,
    k: usize,
    source: &mut dyn FnMut() -> (Tensor, LabelMap),
    target: &mut dyn FnMut() -> Tensor,
    teacher: &mut dyn FnMut(usize, &TargetView) -> Result<PseudoLabel>,
    rng: &mut R,
    aug: &BatchAugment,
) -> Result<AssembledBatch> {
    let counts = combination.counts(k);
    let mut sources = Vec::with_capacity(counts.source_images());
    for _ in 0..counts.source_images() {
        let (image, label) = source();
        sources.push(match &aug.weak {
            Some(p) => apply_geometric(&image, &label, &sample_geometric(rng, p))?,
            None => (image, label),
        });
    }
    let mut targets = Vec::with_capacity(counts.target_images());
    for _ in 0..counts.target_images() {
        let image = target();
        let (_, h, w) = image.chw()?;
        let view = match &aug.weak {
            Some(p) => {
                let (img, lab) = apply_geometric(
                    &image,
                    &LabelMap::filled(h, w, 0),
                    &sample_geometric(rng, p),
                )?;
                let valid = lab.data().iter().map(|&v| v != LabelMap::IGNORE).collect();
                TargetView { image: img, valid }
            }
            None => TargetView {
                image,
                valid: vec![true; h * w],
            },
        };
        targets.push(view);
    }
    let pseudo = targets
        .iter()
        .enumerate()
        .map(|(slot, view)| teacher(slot, view))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::with_capacity(counts.total());
    for (image, label) in &sources[..counts.s] {
        samples.push(MixedSample {
            image: image.clone(),
            pixel_weight: vec![1.0; label.len()],
            label: label.clone(),
            provenance: DomainTag::S,
            target_pixels: 0,
        });
    }
    for i in 0..counts.st {
        let (simg, slab) = &sources[counts.s + i];
        let (tview, pl) = (&targets[i], &pseudo[i]);
        let mask = classmix_mask(slab, rng)?;
        let image = mix(simg, &tview.image, &mask)?;
        let (label, pixel_weight) = mix_labels(
            slab,
            &pl.labels,
            &vec![1.0; slab.len()],
            &vec![pl.gamma; pl.labels.len()],
            &mask,
        )?;
        samples.push(MixedSample {
            image,
            label,
            pixel_weight,
            provenance: DomainTag::ST,
            target_pixels: mask.bits().len() - mask.count_ones(),
        });
    }
    for j in 0..counts.tt {
        let (a, b) = (counts.st + 2 * j, counts.st + 2 * j + 1);
        let (first, second) = if choose_tt_mask_source(&pseudo[a], &pseudo[b]) == 0 {
            (a, b)
        } else {
            (b, a)
        };
        let (p1, p2) = (&pseudo[first], &pseudo[second]);
        let mask = classmix_mask(&p1.labels, rng)?;
        let image = mix(&targets[first].image, &targets[second].image, &mask)?;
        let (label, pixel_weight) = mix_labels(
            &p1.labels,
            &p2.labels,
            &vec![p1.gamma; p1.labels.len()],
            &vec![p2.gamma; p2.labels.len()],
            &mask,
        )?;
        samples.push(MixedSample {
            target_pixels: label.len(),
            image,
            label,
            pixel_weight,
            provenance: DomainTag::TT,
        });
    }
    if let Some(p) = &aug.strong {
        for s in samples.iter_mut().filter(|s| s.provenance != DomainTag::S) {
            s.image = apply_photometric(&s.image, &sample_photometric(rng, p))?;
        }
    }
    Ok(AssembledBatch {
        samples,
        targets,
        pseudo,
    })
}
