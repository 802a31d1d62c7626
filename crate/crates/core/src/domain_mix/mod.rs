//! ClassMix masks, image and label mixing, pseudo labels with confidence
//! weighting, and augmentation.

mod augment;
mod classmix;
mod label;
mod pseudo;

pub use augment::{
    apply_geometric, apply_photometric, augment, gaussian_blur, sample_geometric,
    sample_photometric, AugmentParams, GeometricDraw, PhotometricDraw,
};
pub use classmix::{classmix_mask, mix, mix_labels, DomainTag, MixMask, MixedSample};
pub use label::LabelMap;
pub use pseudo::{choose_tt_mask_source, pseudo_label, pseudo_label_masked, PseudoLabel};
