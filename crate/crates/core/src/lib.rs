//! Dual teacher-student self-training for unsupervised domain adaptation in
//! semantic segmentation, on a small CPU-only stack: a reverse-mode autodiff
//! engine, a tiny conv segmentation net, ClassMix-style domain mixing, a
//! procedural two-domain benchmark and the training loop that ties them
//! together.

mod binio;
pub mod domain_mix;
mod error;
pub mod eval;
pub mod kv;
pub mod numeric;
pub mod rng;
pub mod segmodel;
pub mod synth;
pub mod trainer;

pub use domain_mix::{DomainTag, LabelMap, MixMask, MixedSample, PseudoLabel};
pub use error::{DtsError, Result};
pub use numeric::{Gradients, Tape, Tensor, Var};
pub use segmodel::{Arch, ModelGroup, SegNet};
pub use trainer::{DataCombination, RoutingPolicy, TrainerConfig};
