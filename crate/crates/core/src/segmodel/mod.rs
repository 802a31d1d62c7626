//! Segmentation network, teacher/student groups and checkpoints.

mod checkpoint;
mod group;
mod net;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use group::{ema_update, init_group, ModelGroup};
pub use net::{Arch, SegNet};
