mod checkpoint;
pub mod layers;
mod network;
mod spec;

pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT};
pub use network::{ConvBlock, Grads, ModelState, TrainCache};
pub use spec::{ConvLayer, ModelSpec, Normalize, Preset};
