//! Dense tensors with reverse-mode differentiation, batch-normalized
//! feedforward networks, Adam and the patience learning-rate schedule.

mod adam;
mod checkpoint;
mod net;
mod schedule;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{NetCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use net::{Architecture, FeedforwardNet, ForwardTrace, Mode};
pub use schedule::LrSchedule;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
