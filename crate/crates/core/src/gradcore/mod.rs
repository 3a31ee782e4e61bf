//! Dense tensors with reverse-mode differentiation for the primitives the
//! document model needs, plus AdamW and the warmup schedule.

mod check;
mod optim;
mod tape;
mod tensor;

pub use check::{check_gradients, GradCheckReport};
pub use optim::{adam_step, learning_rate, AdamConfig, AdamState, OptimConfig, Optimizer, Schedule};
pub use tape::{masked_softmax, Activation, Tape, Var};
pub use tensor::{ParamStore, Tensor, TensorError};
