//! Dense tensors, the activation bank and reverse-mode gradients.

pub mod activation;
pub mod tape;
pub mod tensor;

pub use activation::{Activation, ActivationBank};
pub use tape::{ParamKey, Tape, Var};
pub use tensor::{dot, softmax, Tensor};
