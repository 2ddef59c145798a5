//! A small reverse-mode tensor engine with the layers and optimizer used by
//! the upsampling network.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{clip_grad_norm, Adam};
pub use tape::{Grads, NnError, Tape, Var};
pub use tensor::{ParamId, ParamStore, Real, Tensor};
