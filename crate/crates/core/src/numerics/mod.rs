//! Differentiable numerics core: tensors, the reverse-mode tape, seeded
//! randomness, parameter sets and the finite-difference oracle.

pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use params::{ParamId, ParamSet};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
