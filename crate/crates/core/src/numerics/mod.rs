//! Minimal differentiable numerics: dense `f64` tensors, a reverse-mode tape,
//! deterministic splittable RNG streams, Adam, and a finite-difference
//! gradient checker. Everything above this layer is built from these pieces.

pub mod gradcheck;
pub mod optim;
pub mod param;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::Adam;
pub use param::{GradAccum, ParamId, ParamStore, Parameter};
pub use rng::RngStream;
pub use tape::{AttnMask, MaskBits, NodeId, Tape, MASK_PENALTY};
pub use tensor::{layernorm, matmul, softmax, squared_l2, Tensor};
