//! From-scratch numerics: tensors, an eager reverse-mode tape, Adam, and
//! finite-difference gradient checking. Everything is `f32` row-major;
//! determinism comes from fixed loop orders and zero hidden state.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{collect_grads, gradient_check, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Var};
pub use tensor::{ParamGroup, ParameterStore, Tensor};
