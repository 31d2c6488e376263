//! Minimal dense-tensor numeric core: taped primitives, reverse-mode
//! differentiation, and a finite-difference oracle.

pub mod gradcheck;
pub mod store;
pub mod tape;
pub mod tensor;

pub use gradcheck::{
    finite_difference_check, relative_error, GradCheckReport, ParamCheck, DEFAULT_EPS,
    DEFAULT_SAMPLE_CAP,
};
pub use store::ParameterStore;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
