//! Dense `f64` tensors with a define-by-run reverse-mode tape.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_with, relative_error, GradcheckEntry, GradcheckReport, RELATIVE_ERROR_FLOOR};
pub use params::{Bindings, ParamSet};
pub use tape::{Tape, Var, L2NORM_EPS};
pub use tensor::Tensor;
