// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod linalg;
pub mod mesh;
pub mod objective;
pub mod optimizer;
pub mod sensitivity;
pub mod timegrid;

pub use error::{Error, Result};
