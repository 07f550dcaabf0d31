//! Minimal tape-based reverse-mode automatic differentiation over dense
//! `f64` arrays.
//!
//! Values are recorded on a [`Tape`] as primitives are applied; a single
//! [`Tape::backward`] call then sweeps the tape in reverse and returns the
//! vector–Jacobian products for every leaf that requires gradients.
//!
//! There is no implicit broadcasting. The only mixed-shape primitives are
//! [`Tape::scale`] (scalar times tensor), [`Tape::add_row`] (a bias vector
//! added to each last-axis row) and the shared right operand of
//! [`Tape::matmul`].

mod tape;
mod tensor;

pub use tape::{sigmoid, Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
pub use tensor::gemm;
