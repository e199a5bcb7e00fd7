//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar sweeps the record in reverse and returns
//! the gradient of that scalar with respect to every leaf. Fused kernels
//! plug in through [`CustomOp`].
//!
//! ```
//! use ibgs_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let a = tape.leaf(Tensor::scalar(2.0));
//! let b = tape.leaf(Tensor::scalar(3.0));
//! let c = a.mul(b).unwrap();
//! let grads = tape.backward(c).unwrap();
//! assert_eq!(grads.get(a).unwrap().item(), 3.0);
//! assert_eq!(grads.get(b).unwrap().item(), 2.0);
//! ```

mod check;
mod error;
mod linalg;
mod ops;
mod tape;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_at, relative_error, FdReport, REL_EPS};
pub use error::{AdError, Result};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::{broadcast_shapes, Tensor};
