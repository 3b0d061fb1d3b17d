//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The engine covers exactly what a small attention planner needs: matrix
//! products, bias rows, GELU, row softmax, layer normalization, slicing and
//! concatenation, cross-entropy and log-sigmoid. Everything is 64-bit.
//!
//! ```
//! use std::sync::Arc;
//! use tisa_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Arc::new(Tensor::row_vector(vec![1.0, 2.0])));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod nn;
mod tape;
pub mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
