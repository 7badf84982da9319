//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every minibatch. Parameters live in a
//! [`ParamStore`] and are copied onto the tape as leaves with
//! [`Tape::param`]; [`Tape::backward`] returns per-parameter gradients.
//!
//! ```
//! use mtlb_autodiff::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let y = tape.sum(wv);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.param(w).unwrap().data(), &[1.0; 4]);
//! ```

mod error;
pub mod gradcheck;
mod loss;
mod ops;
mod param;
mod rnn;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use ops::LAYER_NORM_EPS;
pub use param::{ParamId, ParamStore, Parameter, CHECKPOINT_MAGIC};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
