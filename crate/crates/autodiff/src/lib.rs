//! Reverse-mode differentiation for small dense models.
//!
//! Values are 2-D row-major [`Mat`]s; a sequence of frames is a `frames x
//! channels` matrix and a vector is a single row. Computations are recorded
//! on a [`Tape`] and differentiated with [`Tape::backward`].
//!
//! ```
//! use stylefusion_autodiff::{Mat, Tape};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Mat::row_vector(vec![3.0]));
//! let y = (x * x).sum();
//! let grads = tape.backward(y);
//! assert_eq!(y.scalar(), 9.0);
//! assert_eq!(grads.wrt(x).unwrap().data()[0], 6.0);
//! ```

pub mod check;
mod error;
mod mat;
mod optim;
mod params;
mod scalar;
mod tape;

pub use error::{Error, Result};
pub use mat::Mat;
pub use optim::{accumulate, Adam};
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
