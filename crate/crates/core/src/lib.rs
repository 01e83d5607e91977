//! Joint inference of nodal physics, coupling physics and a sparse directed
//! adjacency matrix from node time series, using a universal differential
//! equation trained by differentiating through an RK4 solver.
//!
//! * [`autodiff`]: reverse-mode tape over dense tensors
//! * [`dynamics`]: ground-truth oscillator and Kuramoto generators, RK4
//! * [`model`]: the surrogate right-hand side and its learnable adjacency
//! * [`training`]: windowed data, sparsity-regularised loss, Adam, sweeps
//! * [`evaluation`]: open-loop rollouts and transfer to new networks
//! * [`io`]: CSV / JSON artifact formats

pub mod autodiff;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
