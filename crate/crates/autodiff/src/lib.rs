//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! Values live in a [`Graph`]; every operation on a node that requires a
//! gradient is recorded on the graph's tape, and [`Graph::backward`] replays
//! the tape in reverse. The op set is exactly what the force-estimation
//! networks need: 1D/2D convolution, dense layers, gate activations,
//! elementwise arithmetic, pooling and an MSE loss.
//!
//! ```
//! use octforce_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum(y);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

pub mod check;
mod error;
mod graph;
pub mod kernels;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{sigmoid, Graph, Var};
pub use kernels::Padding;
pub use tensor::Tensor;
