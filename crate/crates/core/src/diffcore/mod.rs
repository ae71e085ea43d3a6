//! Minimal dense/convolutional tensor engine with reverse-mode
//! differentiation.
//!
//! Values are stored as row-major `f32`; reductions accumulate in `f64`.
//! A [`Graph`] is a topologically ordered DAG of operation records over a
//! parameter registry. [`Graph::forward`] produces a [`Trace`] holding every
//! intermediate activation; [`Trace::backward`] walks the records in reverse
//! and returns gradients for all parameters and, when requested, the input.
//!
//! Graphs are immutable outside an explicit training step, so they can be
//! shared read-only across workers; each worker owns its own traces.

mod adam;
mod graph;
mod linalg;
mod loss;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use graph::{Gradients, Graph, GraphBuilder, NodeId, OpKind, ParamId, Parameter, Trace};
pub use linalg::{col2im, im2col, matmul, Conv2dGeom};
pub use loss::{sigmoid, LossHead, Reduction};
pub use tensor::Tensor;
