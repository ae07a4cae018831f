//! Dense tensors, a define-by-run computation graph and reverse-mode
//! differentiation.

mod gradcheck;
mod graph;
mod params;
mod scope;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, GradMismatch};
pub use graph::{BackwardFn, Graph, NodeId};
pub use params::{Gradients, Init, OptimizerSlot, ParamEntry, ParamId, ParameterStore};
pub use scope::ParamScope;
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
