//! Tensors, reverse-mode differentiation and Transformer layers.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use gradcheck::{
    analytic_gradient, check_graph, check_graph_where, finite_difference_check, finite_difference_check_where,
    relative_error, GradcheckReport,
};
pub use graph::{Graph, Var};
pub use params::{GradBuffer, Gradients, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;
