//! Reverse-mode automatic differentiation over dense `f64` tensors, with the
//! MLPs, losses and optimizer the learners are built from.

mod adam;
mod graph;
mod loss;
mod mlp;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, NodeId};
pub use loss::{gaussian_nll, gaussian_nll_rows, gaussian_nll_value, mse, LN_2PI};
pub use mlp::soft_clamp;
pub use mlp::{Activation, BoundMlp, Dense, GaussianHead, MlpOut, MlpParams, MlpPrediction, FORMAT_VERSION};
pub use tensor::{sigmoid, softplus, Tensor};

/// Runs `params` on `input` in `graph`, recording every intermediate node.
pub fn forward_mlp(params: &MlpParams, input: &Tensor, graph: &mut Graph) -> crate::Result<(BoundMlp, MlpOut)> {
    if input.cols() != params.input_dim() {
        return Err(crate::Error::Shape {
            op: "forward_mlp",
            detail: format!(
                "input width {} but network expects {}",
                input.cols(),
                params.input_dim()
            ),
        });
    }
    let x = graph.input(input.clone())?;
    params.forward(graph, x)
}
