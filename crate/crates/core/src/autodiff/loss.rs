use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-sample Gaussian NLL summed over dimensions, shape `[n, 1]`.
pub fn gaussian_nll_rows(g: &mut Graph, mean: NodeId, logvar: NodeId, target: NodeId) -> Result<NodeId> {
    let diff = g.sub(target, mean)?;
    let sq = g.square(diff);
    let neg = g.scale(logvar, -1.0);
    let inv_var = g.exp(neg);
    let scaled = g.mul(sq, inv_var)?;
    let s = g.add(logvar, scaled)?;
    let s = g.add_scalar(s, LN_2PI);
    let s = g.scale(s, 0.5);
    Ok(g.sum_cols(s))
}

/// Gaussian NLL summed over dimensions and averaged over the batch.
pub fn gaussian_nll(g: &mut Graph, mean: NodeId, logvar: NodeId, target: NodeId) -> Result<NodeId> {
    let rows = gaussian_nll_rows(g, mean, logvar, target)?;
    Ok(g.mean(rows))
}

/// Direct evaluation of [`gaussian_nll`] without recording a graph.
pub fn gaussian_nll_value(mean: &Tensor, logvar: &Tensor, target: &Tensor) -> Result<f64> {
    if !mean.same_shape(logvar) || !mean.same_shape(target) {
        return Err(Error::shape(
            "gaussian_nll",
            format!(
                "mean {:?}, logvar {:?}, target {:?}",
                mean.shape(),
                logvar.shape(),
                target.shape()
            ),
        ));
    }
    let total: f64 = mean
        .values()
        .iter()
        .zip(logvar.values())
        .zip(target.values())
        .map(|((&m, &lv), &t)| 0.5 * (LN_2PI + lv + (t - m) * (t - m) * (-lv).exp()))
        .sum();
    Ok(total / mean.rows() as f64)
}

/// Mean squared error averaged over all elements.
pub fn mse(g: &mut Graph, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}
