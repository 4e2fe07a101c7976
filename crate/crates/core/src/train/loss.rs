use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean over the batch of squared Euclidean errors, `(1/N) Σ ‖ŷ_i − y_i‖²`.
/// Inputs are row-major `[N][dim]`.
pub fn mse_loss<S: Scalar>(pred: &[S], labels: &[S], dim: usize) -> Result<S> {
    mse_loss_and_grad(pred, labels, dim).map(|(l, _)| l)
}

/// Loss together with its gradient with respect to `pred`.
pub fn mse_loss_and_grad<S: Scalar>(pred: &[S], labels: &[S], dim: usize) -> Result<(S, Vec<S>)> {
    if pred.len() != labels.len() || dim == 0 || !pred.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "prediction/label shapes differ: {} vs {} values (dim {dim})",
            pred.len(),
            labels.len()
        )));
    }
    let n = pred.len() / dim;
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let inv_n = S::lit(1.0 / n as f64);
    let two = S::lit(2.0);
    let mut loss = S::zero();
    let grad = pred
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let d = p - y;
            loss += d * d;
            two * d * inv_n
        })
        .collect();
    Ok((loss * inv_n, grad))
}
