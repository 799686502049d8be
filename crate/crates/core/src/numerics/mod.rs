//! Dense matrices, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use tape::{EdgeIndex, Gradients, Tape, Var};
pub use tensor::{argmax, log_sum_exp, relu, sigmoid, softmax, Tensor};

/// Central-difference gradient of `loss` at `params`, one tensor per parameter.
pub fn finite_diff_grad<F>(mut loss: F, params: &[Tensor], eps: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let shape = params[i].shape().to_vec();
        let base = params[i].data().to_vec();
        let mut grad = vec![0.0; base.len()];
        for j in 0..base.len() {
            let mut bumped = base.clone();
            bumped[j] = base[j] + eps;
            work[i] = Tensor::from_parts(shape.clone(), bumped.clone());
            let up = loss(&work);
            bumped[j] = base[j] - eps;
            work[i] = Tensor::from_parts(shape.clone(), bumped);
            let down = loss(&work);
            grad[j] = (up - down) / (2.0 * eps);
        }
        work[i] = params[i].clone();
        out.push(Tensor::from_parts(shape, grad));
    }
    out
}

/// `|a − b| / max(|a|, |b|, 1)`: relative for large magnitudes, absolute
/// near zero where central differences carry O(eps²) noise.
pub fn gradient_relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
