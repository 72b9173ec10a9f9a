use super::{NnError, Scalar, Tensor};

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    logits.expect_rank(2)?;
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy against soft targets and its gradient w.r.t. logits.
///
/// `loss = -(1/B) * sum_b sum_k y[b,k] * log softmax(z)[b,k]`, evaluated via
/// log-sum-exp; `grad = (softmax(z) - y) / B` (targets are assumed to sum
/// to one per row).
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    logits.expect_rank(2)?;
    if targets.shape() != logits.shape() {
        return Err(NnError::ShapeMismatch {
            expected: logits.shape().to_vec(),
            found: targets.shape().to_vec(),
        });
    }
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(logits.shape());
    for ((z, y), g) in logits
        .data()
        .chunks_exact(c)
        .zip(targets.data().chunks_exact(c))
        .zip(grad.data_mut().chunks_exact_mut(c))
    {
        let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let lse = max + z.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        for k in 0..c {
            let log_p = z[k].as_f64() - lse;
            let yk = y[k].as_f64();
            if yk != 0.0 {
                loss -= yk * log_p;
            }
            g[k] = T::from_f64((log_p.exp() - yk) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}
