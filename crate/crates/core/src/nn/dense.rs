use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::matmul;
use super::{Grads, NnError, Scalar, Tensor};

/// Fully connected layer `y = x W + b`.
///
/// Any input of rank > 2 is flattened per batch item in its stored
/// (row-major) order, so an `(h, w, c)` feature map flattens band-major,
/// frame-middle, channel-minor.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `(inputs, outputs)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
            grad_weight: Tensor::zeros(&[inputs, outputs]),
            grad_bias: Tensor::zeros(&[outputs]),
            input: None,
        }
    }

    pub fn init_gaussian<R: Rng>(&mut self, std: f64, rng: &mut R) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in self.weight.data_mut() {
            *w = T::from_f64(normal.sample(rng));
        }
        self.bias.data_mut().fill(T::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&mut self, x: Tensor<T>, keep_cache: bool) -> Result<Tensor<T>, NnError> {
        let y = dense_forward(&x, &self.weight, &self.bias)?;
        self.input = keep_cache.then_some(x);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForwardCache("dense"))?;
        let (gx, gw, gb) = dense_backward(&grad_out, &x, &self.weight)?;
        for (a, b) in self.grad_weight.data_mut().iter_mut().zip(gw.data()) {
            *a += *b;
        }
        for (a, b) in self.grad_bias.data_mut().iter_mut().zip(gb.data()) {
            *a += *b;
        }
        Ok(gx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    w.expect_rank(2)?;
    let (fin, fout) = (w.shape()[0], w.shape()[1]);
    if x.item_len() != fin || b.shape() != [fout] {
        return Err(NnError::ShapeMismatch {
            expected: vec![x.batch(), fin],
            found: x.shape().to_vec(),
        });
    }
    let n = x.batch();
    let mut y = Tensor::zeros(&[n, fout]);
    for row in y.data_mut().chunks_exact_mut(fout) {
        row.copy_from_slice(b.data());
    }
    matmul(n, fin, fout, x.data(), false, w.data(), false, y.data_mut(), true);
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`; `grad_x` has the shape of `x`.
pub fn dense_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> Result<Grads<T>, NnError> {
    let (fin, fout) = (w.shape()[0], w.shape()[1]);
    let n = x.batch();
    if grad_out.shape() != [n, fout] {
        return Err(NnError::ShapeMismatch {
            expected: vec![n, fout],
            found: grad_out.shape().to_vec(),
        });
    }
    let mut gw = Tensor::zeros(&[fin, fout]);
    matmul(
        fin,
        n,
        fout,
        x.data(),
        true,
        grad_out.data(),
        false,
        gw.data_mut(),
        false,
    );
    let mut gb = Tensor::zeros(&[fout]);
    for row in grad_out.data().chunks_exact(fout) {
        for (acc, v) in gb.data_mut().iter_mut().zip(row) {
            *acc += *v;
        }
    }
    let mut gx = Tensor::zeros(x.shape());
    matmul(
        n,
        fout,
        fin,
        grad_out.data(),
        false,
        w.data(),
        true,
        gx.data_mut(),
        false,
    );
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_map() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let w = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[4.5, 4.5, 0.5, 0.5]);
    }

    #[test]
    fn flattens_feature_maps() {
        let x = Tensor::<f64>::zeros(&[2, 2, 3, 4]);
        let w = Tensor::zeros(&[24, 5]);
        let b = Tensor::full(&[5], 1.0);
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 5]);
        let (gx, _, _) = dense_backward(&y, &x, &w).unwrap();
        assert_eq!(gx.shape(), x.shape());
    }

    #[test]
    fn rejects_wrong_width() {
        let x = Tensor::<f64>::zeros(&[2, 4]);
        let w = Tensor::zeros(&[3, 2]);
        assert!(dense_forward(&x, &w, &Tensor::zeros(&[2])).is_err());
    }
}
