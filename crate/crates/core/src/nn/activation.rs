use rand::Rng;

use super::{Mode, NnError, Scalar, Tensor};

/// `max(0, x)`. The derivative at exactly 0 is taken as 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    active: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { active: None }
    }

    pub fn forward<T: Scalar>(&mut self, mut x: Tensor<T>, keep_cache: bool) -> Tensor<T> {
        let zero = T::zero();
        if keep_cache {
            let mut active = Vec::with_capacity(x.len());
            active.extend(x.data_mut().iter_mut().map(|v| {
                let on = *v > zero;
                *v = if on { *v } else { zero };
                on
            }));
            self.active = Some(active);
        } else {
            x.data_mut()
                .iter_mut()
                .for_each(|v| *v = if *v > zero { *v } else { zero });
            self.active = None;
        }
        x
    }

    pub fn backward<T: Scalar>(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let active = self.active.take().ok_or(NnError::NoForwardCache("relu"))?;
        if active.len() != grad_out.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![active.len()],
                found: grad_out.shape().to_vec(),
            });
        }
        let zero = T::zero();
        for (g, on) in grad_out.data_mut().iter_mut().zip(active) {
            *g = if on { *g } else { zero };
        }
        Ok(grad_out)
    }

    pub fn clear_cache(&mut self) {
        self.active = None;
    }
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `output` is the forward result; positive entries pass the gradient.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if grad_out.shape() != output.shape() {
        return Err(NnError::ShapeMismatch {
            expected: output.shape().to_vec(),
            found: grad_out.shape().to_vec(),
        });
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` during
/// training so evaluation is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout { rate, mask: None }
    }

    /// Draws a fresh keep mask, already scaled by `1 / (1 - rate)`.
    pub fn sample_mask<R: Rng>(&self, len: usize, rng: &mut R) -> Vec<T> {
        let scale = T::from_f64(1.0 / (1.0 - self.rate));
        (0..len)
            .map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { scale })
            .collect()
    }

    pub fn forward<R: Rng>(&mut self, mut x: Tensor<T>, mode: Mode, rng: &mut R) -> Tensor<T> {
        match mode {
            Mode::Eval => {
                self.mask = None;
                x
            }
            Mode::Train => {
                let mask = self.sample_mask(x.len(), rng);
                x.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
                self.mask = Some(mask);
                x
            }
        }
    }

    pub fn backward(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask = self.mask.take().ok_or(NnError::NoForwardCache("dropout"))?;
        if mask.len() != grad_out.len() {
            return Err(NnError::ShapeMismatch {
                expected: vec![mask.len()],
                found: grad_out.shape().to_vec(),
            });
        }
        grad_out.data_mut().iter_mut().zip(&mask).for_each(|(g, &m)| *g *= m);
        Ok(grad_out)
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Elementwise product with a pre-scaled mask; also the backward map, since
/// the layer is linear in its input for a fixed mask.
pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Tensor::from_vec(x.shape(), data).expect("mask length matches input")
}
