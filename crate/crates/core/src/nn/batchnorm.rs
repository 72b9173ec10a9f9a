use super::{Mode, NnError, Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel batch normalization; the channel is the last axis and the
/// statistics run over every other axis.
///
/// Running statistics are a bias-corrected exponential moving average: after
/// `t` updates they equal `ema_t / (1 - momentum^t)` of a zero-initialized
/// average, so they track the batch statistics from the first update rather
/// than being dragged toward the (0, 1) initial values.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub updates: u64,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            updates: 0,
            cache: None,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn check(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.shape().last() != Some(&self.channels) {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.channels],
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, mut x: Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        self.check(&x)?;
        let c = self.channels;
        let count = x.len() / c;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0f64; c];
                for row in x.data().chunks_exact(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0f64; c];
                for row in x.data().chunks_exact(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.as_f64() - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= count as f64);
                self.update_running(&mean, &var);
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let shift: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
        let scale: Vec<T> = inv_std.iter().map(|&s| T::from_f64(s)).collect();
        for row in x.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &s) in row.iter_mut().zip(&shift).zip(&scale) {
                *v = (*v - m) * s;
            }
        }
        self.cache = (mode == Mode::Train).then(|| Cache {
            x_hat: x.clone(),
            inv_std,
        });
        let (gamma, beta) = (self.gamma.data(), self.beta.data());
        for row in x.data_mut().chunks_exact_mut(c) {
            for ((v, &g), &b) in row.iter_mut().zip(gamma).zip(beta) {
                *v = g * *v + b;
            }
        }
        Ok(x)
    }

    fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        self.updates += 1;
        let w = (1.0 - BN_MOMENTUM) / (1.0 - BN_MOMENTUM.powi(self.updates.min(i32::MAX as u64) as i32));
        for ch in 0..self.channels {
            self.running_mean[ch] = (1.0 - w) * self.running_mean[ch] + w * mean[ch];
            self.running_var[ch] = (1.0 - w) * self.running_var[ch] + w * var[ch];
        }
    }

    /// Gradient of the train-mode forward; accumulates `grad_gamma` and
    /// `grad_beta`.
    pub fn backward(&mut self, mut grad_out: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("batchnorm"))?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(NnError::ShapeMismatch {
                expected: cache.x_hat.shape().to_vec(),
                found: grad_out.shape().to_vec(),
            });
        }
        let c = self.channels;
        let count = (grad_out.len() / c) as f64;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (g, xh) in grad_out.data().chunks_exact(c).zip(cache.x_hat.data().chunks_exact(c)) {
            for ch in 0..c {
                let gv = g[ch].as_f64();
                sum_g[ch] += gv;
                sum_gx[ch] += gv * xh[ch].as_f64();
            }
        }
        for ch in 0..c {
            self.grad_beta.data_mut()[ch] += T::from_f64(sum_g[ch]);
            self.grad_gamma.data_mut()[ch] += T::from_f64(sum_gx[ch]);
        }
        // dx = gamma * inv_std * (g - mean(g) - x_hat * mean(g * x_hat))
        let scale: Vec<T> = (0..c)
            .map(|ch| T::from_f64(self.gamma.data()[ch].as_f64() * cache.inv_std[ch]))
            .collect();
        let mean_g: Vec<T> = sum_g.iter().map(|&s| T::from_f64(s / count)).collect();
        let mean_gx: Vec<T> = sum_gx.iter().map(|&s| T::from_f64(s / count)).collect();
        for (g, xh) in grad_out
            .data_mut()
            .chunks_exact_mut(c)
            .zip(cache.x_hat.data().chunks_exact(c))
        {
            for ch in 0..c {
                g[ch] = scale[ch] * (g[ch] - mean_g[ch] - xh[ch] * mean_gx[ch]);
            }
        }
        Ok(grad_out)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
