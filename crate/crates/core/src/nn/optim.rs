use super::Scalar;

pub const MOMENTUM: f64 = 0.9;
pub const L2_COEFFICIENT: f64 = 1e-4;

/// Learning-rate profile: divide by 10 every 80 epochs (`Urban`) or every
/// 100 epochs (`Esc`), starting from 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrProfile {
    Urban,
    Esc,
}

impl LrProfile {
    pub fn step_epochs(self) -> usize {
        match self {
            LrProfile::Urban => 80,
            LrProfile::Esc => 100,
        }
    }

    pub fn total_epochs(self) -> usize {
        match self {
            LrProfile::Urban => 200,
            LrProfile::Esc => 300,
        }
    }
}

pub const INITIAL_LR: f64 = 0.1;

pub fn lr_schedule(epoch: usize, profile: LrProfile) -> f64 {
    let drops = (epoch / profile.step_epochs()).min(2) as i32;
    INITIAL_LR * 10f64.powi(-drops)
}

/// One trainable buffer as seen by the optimizer.
pub struct ParamRef<'a, T> {
    pub value: &'a mut [T],
    pub grad: &'a [T],
    /// Weights get the L2 term; biases and BN affine parameters do not.
    pub decay: bool,
}

/// SGD with Nesterov momentum and L2 regularization folded into the
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Vec<T>>,
    pub momentum: f64,
    pub lr: f64,
    pub l2: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(lr: f64) -> Self {
        OptimizerState {
            velocity: Vec::new(),
            momentum: MOMENTUM,
            lr,
            l2: L2_COEFFICIENT,
        }
    }

    /// `v <- mu v - lr g`, `p <- p + mu v - lr g`, with `g += l2 p` for
    /// decayed parameters.
    pub fn step(&mut self, params: Vec<ParamRef<'_, T>>) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        }
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(self.lr);
        let l2 = T::from_f64(self.l2);
        for (p, v) in params.into_iter().zip(self.velocity.iter_mut()) {
            assert_eq!(v.len(), p.value.len(), "velocity shape mirrors parameter");
            for ((w, &g), vel) in p.value.iter_mut().zip(p.grad).zip(v.iter_mut()) {
                let g = if p.decay { g + l2 * *w } else { g };
                *vel = mu * *vel - lr * g;
                *w = *w + mu * *vel - lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_scalar(state: &mut OptimizerState<f64>, p: &mut f64, g: f64, decay: bool) {
        let grad = [g];
        state.step(vec![ParamRef {
            value: std::slice::from_mut(p),
            grad: &grad,
            decay,
        }]);
    }

    #[test]
    fn schedule_steps() {
        assert_eq!(lr_schedule(0, LrProfile::Urban), 0.1);
        assert!((lr_schedule(79, LrProfile::Urban) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(80, LrProfile::Urban) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(160, LrProfile::Urban) - 0.001).abs() < 1e-15);
        assert!((lr_schedule(199, LrProfile::Urban) - 0.001).abs() < 1e-15);
        assert!((lr_schedule(99, LrProfile::Esc) - 0.1).abs() < 1e-15);
        assert!((lr_schedule(100, LrProfile::Esc) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(250, LrProfile::Esc) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = OptimizerState::<f64>::new(0.1);
        s.l2 = 0.0;
        let mut p = 1.5;
        step_scalar(&mut s, &mut p, 0.0, true);
        assert_eq!(p, 1.5);
    }

    #[test]
    fn first_step_unrolls() {
        let mut s = OptimizerState::<f64>::new(0.1);
        let mut p = 2.0;
        step_scalar(&mut s, &mut p, 0.5, false);
        assert!((p - (2.0 - 0.1 * 1.9 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn l2_only_on_decayed_params() {
        let mut s = OptimizerState::<f64>::new(0.1);
        let mut a = 1.0;
        step_scalar(&mut s, &mut a, 0.0, false);
        assert_eq!(a, 1.0);
        let mut s = OptimizerState::<f64>::new(0.1);
        let mut b = 1.0;
        step_scalar(&mut s, &mut b, 0.0, true);
        assert!((b - (1.0 - 0.1 * 1.9 * 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(p) = p^2 / 2 has gradient p. The iteration is underdamped at
        // lr = 0.1, mu = 0.9, so |p| oscillates; its successive peaks shrink.
        let mut s = OptimizerState::<f64>::new(0.1);
        s.l2 = 0.0;
        let mut p = 1.0;
        let mut traj = vec![p];
        for _ in 0..200 {
            let g = p;
            step_scalar(&mut s, &mut p, g, false);
            traj.push(p);
        }
        let oracle = bowl_oracle(1.0, 0.1, 0.9, 200);
        for (a, b) in traj.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        let mag: Vec<f64> = traj.iter().map(|v| v.abs()).collect();
        let peaks: Vec<f64> = (1..200)
            .filter(|&i| mag[i] >= mag[i - 1] && mag[i] >= mag[i + 1])
            .map(|i| mag[i])
            .collect();
        assert!(peaks.len() > 5);
        assert!(peaks.windows(2).all(|w| w[1] < w[0]));
        assert!(mag[62..].iter().all(|&v| v < 1e-3));
    }

    /// Nesterov in look-ahead form: gradient taken at `theta + mu v`. The
    /// shifted update stores exactly that look-ahead point.
    fn bowl_oracle(p0: f64, lr: f64, mu: f64, steps: usize) -> Vec<f64> {
        let (mut theta, mut v) = (p0, 0.0);
        let mut out = vec![p0];
        for _ in 0..steps {
            let g = theta + mu * v;
            v = mu * v - lr * g;
            theta += v;
            out.push(theta + mu * v);
        }
        out
    }
}
