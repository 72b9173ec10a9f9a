//! Finite-difference verification of every backward pass.
//!
//! Each check draws random `f64` inputs, projects the layer output onto a
//! fixed random direction `r` so the loss `sum(out * r)` is scalar, and
//! compares the analytic gradients with central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax_cross_entropy, BatchNorm, LayerSpec, Mode, Network, Tensor,
};

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

/// Gradients with both norms below this are zero to finite-difference
/// precision (a conv bias feeding batch norm, for one) and count as exact.
pub const ZERO_NORM: f64 = 1e-8;

/// Worst error seen over `tensors` random trials of one layer type.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub layer: &'static str,
    pub tensors: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }

    fn new(layer: &'static str) -> Self {
        GradCheck {
            layer,
            tensors: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, pairs: &[(&[f64], &[f64])]) {
        self.tensors += 1;
        for (a, n) in pairs {
            self.worst = self.worst.max(relative_error(a, n));
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise `|a - n| / max(|a|, |n|)`, or 0 when both are numerically zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let (na, nn) = (norm(analytic), norm(numeric));
    if na < ZERO_NORM && nn < ZERO_NORM {
        return 0.0;
    }
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / na.max(nn)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let up = f(&p);
            p[i] = x[i] - FD_STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("length matches shape")
}

fn with(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), data.to_vec()).expect("same length")
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Odd, even and asymmetric kernels over random small shapes.
pub fn check_conv2d(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = [(3, 3), (1, 3), (3, 1), (5, 5), (2, 2), (1, 7), (4, 3)];
    let mut out = GradCheck::new("conv2d");
    for trial in 0..trials {
        let (kh, kw) = kernels[trial % kernels.len()];
        let shape = [
            rng.gen_range(1..3),
            rng.gen_range(2..7),
            rng.gen_range(2..7),
            rng.gen_range(1..4),
        ];
        let cout = rng.gen_range(1..4);
        let x = random(&mut rng, &shape);
        let w = random(&mut rng, &[kh, kw, shape[3], cout]);
        let b = random(&mut rng, &[cout]);
        let r = random(&mut rng, &[shape[0], shape[1], shape[2], cout]);
        let (gx, gw, gb) = conv2d_backward(&r, &x, &w).expect("valid shapes");
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&conv2d_forward(x, w, b).expect("valid"), &r);
        let nx = numeric_gradient(x.data(), |p| f(&with(&x, p), &w, &b));
        let nw = numeric_gradient(w.data(), |p| f(&x, &with(&w, p), &b));
        let nb = numeric_gradient(b.data(), |p| f(&x, &w, &with(&b, p)));
        out.record(&[(gx.data(), &nx), (gw.data(), &nw), (gb.data(), &nb)]);
    }
    out
}

/// Train mode, so gradients flow through the batch statistics.
pub fn check_batchnorm(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::new("batchnorm");
    for _ in 0..trials {
        let c = rng.gen_range(1..4);
        let shape = [rng.gen_range(2..4), rng.gen_range(1..4), rng.gen_range(1..4), c];
        let x = random(&mut rng, &shape);
        let r = random(&mut rng, x.shape());
        let mut bn = BatchNorm::<f64>::new(c);
        bn.gamma = random(&mut rng, &[c]);
        bn.beta = random(&mut rng, &[c]);
        let base = bn.clone();
        let loss = |bn: &BatchNorm<f64>, x: Tensor<f64>| dot(&bn.clone().forward(x, Mode::Train).expect("valid"), &r);
        bn.forward(x.clone(), Mode::Train).expect("valid");
        let gx = bn.backward(r.clone()).expect("cached");
        let nx = numeric_gradient(x.data(), |p| loss(&base, with(&x, p)));
        let ng = numeric_gradient(base.gamma.data(), |p| {
            let mut b = base.clone();
            b.gamma = with(&base.gamma, p);
            loss(&b, x.clone())
        });
        let nb = numeric_gradient(base.beta.data(), |p| {
            let mut b = base.clone();
            b.beta = with(&base.beta, p);
            loss(&b, x.clone())
        });
        out.record(&[
            (gx.data(), &nx),
            (bn.grad_gamma.data(), &ng),
            (bn.grad_beta.data(), &nb),
        ]);
    }
    out
}

/// Ceil-mode windows, including partial edge windows and overlap.
pub fn check_maxpool(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = [
        ((2, 2), (2, 2)),
        ((4, 1), (4, 1)),
        ((4, 3), (4, 3)),
        ((2, 4), (2, 4)),
        ((3, 3), (2, 2)),
    ];
    let mut out = GradCheck::new("maxpool");
    for trial in 0..trials {
        let (k, s) = pools[trial % pools.len()];
        let shape = [
            rng.gen_range(1..3),
            rng.gen_range(1..9),
            rng.gen_range(1..9),
            rng.gen_range(1..3),
        ];
        let x = random(&mut rng, &shape);
        let (y, cache) = maxpool_forward(&x, k, s).expect("valid");
        let r = random(&mut rng, y.shape());
        let gx = maxpool_backward(&r, &cache).expect("valid");
        let nx = numeric_gradient(x.data(), |p| {
            dot(&maxpool_forward(&with(&x, p), k, s).expect("valid").0, &r)
        });
        out.record(&[(gx.data(), &nx)]);
    }
    out
}

pub fn check_dense(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::new("dense");
    for _ in 0..trials {
        let (n, fin, fout) = (rng.gen_range(1..4), rng.gen_range(1..12), rng.gen_range(1..6));
        let x = random(&mut rng, &[n, fin]);
        let w = random(&mut rng, &[fin, fout]);
        let b = random(&mut rng, &[fout]);
        let r = random(&mut rng, &[n, fout]);
        let (gx, gw, gb) = dense_backward(&r, &x, &w).expect("valid");
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&dense_forward(x, w, b).expect("valid"), &r);
        let nx = numeric_gradient(x.data(), |p| f(&with(&x, p), &w, &b));
        let nw = numeric_gradient(w.data(), |p| f(&x, &with(&w, p), &b));
        let nb = numeric_gradient(b.data(), |p| f(&x, &w, &with(&b, p)));
        out.record(&[(gx.data(), &nx), (gw.data(), &nw), (gb.data(), &nb)]);
    }
    out
}

/// Inputs are kept at least 1e-3 away from the kink.
pub fn check_relu(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::new("relu");
    for _ in 0..trials {
        let shape = [2, rng.gen_range(1..20)];
        let x = random(&mut rng, &shape).map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
        let r = random(&mut rng, x.shape());
        let gx = relu_backward(&r, &relu_forward(&x)).expect("valid");
        let nx = numeric_gradient(x.data(), |p| dot(&relu_forward(&with(&x, p)), &r));
        out.record(&[(gx.data(), &nx)]);
    }
    out
}

/// A fixed, pre-scaled mask at rate 0.5.
pub fn check_dropout(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::new("dropout");
    for _ in 0..trials {
        let shape = [2, rng.gen_range(1..20)];
        let x = random(&mut rng, &shape);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.gen_bool(0.5) { 0.0 } else { 2.0 })
            .collect();
        let r = random(&mut rng, x.shape());
        let gx = dropout_forward(&r, &mask);
        let nx = numeric_gradient(x.data(), |p| dot(&dropout_forward(&with(&x, p), &mask), &r));
        out.record(&[(gx.data(), &nx)]);
    }
    out
}

/// Soft targets, as produced by mixup.
pub fn check_softmax_ce(trials: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::new("softmax-ce");
    for _ in 0..trials {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..7));
        let z = random(&mut rng, &[n, k]).map(|v| 4.0 * v);
        let mut y = random(&mut rng, &[n, k]).map(f64::abs);
        for row in y.data_mut().chunks_exact_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let (_, g) = softmax_cross_entropy(&z, &y).expect("valid");
        let nz = numeric_gradient(z.data(), |p| softmax_cross_entropy(&with(&z, p), &y).expect("valid").0);
        out.record(&[(g.data(), &nz)]);
    }
    out
}

/// Every parameter of a small stack (conv, BN, ReLU, ceil-mode pool,
/// dense, fixed-seed dropout) through the loss, via `backward_params`.
pub fn check_network(trials: usize, seed: u64) -> GradCheck {
    let specs = [
        LayerSpec::Conv2d {
            ksize: (3, 1),
            filters: 3,
        },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            ksize: (1, 3),
            filters: 2,
        },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            ksize: (2, 3),
            stride: (2, 3),
        },
        LayerSpec::Dense { units: 5 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { units: 3 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::new("network");
    for _ in 0..trials {
        let mut net = Network::<f64>::build(&[5, 7, 2], &specs, 0.5, &mut rng).expect("valid stack");
        let x = random(&mut rng, &[3, 5, 7, 2]);
        let mut y = random(&mut rng, &[3, 3]).map(f64::abs);
        for row in y.data_mut().chunks_exact_mut(3) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let drop_seed: u64 = rng.gen();
        let loss = |net: &mut Network<f64>| {
            net.reseed_dropout(drop_seed);
            let z = net.forward(&x, Mode::Train).expect("valid");
            net.clear_caches();
            softmax_cross_entropy(&z, &y).expect("valid").0
        };
        net.zero_grad();
        net.reseed_dropout(drop_seed);
        let z = net.forward(&x, Mode::Train).expect("valid");
        let (_, g) = softmax_cross_entropy(&z, &y).expect("valid");
        net.backward_params(g).expect("cached");
        let analytic: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.to_vec()).collect();
        net.clear_caches();
        let numeric: Vec<Vec<f64>> = (0..analytic.len())
            .map(|k| {
                let base = net.params_mut()[k].value.to_vec();
                numeric_gradient(&base, |p| {
                    let mut probe = net.clone();
                    probe.params_mut()[k].value.copy_from_slice(p);
                    loss(&mut probe)
                })
            })
            .collect();
        let pairs: Vec<(&[f64], &[f64])> = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a.as_slice(), n.as_slice()))
            .collect();
        out.record(&pairs);
    }
    out
}

/// All layer checks plus the whole-stack check.
pub fn check_all(trials: usize, seed: u64) -> Vec<GradCheck> {
    vec![
        check_conv2d(trials, seed),
        check_batchnorm(trials, seed + 1),
        check_maxpool(trials, seed + 2),
        check_dense(trials, seed + 3),
        check_relu(trials, seed + 4),
        check_dropout(trials, seed + 5),
        check_softmax_ce(trials, seed + 6),
        check_network(trials, seed + 7),
    ]
}
