use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Grads, NnError, Scalar, Tensor};

/// Stride-1 "same" convolution over `(batch, height, width, channels)`.
///
/// Weights are stored `(kh, kw, cin, cout)`, which read as a row-major
/// `(kh*kw*cin) x cout` matrix is exactly the im2col weight matrix.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kernel: (usize, usize), in_channels: usize, out_channels: usize) -> Self {
        let wshape = [kernel.0, kernel.1, in_channels, out_channels];
        Conv2d {
            kernel,
            in_channels,
            out_channels,
            weight: Tensor::zeros(&wshape),
            bias: Tensor::zeros(&[out_channels]),
            grad_weight: Tensor::zeros(&wshape),
            grad_bias: Tensor::zeros(&[out_channels]),
            input: None,
        }
    }

    /// Weights drawn from N(0, std²); biases zero.
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
        let y = conv2d_forward(&x, &self.weight, &self.bias)?;
        self.input = keep_cache.then_some(x);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.accumulate(grad_out, true)?.expect("input gradient requested"))
    }

    /// Like [`Conv2d::backward`] but skips the input gradient, which costs
    /// as much as the forward pass and is useless for a first layer.
    pub fn backward_params(&mut self, grad_out: Tensor<T>) -> Result<(), NnError> {
        self.accumulate(grad_out, false).map(|_| ())
    }

    fn accumulate(&mut self, grad_out: Tensor<T>, want_input: bool) -> Result<Option<Tensor<T>>, NnError> {
        let x = self.input.take().ok_or(NnError::NoForwardCache("conv2d"))?;
        let (gx, gw, gb) = conv2d_grads(&grad_out, &x, &self.weight, want_input)?;
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

/// Strided GEMM on raw slices: `c (+)= a * b` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm_strided<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    rsc: usize,
    accumulate: bool,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // every addressed element must lie inside the slices
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + n - 1 < c.len());
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: bounds asserted above. `a` rows may overlap, which is fine
    // for a read-only operand; `c` rows never overlap (rsc >= n).
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Geometry of one stride-1 convolution with explicit zero padding.
struct Plan {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Plan {
    /// Padded width; outputs are computed on this wider grid and the
    /// `kw - 1` spill columns per row are discarded.
    fn wp(&self) -> usize {
        self.w + self.kw - 1
    }

    fn hp(&self) -> usize {
        self.h + self.kh - 1
    }

    /// Rows of the wide output grid that cover every valid output.
    fn wide_rows(&self) -> usize {
        (self.h - 1) * self.wp() + self.w
    }

    fn pad_input<T: Scalar>(&self, x: &[T], xp: &mut [T]) {
        let (wp, c) = (self.wp(), self.cin);
        xp.fill(T::zero());
        for y in 0..self.h {
            let dst = ((y + self.pad_top) * wp + self.pad_left) * c;
            xp[dst..dst + self.w * c].copy_from_slice(&x[y * self.w * c..(y + 1) * self.w * c]);
        }
    }

    /// `wide (wide_rows x cout) = sum_dy xp_view(dy) * w[dy]`, where
    /// `xp_view(dy)` row q is the `kw * cin` run starting at padded flat
    /// position `dy * wp + q`.
    fn correlate<T: Scalar>(&self, xp: &[T], w: &[T], wide: &mut [T]) {
        let (wp, m) = (self.wp(), self.wide_rows());
        let k = self.kw * self.cin;
        for dy in 0..self.kh {
            gemm_strided(
                m,
                k,
                self.cout,
                &xp[dy * wp * self.cin..],
                (self.cin, 1),
                &w[dy * k * self.cout..(dy + 1) * k * self.cout],
                (self.cout, 1),
                wide,
                self.cout,
                dy > 0,
            );
        }
    }
}

fn check_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(), NnError> {
    x.expect_rank(4)?;
    w.expect_rank(4)?;
    if w.shape()[2] != x.shape()[3] {
        return Err(NnError::ShapeMismatch {
            expected: vec![w.shape()[0], w.shape()[1], x.shape()[3], w.shape()[3]],
            found: w.shape().to_vec(),
        });
    }
    Ok(())
}

/// Stride-1 correlation of `x (n,h,w,cin)` with `w (kh,kw,cin,cout)` under
/// the given leading padding (trailing padding is `k - 1 - lead`).
fn correlate_padded<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, pad_top: usize, pad_left: usize) -> Tensor<T> {
    let s = x.shape();
    let ws = w.shape();
    let plan = Plan {
        h: s[1],
        w: s[2],
        cin: s[3],
        kh: ws[0],
        kw: ws[1],
        cout: ws[3],
        pad_top,
        pad_left,
    };
    let n = s[0];
    let mut out = Tensor::zeros(&[n, plan.h, plan.w, plan.cout]);
    let mut xp = vec![T::zero(); plan.hp() * plan.wp() * plan.cin];
    let mut wide = vec![T::zero(); plan.wide_rows() * plan.cout];
    let item_out = plan.h * plan.w * plan.cout;
    for i in 0..n {
        plan.pad_input(x.item(i), &mut xp);
        plan.correlate(&xp, w.data(), &mut wide);
        let y = &mut out.data_mut()[i * item_out..(i + 1) * item_out];
        for row in 0..plan.h {
            let src = row * plan.wp() * plan.cout;
            y[row * plan.w * plan.cout..(row + 1) * plan.w * plan.cout]
                .copy_from_slice(&wide[src..src + plan.w * plan.cout]);
        }
    }
    out
}

/// Cross-correlation plus bias with stride 1 and "same" padding (an even
/// kernel puts the extra padding after).
///
/// `x` is `(batch, h, w, cin)`, `w` is `(kh, kw, cin, cout)`, `b` is `(cout)`;
/// the result is `(batch, h, w, cout)`.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    check_shapes(x, w)?;
    let cout = w.shape()[3];
    if b.shape() != [cout] {
        return Err(NnError::ShapeMismatch {
            expected: vec![cout],
            found: b.shape().to_vec(),
        });
    }
    let (kh, kw) = (w.shape()[0], w.shape()[1]);
    let mut out = correlate_padded(x, w, (kh - 1) / 2, (kw - 1) / 2);
    for row in out.data_mut().chunks_exact_mut(cout) {
        for (v, &bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient,
/// returned as `(input, weight, bias)`.
pub fn conv2d_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>, w: &Tensor<T>) -> Result<Grads<T>, NnError> {
    let (gx, gw, gb) = conv2d_grads(grad_out, x, w, true)?;
    Ok((gx.expect("input gradient requested"), gw, gb))
}

#[allow(clippy::type_complexity)]
fn conv2d_grads<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>), NnError> {
    check_shapes(x, w)?;
    let s = x.shape();
    let (kh, kw, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (n, h, wd) = (s[0], s[1], s[2]);
    let expected = [n, h, wd, cout];
    if grad_out.shape() != expected {
        return Err(NnError::ShapeMismatch {
            expected: expected.to_vec(),
            found: grad_out.shape().to_vec(),
        });
    }
    let (pad_top, pad_left) = ((kh - 1) / 2, (kw - 1) / 2);

    let mut gb = Tensor::zeros(&[cout]);
    for row in grad_out.data().chunks_exact(cout) {
        for (acc, v) in gb.data_mut().iter_mut().zip(row) {
            *acc += *v;
        }
    }

    // dW[dy] (kw*cin x cout) += xp_view(dy)^T * dY_wide, with the spill
    // columns of dY_wide held at zero.
    let plan = Plan {
        h,
        w: wd,
        cin,
        kh,
        kw,
        cout,
        pad_top,
        pad_left,
    };
    let (wp, m, k) = (plan.wp(), plan.wide_rows(), kw * cin);
    let mut gw = Tensor::zeros(w.shape());
    let mut xp = vec![T::zero(); plan.hp() * wp * cin];
    let mut g_wide = vec![T::zero(); m * cout];
    for i in 0..n {
        plan.pad_input(x.item(i), &mut xp);
        let go = grad_out.item(i);
        for row in 0..h {
            g_wide[row * wp * cout..(row * wp + wd) * cout]
                .copy_from_slice(&go[row * wd * cout..(row + 1) * wd * cout]);
        }
        for dy in 0..kh {
            gemm_strided(
                k,
                m,
                cout,
                &xp[dy * wp * cin..],
                (1, cin),
                &g_wide,
                (cout, 1),
                &mut gw.data_mut()[dy * k * cout..(dy + 1) * k * cout],
                cout,
                true,
            );
        }
    }

    if !want_input {
        return Ok((None, gw, gb));
    }
    // dX is the correlation of dY with the flipped, channel-transposed
    // kernel under the mirrored padding.
    let mut flipped = Tensor::zeros(&[kh, kw, cout, cin]);
    for dy in 0..kh {
        for dx in 0..kw {
            for ci in 0..cin {
                for co in 0..cout {
                    flipped.data_mut()[((dy * kw + dx) * cout + co) * cin + ci] =
                        w.data()[(((kh - 1 - dy) * kw + (kw - 1 - dx)) * cin + ci) * cout + co];
                }
            }
        }
    }
    let gx = correlate_padded(grad_out, &flipped, kh - 1 - pad_top, kw - 1 - pad_left);
    Ok((Some(gx), gw, gb))
}
