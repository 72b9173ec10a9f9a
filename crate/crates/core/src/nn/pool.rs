use super::{NnError, Scalar, Tensor};

/// Ceil-mode output length: partial windows at the right/bottom edge count.
pub fn ceil_pool_len(input: usize, ksize: usize, stride: usize) -> usize {
    if input <= ksize {
        1
    } else {
        (input - ksize).div_ceil(stride) + 1
    }
}

/// Max pooling over the two spatial axes of `(batch, h, w, c)` in ceil mode.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub ksize: (usize, usize),
    pub stride: (usize, usize),
    cache: Option<PoolCache>,
}

/// Flat input index of the winning element for every output element.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new(ksize: (usize, usize), stride: (usize, usize)) -> Self {
        MaxPool2d {
            ksize,
            stride,
            cache: None,
        }
    }

    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            ceil_pool_len(h, self.ksize.0, self.stride.0),
            ceil_pool_len(w, self.ksize.1, self.stride.1),
        )
    }

    pub fn forward<T: Scalar>(&mut self, x: Tensor<T>, keep_cache: bool) -> Result<Tensor<T>, NnError> {
        let (y, cache) = maxpool_forward(&x, self.ksize, self.stride)?;
        self.cache = keep_cache.then_some(cache);
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.take().ok_or(NnError::NoForwardCache("maxpool"))?;
        maxpool_backward(&grad_out, &cache)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Ceil-mode max pooling. Ties go to the first element in row-major scan
/// order of the window.
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    ksize: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor<T>, PoolCache), NnError> {
    x.expect_rank(4)?;
    let [n, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let oh = ceil_pool_len(h, ksize.0, stride.0);
    let ow = ceil_pool_len(w, ksize.1, stride.1);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let mut argmax = vec![0usize; n * oh * ow * c];
    let xd = x.data();
    let od = out.data_mut();
    // channels innermost so every comparison walks contiguous memory
    for i in 0..n {
        for oy in 0..oh {
            let y0 = oy * stride.0;
            let y1 = (y0 + ksize.0).min(h);
            for ox in 0..ow {
                let x0 = ox * stride.1;
                let x1 = (x0 + ksize.1).min(w);
                let o = ((i * oh + oy) * ow + ox) * c;
                let first = ((i * h + y0) * w + x0) * c;
                let (best, arg) = (&mut od[o..o + c], &mut argmax[o..o + c]);
                best.copy_from_slice(&xd[first..first + c]);
                for (a, idx) in arg.iter_mut().zip(first..) {
                    *a = idx;
                }
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        let base = ((i * h + yy) * w + xx) * c;
                        for ((b, a), (idx, &v)) in best
                            .iter_mut()
                            .zip(arg.iter_mut())
                            .zip((base..).zip(&xd[base..base + c]))
                        {
                            let better = v > *b;
                            *b = if better { v } else { *b };
                            *a = if better { idx } else { *a };
                        }
                    }
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream gradient to the input position that won its window.
pub fn maxpool_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &PoolCache) -> Result<Tensor<T>, NnError> {
    if grad_out.len() != cache.argmax.len() {
        return Err(NnError::ShapeMismatch {
            expected: vec![cache.argmax.len()],
            found: grad_out.shape().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(&cache.input_shape);
    let gxd = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_lengths_follow_architecture_table() {
        assert_eq!(ceil_pool_len(128, 4, 4), 32);
        assert_eq!(ceil_pool_len(128, 3, 3), 43);
        assert_eq!(ceil_pool_len(43, 3, 3), 15);
        assert_eq!(ceil_pool_len(15, 2, 2), 8);
        assert_eq!(ceil_pool_len(8, 2, 2), 4);
        assert_eq!(ceil_pool_len(1, 2, 2), 1);
    }

    #[test]
    fn pooled_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 128, 128, 1]);
        let (y, _) = maxpool_forward(&x, (4, 3), (4, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 32, 43, 1]);
        let x = Tensor::<f32>::zeros(&[1, 8, 43, 2]);
        let (y, _) = maxpool_forward(&x, (1, 3), (1, 3)).unwrap();
        assert_eq!(y.shape(), &[1, 8, 15, 2]);
    }

    #[test]
    fn two_by_two_picks_max() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool_forward(&x, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn partial_edge_window() {
        // 1 x 5 row pooled by 3: windows [0..3) and [3..5)
        let x = Tensor::<f64>::from_vec(&[1, 1, 5, 1], vec![1.0, 5.0, 2.0, 7.0, 3.0]).unwrap();
        let (y, _) = maxpool_forward(&x, (1, 3), (1, 3)).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
    }

    #[test]
    fn ties_route_to_first_element() {
        let x = Tensor::<f64>::full(&[1, 4, 4, 1], 2.0);
        let (_, cache) = maxpool_forward(&x, (2, 2), (2, 2)).unwrap();
        let g = Tensor::<f64>::full(&[1, 2, 2, 1], 1.0);
        let gx = maxpool_backward(&g, &cache).unwrap();
        let want = [
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(gx.data(), &want);
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let x = Tensor::<f64>::from_vec(&[1, 3, 3, 1], (0..9).map(|v| v as f64).collect()).unwrap();
        let (_, cache) = maxpool_forward(&x, (2, 2), (2, 2)).unwrap();
        let gx = maxpool_backward(&Tensor::<f64>::zeros(&[1, 2, 2, 1]), &cache).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }
}
