//! Layer kernels over NHWC activations stored as `(n*h*w) x c` matrices.

use ndarray::{Array1, Array2, Axis, Zip};

/// Activations of a batch: row `((b*h + y)*w + x)` holds the channels of one pixel.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub data: Array2<f32>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

pub fn conv_out_dim(dim: usize, stride: usize) -> usize {
    // kernel 3, padding 1
    (dim - 1) / stride + 1
}

/// Unfolds 3x3 zero-padded patches into rows ordered `(ky, kx, channel)`.
pub fn im2col(x: &FeatureMap, stride: usize) -> (Array2<f32>, usize, usize) {
    let c = x.channels();
    let ho = conv_out_dim(x.h, stride);
    let wo = conv_out_dim(x.w, stride);
    let mut cols = Array2::<f32>::zeros((x.n * ho * wo, 9 * c));
    let src = x.data.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    for b in 0..x.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * 9 * c;
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let s = ((b * x.h + iy as usize) * x.w + ix as usize) * c;
                        let d = row + (ky * 3 + kx) * c;
                        dst[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub fn col2im(dcols: &Array2<f32>, n: usize, h: usize, w: usize, c: usize, stride: usize) -> Array2<f32> {
    let ho = conv_out_dim(h, stride);
    let wo = conv_out_dim(w, stride);
    let mut dx = Array2::<f32>::zeros((n * h * w, c));
    let src = dcols.as_slice().expect("standard layout");
    let dst = dx.as_slice_mut().expect("standard layout");
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * 9 * c;
                for ky in 0..3 {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let d = ((b * h + iy as usize) * w + ix as usize) * c;
                        let s = row + (ky * 3 + kx) * c;
                        for (o, i) in dst[d..d + c].iter_mut().zip(&src[s..s + c]) {
                            *o += *i;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub struct BnCache {
    pub xhat: Array2<f32>,
    pub inv_std: Array1<f32>,
}

/// Batch-statistics normalization. Returns the output, the cache for the
/// backward pass, and the batch mean and unbiased variance.
pub fn batch_norm_train(
    x: &Array2<f32>,
    gamma: &Array1<f32>,
    beta: &Array1<f32>,
    eps: f32,
) -> (Array2<f32>, BnCache, Array1<f32>, Array1<f32>) {
    let m = x.nrows() as f32;
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / m;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * gamma + beta;
    let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var };
    (y, BnCache { xhat, inv_std }, mean, unbiased)
}

pub fn batch_norm_eval(
    x: &Array2<f32>,
    gamma: &Array1<f32>,
    beta: &Array1<f32>,
    running_mean: &Array1<f32>,
    running_var: &Array1<f32>,
    eps: f32,
) -> Array2<f32> {
    let scale = gamma / &running_var.mapv(|v| (v + eps).sqrt());
    let shift = beta - &(running_mean * &scale);
    x * &scale + &shift
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward(
    dy: &Array2<f32>,
    cache: &BnCache,
    gamma: &Array1<f32>,
) -> (Array2<f32>, Array1<f32>, Array1<f32>) {
    let m = dy.nrows() as f32;
    let dbeta = dy.sum_axis(Axis(0));
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut dx = dxhat * m - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
    dx *= &(&cache.inv_std / m);
    (dx, dgamma, dbeta)
}

pub fn leaky_relu_inplace(x: &mut Array2<f32>, slope: f32) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
}

/// `y` is the activation output; its sign equals the input's sign.
pub fn leaky_relu_backward(dy: &mut Array2<f32>, y: &Array2<f32>, slope: f32) {
    Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d *= slope;
        }
    });
}

/// Spatial mean per sample: `(n*h*w) x c` to `n x c`.
pub fn global_avg_pool(x: &FeatureMap) -> Array2<f32> {
    let hw = x.h * x.w;
    let c = x.channels();
    let mut out = Array2::<f32>::zeros((x.n, c));
    for b in 0..x.n {
        let block = x.data.slice(ndarray::s![b * hw..(b + 1) * hw, ..]);
        out.row_mut(b).assign(&block.sum_axis(Axis(0)));
    }
    out / hw as f32
}

pub fn global_avg_pool_backward(dout: &Array2<f32>, n: usize, h: usize, w: usize) -> Array2<f32> {
    let hw = h * w;
    let c = dout.ncols();
    let mut dx = Array2::<f32>::zeros((n * hw, c));
    for b in 0..n {
        let g = dout.row(b).mapv(|v| v / hw as f32);
        for mut row in dx.slice_mut(ndarray::s![b * hw..(b + 1) * hw, ..]).rows_mut() {
            row.assign(&g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand2(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f32> {
        Array::from_shape_fn((r, c), |_| rng.gen_range(-1.0f32..1.0))
    }

    /// Direct 3x3 convolution, used as an oracle for im2col + GEMM.
    fn naive_conv(x: &FeatureMap, wt: &Array2<f32>, stride: usize) -> Array2<f32> {
        let c = x.channels();
        let cout = wt.ncols();
        let ho = conv_out_dim(x.h, stride);
        let wo = conv_out_dim(x.w, stride);
        let mut out = Array2::zeros((x.n * ho * wo, cout));
        for b in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for o in 0..cout {
                        let mut acc = 0.0f32;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    let xi = ((b * x.h + iy as usize) * x.w + ix as usize, ch);
                                    acc += x.data[xi] * wt[[(ky * 3 + kx) * c + ch, o]];
                                }
                            }
                        }
                        out[[(b * ho + oy) * wo + ox, o]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(h, w, stride) in &[(5, 5, 1), (6, 7, 2), (4, 4, 2), (1, 1, 1)] {
            let x = FeatureMap {
                data: rand2(&mut rng, 2 * h * w, 3),
                n: 2,
                h,
                w,
            };
            let wt = rand2(&mut rng, 27, 4);
            let (cols, _, _) = im2col(&x, stride);
            let fast = cols.dot(&wt);
            let slow = naive_conv(&x, &wt, stride);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)> for all x, g.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for stride in [1, 2] {
            let (n, h, w, c) = (2, 5, 6, 3);
            let x = FeatureMap {
                data: rand2(&mut rng, n * h * w, c),
                n,
                h,
                w,
            };
            let (cols, _, _) = im2col(&x, stride);
            let g = rand2(&mut rng, cols.nrows(), cols.ncols());
            let lhs: f32 = (&cols * &g).sum();
            let rhs: f32 = (&x.data * &col2im(&g, n, h, w, c, stride)).sum();
            assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand2(&mut rng, 12, 3).mapv(f64::from);
        let gamma = Array1::from(vec![0.5f64, 1.5, -0.7]);
        let beta = Array1::from(vec![0.1f64, 0.0, 0.3]);
        let probe = rand2(&mut rng, 12, 3).mapv(f64::from);
        // f64 reference of the same formula for a scalar objective <y, probe>.
        let objective = |x: &Array2<f64>| -> f64 {
            let m = x.nrows() as f64;
            let mean = x.mean_axis(Axis(0)).unwrap();
            let cen = x - &mean;
            let var = cen.mapv(|v| v * v).sum_axis(Axis(0)) / m;
            let y = &cen / &var.mapv(|v| (v + 1e-5).sqrt()) * &gamma + &beta;
            (&y * &probe).sum()
        };
        let xf = x.mapv(|v| v as f32);
        let (_, cache, _, _) = batch_norm_train(&xf, &gamma.mapv(|v| v as f32), &beta.mapv(|v| v as f32), 1e-5);
        let (dx, _, _) = batch_norm_backward(&probe.mapv(|v| v as f32), &cache, &gamma.mapv(|v| v as f32));
        let h = 1e-6;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let num = (objective(&xp) - objective(&xm)) / (2.0 * h);
                assert!((num - dx[[i, j]] as f64).abs() < 1e-3, "{num} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn eval_norm_with_batch_stats_matches_train_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand2(&mut rng, 20, 2);
        let gamma = Array1::from(vec![1.2f32, 0.8]);
        let beta = Array1::from(vec![0.0f32, 0.5]);
        let (y, _, mean, unbiased) = batch_norm_train(&x, &gamma, &beta, 1e-5);
        let biased = unbiased * (19.0 / 20.0);
        let y2 = batch_norm_eval(&x, &gamma, &beta, &mean, &biased, 1e-5);
        for (a, b) in y.iter().zip(y2.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn pooling_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = FeatureMap {
            data: rand2(&mut rng, 3 * 4 * 2, 5),
            n: 3,
            h: 4,
            w: 2,
        };
        let g = rand2(&mut rng, 3, 5);
        let lhs = (&global_avg_pool(&x) * &g).sum();
        let rhs = (&x.data * &global_avg_pool_backward(&g, 3, 4, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
