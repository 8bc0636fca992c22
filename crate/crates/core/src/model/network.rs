use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, BnCache, FeatureMap};
use super::spec::ModelSpec;
use crate::error::{OpgError, Result};
use crate::losses::softmax_rows;
use crate::rng;

/// Rows per forward chunk at inference time.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `(9 * c_in) x c_out`, rows ordered `(ky, kx, c_in)`.
    pub weight: Array2<f32>,
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub stride: usize,
}

/// Trainable parameters plus normalization buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub blocks: Vec<ConvBlock>,
    /// `feature_width x (r + r')`.
    pub head_weight: Array2<f32>,
    pub head_bias: Array1<f32>,
    pub step_counter: u64,
}

/// Gradients in the same layout as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub conv_weight: Vec<Array2<f32>>,
    pub gamma: Vec<Array1<f32>>,
    pub beta: Vec<Array1<f32>>,
    pub head_weight: Array2<f32>,
    pub head_bias: Array1<f32>,
}

impl Grads {
    /// Flat views in [`ModelState::param_names`] order.
    pub fn slices(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for i in 0..self.conv_weight.len() {
            out.push(self.conv_weight[i].as_slice().expect("contiguous"));
            out.push(self.gamma[i].as_slice().expect("contiguous"));
            out.push(self.beta[i].as_slice().expect("contiguous"));
        }
        out.push(self.head_weight.as_slice().expect("contiguous"));
        out.push(self.head_bias.as_slice().expect("contiguous"));
        out
    }
}

struct BlockCache {
    cols: Array2<f32>,
    in_dims: (usize, usize, usize, usize),
    bn: BnCache,
    act: Array2<f32>,
}

/// Intermediate values from a training-mode forward pass.
pub struct TrainCache {
    blocks: Vec<BlockCache>,
    last_dims: (usize, usize, usize),
    features: Array2<f32>,
}

impl TrainCache {
    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }
}

impl ModelState {
    /// Kaiming-normal conv weights, unit BN scale, uniform head init.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let gain = (2.0 / (1.0 + spec.leaky_slope * spec.leaky_slope)).sqrt();
        let mut c_in = spec.input_shape.2;
        let mut blocks = Vec::with_capacity(spec.conv_layers.len());
        for layer in &spec.conv_layers {
            let fan_in = 9 * c_in;
            let normal = Normal::new(0.0f32, gain / (fan_in as f32).sqrt()).expect("finite std");
            let weight = Array2::from_shape_simple_fn((fan_in, layer.out_channels), || normal.sample(&mut rng));
            let c = layer.out_channels;
            blocks.push(ConvBlock {
                weight,
                gamma: Array1::ones(c),
                beta: Array1::zeros(c),
                running_mean: Array1::zeros(c),
                running_var: Array1::ones(c),
                stride: layer.stride,
            });
            c_in = c;
        }
        let f = spec.feature_width();
        let k = spec.head_width();
        let bound = 1.0 / (f as f32).sqrt();
        let head_weight = Array2::from_shape_simple_fn((f, k), || rng.gen_range(-bound..bound));
        let head_bias = Array1::from_shape_simple_fn(k, || rng.gen_range(-bound..bound));
        Ok(ModelState {
            spec,
            blocks,
            head_weight,
            head_bias,
            step_counter: 0,
        })
    }

    pub fn zero_head(&mut self) {
        self.head_weight.fill(0.0);
        self.head_bias.fill(0.0);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.blocks.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("bn{i}.gamma"));
            out.push(format!("bn{i}.beta"));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.weight.as_slice_mut().expect("contiguous"));
            out.push(b.gamma.as_slice_mut().expect("contiguous"));
            out.push(b.beta.as_slice_mut().expect("contiguous"));
        }
        out.push(self.head_weight.as_slice_mut().expect("contiguous"));
        out.push(self.head_bias.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.weight.as_slice().expect("contiguous"));
            out.push(b.gamma.as_slice().expect("contiguous"));
            out.push(b.beta.as_slice().expect("contiguous"));
        }
        out.push(self.head_weight.as_slice().expect("contiguous"));
        out.push(self.head_bias.as_slice().expect("contiguous"));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self
                .blocks
                .iter()
                .all(|b| b.running_mean.iter().chain(b.running_var.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, pixels: &Array4<f32>) -> Result<()> {
        let (_, h, w, c) = pixels.dim();
        if (h, w, c) != self.spec.input_shape {
            return Err(OpgError::Shape {
                expected: format!("{:?}", self.spec.input_shape),
                got: format!("{:?}", (h, w, c)),
            });
        }
        Ok(())
    }

    fn input_map(&self, pixels: &Array4<f32>) -> FeatureMap {
        let (n, h, w, c) = pixels.dim();
        let mut data = pixels
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * h * w, c))
            .expect("contiguous pixels");
        if let Some(norm) = &self.spec.normalize {
            let mean = Array1::from(norm.mean.clone());
            let std = Array1::from(norm.std.clone());
            data -= &mean;
            data /= &std;
        }
        FeatureMap { data, n, h, w }
    }

    fn features_eval(&self, pixels: &Array4<f32>) -> Array2<f32> {
        let mut x = self.input_map(pixels);
        let eps = self.spec.bn_eps;
        for b in &self.blocks {
            let (cols, ho, wo) = layers::im2col(&x, b.stride);
            let mut y = layers::batch_norm_eval(
                &cols.dot(&b.weight),
                &b.gamma,
                &b.beta,
                &b.running_mean,
                &b.running_var,
                eps,
            );
            layers::leaky_relu_inplace(&mut y, self.spec.leaky_slope);
            x = FeatureMap {
                data: y,
                n: x.n,
                h: ho,
                w: wo,
            };
        }
        layers::global_avg_pool(&x)
    }

    fn chunked<T>(&self, pixels: &Array4<f32>, f: impl Fn(&Array4<f32>) -> Array2<T>) -> Array2<T>
    where
        T: Clone,
    {
        let n = pixels.dim().0;
        if n <= EVAL_CHUNK {
            return f(pixels);
        }
        let parts: Vec<Array2<T>> = (0..n)
            .step_by(EVAL_CHUNK)
            .map(|s| {
                f(&pixels
                    .slice(ndarray::s![s..(s + EVAL_CHUNK).min(n), .., .., ..])
                    .to_owned())
            })
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("matching widths")
    }

    /// Pooled encoder output (the input of the linear head), inference mode.
    pub fn penultimate_features(&self, pixels: &Array4<f32>) -> Result<Array2<f32>> {
        self.check_input(pixels)?;
        Ok(self.chunked(pixels, |p| self.features_eval(p)))
    }

    /// Inference-mode logits, `n x (r + r')`.
    pub fn forward_logits(&self, pixels: &Array4<f32>) -> Result<Array2<f32>> {
        self.check_input(pixels)?;
        Ok(self.chunked(pixels, |p| {
            self.features_eval(p).dot(&self.head_weight) + &self.head_bias
        }))
    }

    /// Softmax over the full `r + r'` head.
    pub fn forward_probs(&self, pixels: &Array4<f32>) -> Result<Array2<f64>> {
        let logits = self.forward_logits(pixels)?.mapv(f64::from);
        Ok(softmax_rows(logits.view()))
    }

    /// Training-mode forward pass using batch statistics. Updates the
    /// running statistics of every normalization layer.
    pub fn forward_train(&mut self, pixels: &Array4<f32>) -> Result<(Array2<f32>, TrainCache)> {
        self.check_input(pixels)?;
        if pixels.dim().0 < 2 {
            return Err(OpgError::validation("training batches need at least 2 samples"));
        }
        let mut x = self.input_map(pixels);
        let eps = self.spec.bn_eps;
        let mom = self.spec.bn_momentum;
        let slope = self.spec.leaky_slope;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let in_dims = (x.n, x.h, x.w, x.channels());
            let (cols, ho, wo) = layers::im2col(&x, b.stride);
            let pre = cols.dot(&b.weight);
            let (mut y, bn, mean, var) = layers::batch_norm_train(&pre, &b.gamma, &b.beta, eps);
            b.running_mean = &b.running_mean * (1.0 - mom) + &(mean * mom);
            b.running_var = &b.running_var * (1.0 - mom) + &(var * mom);
            layers::leaky_relu_inplace(&mut y, slope);
            caches.push(BlockCache {
                cols,
                in_dims,
                bn,
                act: y.clone(),
            });
            x = FeatureMap {
                data: y,
                n: x.n,
                h: ho,
                w: wo,
            };
        }
        let features = layers::global_avg_pool(&x);
        let logits = features.dot(&self.head_weight) + &self.head_bias;
        let cache = TrainCache {
            blocks: caches,
            last_dims: (x.n, x.h, x.w),
            features,
        };
        Ok((logits, cache))
    }

    /// Backpropagates a logit gradient through a cached training pass.
    pub fn backward(&self, cache: &TrainCache, dlogits: &Array2<f32>) -> Grads {
        let head_weight = cache.features.t().dot(dlogits);
        let head_bias = dlogits.sum_axis(Axis(0));
        let dfeat = dlogits.dot(&self.head_weight.t());
        let (n, h, w) = cache.last_dims;
        let mut dx = layers::global_avg_pool_backward(&dfeat, n, h, w);
        let nb = self.blocks.len();
        let mut conv_weight = vec![Array2::zeros((0, 0)); nb];
        let mut gamma = vec![Array1::zeros(0); nb];
        let mut beta = vec![Array1::zeros(0); nb];
        for i in (0..nb).rev() {
            let b = &self.blocks[i];
            let c = &cache.blocks[i];
            layers::leaky_relu_backward(&mut dx, &c.act, self.spec.leaky_slope);
            let (dpre, dg, db) = layers::batch_norm_backward(&dx, &c.bn, &b.gamma);
            conv_weight[i] = c.cols.t().dot(&dpre);
            gamma[i] = dg;
            beta[i] = db;
            if i > 0 {
                let dcols = dpre.dot(&b.weight.t());
                let (n, h, w, ch) = c.in_dims;
                dx = layers::col2im(&dcols, n, h, w, ch, b.stride);
            }
        }
        Grads {
            conv_weight,
            gamma,
            beta,
            head_weight,
            head_bias,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvLayer, ModelSpec, Preset};
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> ModelSpec {
        ModelSpec {
            conv_layers: vec![
                ConvLayer {
                    out_channels: 4,
                    stride: 1,
                },
                ConvLayer {
                    out_channels: 6,
                    stride: 2,
                },
            ],
            ..ModelSpec::from_preset(Preset::Desk, 2, 3, (5, 5, 2))
        }
    }

    fn pixels(rng: &mut ChaCha8Rng, n: usize, shape: (usize, usize, usize)) -> Array4<f32> {
        Array::from_shape_fn((n, shape.0, shape.1, shape.2), |_| rng.gen_range(0.0f32..1.0))
    }

    #[test]
    fn logits_have_head_width() {
        let spec = ModelSpec::from_preset(Preset::Desk, 6, 94, (8, 8, 3));
        let m = ModelState::new(spec, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = m.forward_logits(&pixels(&mut rng, 5, (8, 8, 3))).unwrap();
        assert_eq!(z.dim(), (5, 100));
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_head_gives_zero_logits_and_uniform_probs() {
        let spec = ModelSpec::from_preset(Preset::Desk, 6, 94, (8, 8, 3));
        let mut m = ModelState::new(spec, 1).unwrap();
        m.zero_head();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = pixels(&mut rng, 3, (8, 8, 3));
        assert!(m.forward_logits(&x).unwrap().iter().all(|&v| v == 0.0));
        assert!(m.forward_probs(&x).unwrap().iter().all(|&v| (v - 0.01).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = ModelState::new(tiny_spec(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            m.forward_logits(&pixels(&mut rng, 2, (6, 5, 2))),
            Err(OpgError::Shape { .. })
        ));
    }

    #[test]
    fn duplicated_rows_give_identical_outputs() {
        let m = ModelState::new(tiny_spec(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let one = pixels(&mut rng, 1, (5, 5, 2));
        let two = ndarray::concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let z = m.forward_logits(&two).unwrap();
        assert_eq!(z.row(0), z.row(1));
        let f = m.penultimate_features(&two).unwrap();
        assert_eq!(f.ncols(), m.spec.feature_width());
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn inference_is_batch_size_independent() {
        let mut m = ModelState::new(tiny_spec(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Move running stats away from their init.
        let warm = pixels(&mut rng, 8, (5, 5, 2));
        m.forward_train(&warm).unwrap();
        let x = pixels(&mut rng, 7, (5, 5, 2));
        let full = m.penultimate_features(&x).unwrap();
        let a = m
            .penultimate_features(&x.slice(ndarray::s![..3, .., .., ..]).to_owned())
            .unwrap();
        let b = m
            .penultimate_features(&x.slice(ndarray::s![3.., .., .., ..]).to_owned())
            .unwrap();
        let joined = ndarray::concatenate(Axis(0), &[a.view(), b.view()]).unwrap();
        for (u, v) in full.iter().zip(joined.iter()) {
            assert!((u - v).abs() < 1e-5);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let m = ModelState::new(tiny_spec(), seed).unwrap();
            let p = m.forward_probs(&pixels(&mut rng, 4, (5, 5, 2))).unwrap();
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    /// Whole-network backward pass against central differences of a linear
    /// probe of the training-mode logits.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = ModelState::new(tiny_spec(), 6).unwrap();
        let x = pixels(&mut rng, 3, (5, 5, 2));
        let probe = Array::from_shape_fn((3, 5), |_| rng.gen_range(-1.0f32..1.0));
        let objective = |m: &ModelState| -> f64 {
            let (z, _) = m.clone().forward_train(&x).unwrap();
            z.iter()
                .zip(probe.iter())
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum()
        };
        let (_, cache) = base.clone().forward_train(&x).unwrap();
        let grads = base.backward(&cache, &probe);
        let analytic = grads.slices();
        let h = 1e-3f32;
        let mut worst = 0.0f64;
        for (pi, g) in analytic.iter().enumerate() {
            for idx in (0..g.len()).step_by(7) {
                let mut plus = base.clone();
                plus.param_slices_mut()[pi][idx] += h;
                let mut minus = base.clone();
                minus.param_slices_mut()[pi][idx] -= h;
                let num = (objective(&plus) - objective(&minus)) / (2.0 * f64::from(h));
                let err = (num - f64::from(g[idx])).abs() / (num.abs().max(f64::from(g[idx]).abs()).max(0.05));
                worst = worst.max(err);
            }
        }
        assert!(worst < 2e-2, "worst relative error {worst}");
    }
}
