//! Softplus MLP with exact input gradients and exact parameter gradients
//! of losses that depend on those input gradients.
//!
//! Evaluation is batched. Each layer input is a `4N x in` matrix: rows
//! `0..N` hold activations, rows `N*(1+k)..N*(2+k)` hold their tangents
//! along input axis `k` (forward mode). Reverse mode then runs over that
//! stacked graph, which yields second-order terms (through the Softplus
//! curvature) for free.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::Encoding;
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub encoding: Encoding,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Zero-based hidden layer whose input is `[q_prev, gamma(xi)]`.
    pub skip_layer: usize,
    /// Softplus sharpness.
    pub softplus_beta: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            encoding: Encoding::default(),
            hidden_layers: 4,
            hidden_width: 256,
            skip_layer: 2,
            softplus_beta: 100.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::invalid("network needs at least one hidden unit"));
        }
        if self.skip_layer == 0 || self.skip_layer >= self.hidden_layers {
            return Err(Error::invalid("skip layer must be an interior hidden layer"));
        }
        if !(self.softplus_beta.is_finite() && self.softplus_beta > 0.0) {
            return Err(Error::invalid("softplus beta must be positive"));
        }
        Ok(())
    }

    /// `(out, in)` for every hidden layer followed by the output layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let enc = self.encoding.output_dim();
        let w = self.hidden_width;
        let mut shapes: Vec<_> = (0..self.hidden_layers)
            .map(|i| match i {
                0 => (w, enc),
                i if i == self.skip_layer => (w, w + enc),
                _ => (w, w),
            })
            .collect();
        shapes.push((1, w));
        shapes
    }
}

/// One affine map `z = W q + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `out x in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// All learnable parameters. Also used as the container for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub config: NetworkConfig,
    /// Hidden layers, then the scalar output layer.
    pub layers: Vec<Dense<T>>,
}

/// Sets flush-to-zero and denormals-are-zero on the current thread while
/// alive. Saturated Softplus slopes underflow into the subnormal range, where
/// x86 arithmetic is two orders of magnitude slower.
struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    fn new() -> Self {
        let mut saved = 0u32;
        // SAFETY: reads and writes only the SSE control register; FTZ and DAZ
        // change the results of subnormal operations, nothing else.
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut saved, options(nostack));
            let flushed = saved | 0x8040;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &flushed, options(nostack));
        }
        Self { saved }
    }

    #[cfg(not(target_arch = "x86_64"))]
    fn new() -> Self {
        Self {}
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        // SAFETY: restores the value read in `new`.
        #[cfg(target_arch = "x86_64")]
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &self.saved, options(nostack));
        }
    }
}

/// Softplus and its derivative `sigmoid(beta z)` from a single exponential.
#[inline]
fn softplus_and_slope<T: Scalar>(z: T, beta: T) -> (T, T) {
    let x = beta * z;
    // clamped so exp(-a) stays normal: 87 for f32, 708 for f64
    let a = x.abs().min(T::from_f64(T::UNDERFLOW));
    let e = (-a).exp();
    let inv = T::one() / (T::one() + e);
    let slope = if x >= T::zero() { inv } else { e * inv };
    ((x.max(T::zero()) + e.ln_1p()) / beta, slope)
}

impl<T: Scalar> NetworkParams<T> {
    /// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let bound = 1.0 / (inp as f64).sqrt();
                let mut draw = || T::from_f64(rng.random_range(-bound..bound));
                let weight = Array2::from_shape_simple_fn((out, inp), &mut draw);
                let bias = Array1::from_shape_simple_fn(out, &mut draw);
                Dense { weight, bias }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Parameters with every entry zero.
    pub fn zeros(config: NetworkConfig) -> Self {
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| Dense {
                weight: Array2::zeros((out, inp)),
                bias: Array1::zeros(out),
            })
            .collect();
        Self { config, layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, ((out, inp), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.weight.dim() != (*out, *inp) || layer.bias.len() != *out {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {out}x{inp}, found {:?} with bias {}",
                    layer.weight.dim(),
                    layer.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// Reads parameter `index` in [`tensors`](Self::tensors) order.
    pub fn get_flat(&self, index: usize) -> T {
        let mut i = index;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    pub fn set_flat(&mut self, index: usize, value: T) {
        let mut i = index;
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = value;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {index} out of range")
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + scale * *y;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|x| U::from_f64(x.to_f64())),
                    bias: l.bias.mapv(|x| U::from_f64(x.to_f64())),
                })
                .collect(),
        }
    }

    /// Evaluates `h` (and `grad h` when `with_gradient`) at every row of
    /// `points` (`N x 3`), keeping what reverse mode needs.
    pub fn evaluate(&self, points: ArrayView2<T>, with_gradient: bool) -> Result<Evaluation<T>> {
        self.validate()?;
        if points.ncols() != 3 {
            return Err(Error::Shape(format!("points must be Nx3, got {:?}", points.dim())));
        }
        Ok(self.evaluate_unchecked(points, with_gradient))
    }

    fn evaluate_unchecked(&self, points: ArrayView2<T>, with_gradient: bool) -> Evaluation<T> {
        let _flush = FlushDenormals::new();
        let cfg = &self.config;
        let n = points.nrows();
        let streams = if with_gradient { 4 } else { 1 };
        let rows = streams * n;
        let enc_dim = cfg.encoding.output_dim();
        let freqs: Vec<T> = cfg.encoding.frequencies().into_iter().map(T::from_f64).collect();
        let beta = T::from_f64(cfg.softplus_beta);

        let mut gamma = Array2::<T>::zeros((rows, enc_dim));
        let mut val = vec![T::zero(); enc_dim];
        let mut tan = [vec![T::zero(); enc_dim], vec![T::zero(); enc_dim], vec![T::zero(); enc_dim]];
        for p in 0..n {
            let xi = [points[[p, 0]], points[[p, 1]], points[[p, 2]]];
            if with_gradient {
                let [t0, t1, t2] = &mut tan;
                cfg.encoding.encode_into(&freqs, xi, &mut val, Some([t0, t1, t2]));
                for (k, t) in tan.iter().enumerate() {
                    gamma.row_mut((k + 1) * n + p).assign(&ArrayView1::from(t.as_slice()));
                }
            } else {
                cfg.encoding.encode_into(&freqs, xi, &mut val, None);
            }
            gamma.row_mut(p).assign(&ArrayView1::from(val.as_slice()));
        }

        // inputs[i] is the activation entering hidden layer i (gamma for
        // i = 0); the skip layer additionally reads inputs[0]
        let mut inputs = Vec::with_capacity(cfg.hidden_layers + 1);
        let mut pre = Vec::with_capacity(cfg.hidden_layers);
        let mut slopes = Vec::with_capacity(cfg.hidden_layers);
        inputs.push(gamma);
        for (i, layer) in self.layers[..cfg.hidden_layers].iter().enumerate() {
            let mut z = Array2::<T>::zeros((rows, layer.weight.nrows()));
            let q = &inputs[i];
            if i == cfg.skip_layer && i > 0 {
                let (w_q, w_gamma) = layer.weight.view().split_at(Axis(1), q.ncols());
                general_mat_mul(T::one(), q, &w_q.t(), T::zero(), &mut z);
                general_mat_mul(T::one(), &inputs[0], &w_gamma.t(), T::one(), &mut z);
            } else {
                general_mat_mul(T::one(), q, &layer.weight.t(), T::zero(), &mut z);
            }
            {
                let bias = layer.bias.as_slice().expect("contiguous");
                let zs = z.as_slice_mut().expect("contiguous");
                let width = bias.len();
                for row in zs[..n * width].chunks_exact_mut(width) {
                    for (x, b) in row.iter_mut().zip(bias) {
                        *x = *x + *b;
                    }
                }
            }
            let mut next = Array2::<T>::zeros(z.dim());
            let m = n * z.ncols();
            let mut sg = vec![T::zero(); m];
            {
                let zs = z.as_slice().expect("contiguous");
                let qs = next.as_slice_mut().expect("contiguous");
                for j in 0..m {
                    let (sp, s) = softplus_and_slope(zs[j], beta);
                    qs[j] = sp;
                    sg[j] = s;
                }
                for k in 1..streams {
                    let off = k * m;
                    for j in 0..m {
                        qs[off + j] = sg[j] * zs[off + j];
                    }
                }
            }
            inputs.push(next);
            pre.push(z);
            slopes.push(sg);
        }

        let out_layer = &self.layers[cfg.hidden_layers];
        let w = out_layer.weight.row(0);
        let all = inputs[cfg.hidden_layers].dot(&w);
        let c = out_layer.bias[0];
        let h = all.slice(s![..n]).mapv(|x| x + c);
        let grad = if with_gradient {
            let mut g = Array2::<T>::zeros((n, 3));
            for k in 0..3 {
                g.column_mut(k).assign(&all.slice(s![(k + 1) * n..(k + 2) * n]));
            }
            Some(g)
        } else {
            None
        };
        Evaluation {
            n,
            h,
            grad,
            inputs,
            pre,
            slopes,
        }
    }

    /// Parameter gradient of `sum_p dl_dh[p] * h_p + dl_dgrad[p] . grad h_p`,
    /// i.e. the chain rule applied to a loss whose partials with respect to
    /// each point's value and input gradient are given.
    pub fn backward(
        &self,
        eval: &Evaluation<T>,
        dl_dh: ArrayView1<T>,
        dl_dgrad: Option<ArrayView2<T>>,
    ) -> Result<NetworkParams<T>> {
        let n = eval.n;
        if dl_dh.len() != n {
            return Err(Error::Shape("dl_dh length differs from batch size".into()));
        }
        let streams = if eval.grad.is_some() { 4 } else { 1 };
        if dl_dgrad.is_some() && streams == 1 {
            return Err(Error::Shape("input-gradient partials need an evaluation with gradients".into()));
        }
        if let Some(g) = &dl_dgrad {
            if g.dim() != (n, 3) {
                return Err(Error::Shape("dl_dgrad must be Nx3".into()));
            }
        }
        let cfg = &self.config;
        let beta = T::from_f64(cfg.softplus_beta);
        let rows = streams * n;
        let _flush = FlushDenormals::new();
        let mut grads = self.zeros_like();

        // upstream partials of the output layer, stacked like the activations
        let mut g_out = Array1::<T>::zeros(rows);
        g_out.slice_mut(s![..n]).assign(&dl_dh);
        if let Some(g) = &dl_dgrad {
            for k in 0..3 {
                g_out.slice_mut(s![(k + 1) * n..(k + 2) * n]).assign(&g.column(k));
            }
        }
        let last = &eval.inputs[cfg.hidden_layers];
        let out_grad = &mut grads.layers[cfg.hidden_layers];
        out_grad.weight.row_mut(0).assign(&last.t().dot(&g_out));
        out_grad.bias[0] = dl_dh.sum();

        let w_out = self.layers[cfg.hidden_layers].weight.row(0);
        let mut g_q = &g_out.view().insert_axis(Axis(1)) * &w_out.insert_axis(Axis(0));

        for i in (0..cfg.hidden_layers).rev() {
            let z = &eval.pre[i];
            let width = z.ncols();
            // g_z from g_q through the Softplus (and its tangent map)
            let mut g_z = Array2::<T>::zeros((rows, width));
            {
                let zs = z.as_slice().expect("contiguous");
                let slope = &eval.slopes[i];
                let gq = g_q.as_slice().expect("contiguous");
                let gz = g_z.as_slice_mut().expect("contiguous");
                let m = n * width;
                for j in 0..m {
                    let sg = slope[j];
                    let mut acc = gq[j] * sg;
                    if streams == 4 {
                        let curv = beta * sg * (T::one() - sg);
                        for k in 1..4 {
                            let off = k * m;
                            acc = acc + gq[off + j] * curv * zs[off + j];
                            gz[off + j] = gq[off + j] * sg;
                        }
                    }
                    gz[j] = acc;
                }
            }
            let input = &eval.inputs[i];
            let layer_grad = &mut grads.layers[i];
            if i == cfg.skip_layer && i > 0 {
                let (g_q_part, g_gamma_part) = layer_grad.weight.view_mut().split_at(Axis(1), input.ncols());
                let mut g_q_part = g_q_part;
                let mut g_gamma_part = g_gamma_part;
                general_mat_mul(T::one(), &g_z.t(), input, T::zero(), &mut g_q_part);
                general_mat_mul(T::one(), &g_z.t(), &eval.inputs[0], T::zero(), &mut g_gamma_part);
            } else {
                general_mat_mul(T::one(), &g_z.t(), input, T::zero(), &mut layer_grad.weight);
            }
            layer_grad.bias.assign(&g_z.slice(s![..n, ..]).sum_axis(Axis(0)));

            if i > 0 {
                let w_q = self.layers[i].weight.slice(s![.., ..input.ncols()]);
                g_q = Array2::<T>::zeros((rows, input.ncols()));
                general_mat_mul(T::one(), &g_z, &w_q, T::zero(), &mut g_q);
            }
        }
        Ok(grads)
    }

    /// `h(xi)` at a single point.
    pub fn forward(&self, xi: [T; 3]) -> Result<T> {
        let pts = Array2::from_shape_vec((1, 3), xi.to_vec()).expect("1x3");
        Ok(self.evaluate(pts.view(), false)?.h[0])
    }

    /// `(h(xi), grad h(xi))` at a single point.
    pub fn value_and_gradient(&self, xi: [T; 3]) -> Result<(T, [T; 3])> {
        let pts = Array2::from_shape_vec((1, 3), xi.to_vec()).expect("1x3");
        let e = self.evaluate(pts.view(), true)?;
        let g = e.grad.as_ref().expect("requested gradient");
        Ok((e.h[0], [g[[0, 0]], g[[0, 1]], g[[0, 2]]]))
    }

    pub fn input_gradient(&self, xi: [T; 3]) -> Result<[T; 3]> {
        Ok(self.value_and_gradient(xi)?.1)
    }
}

/// Batched outputs plus the cached activations needed by
/// [`NetworkParams::backward`].
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    n: usize,
    pub h: Array1<T>,
    /// `N x 3`, present when evaluated with gradients.
    pub grad: Option<Array2<T>>,
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    /// `sigmoid(beta z)` of the value rows of each hidden layer.
    slopes: Vec<Vec<T>>,
}

impl<T> Evaluation<T> {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
