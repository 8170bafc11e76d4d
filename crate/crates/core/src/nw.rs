//! Trainable Nadaraya-Watson layer.
//!
//! For every output channel `o` and pixel `p`:
//!
//! ```text
//! num[o](p) = sum_{c,i,j} S[c](p + (i,j)) * w[o][c][i][j]
//! den[o](p) = sum_{c,i,j} M[c](p + (i,j)) * |w[o][c][i][j]|
//! R[o](p)   = num / (den + eps) + b[o]
//! M_up[o]   = den
//! ```
//!
//! Signal and mask are zero-padded at the border. With several input
//! channels numerator and denominator are summed jointly over channels.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{corr_accumulate, corr_backward_input, corr_backward_weights, window_side, Tensor};

/// Stabilizer added to the denominator where no informative pixel is in range.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Mean and spread of the initial (positive) NW weights before normalization.
pub const INIT_MEAN: f64 = 0.2;
pub const INIT_STD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct NwKernel {
    pub t: usize,
    pub c_in: usize,
    pub k: usize,
    /// `[t][c_in][2k+1][2k+1]`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl NwKernel {
    pub fn new(t: usize, c_in: usize, k: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n = t * c_in * window_side(k) * window_side(k);
        if weights.len() != n || bias.len() != t {
            return Err(Error::Shape(format!(
                "NW kernel {t}x{c_in}x{0}x{0} needs {n} weights and {t} biases, got {1} and {2}",
                window_side(k),
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::Data("non-finite NW kernel parameter".into()));
        }
        Ok(Self {
            t,
            c_in,
            k,
            weights,
            bias,
        })
    }

    /// Positive truncated-normal initialization, L1-normalized per output channel.
    pub fn init<R: Rng>(t: usize, c_in: usize, k: usize, rng: &mut R) -> Self {
        let n = t * c_in * window_side(k) * window_side(k);
        let mut weights = truncated_normal(rng, INIT_MEAN, INIT_STD, n);
        normalize_weights(&mut weights, t).expect("positive weights have non-zero norm");
        Self {
            t,
            c_in,
            k,
            weights,
            bias: vec![0.0; t],
        }
    }

    pub fn per_channel(&self) -> usize {
        self.c_in * window_side(self.k) * window_side(self.k)
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        normalize_weights(&mut out.weights, self.t)?;
        Ok(out)
    }
}

/// Samples from `N(mean, std^2)` restricted to `mean +- 2 std` by rejection.
pub fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, std: f64, n: usize) -> Vec<f64> {
    let dist = Normal::new(mean, std).expect("finite parameters");
    let (lo, hi) = (mean - 2.0 * std, mean + 2.0 * std);
    (0..n)
        .map(|_| loop {
            let x = dist.sample(rng);
            if x >= lo && x <= hi {
                break x;
            }
        })
        .collect()
}

/// Divides each of the `t` output-channel blocks by its L1 norm.
pub fn normalize_weights(weights: &mut [f64], t: usize) -> Result<()> {
    let per = weights.len() / t;
    for (o, block) in weights.chunks_mut(per).enumerate() {
        let l1: f64 = block.iter().map(|w| w.abs()).sum();
        if !(l1 > 0.0) || !l1.is_finite() {
            return Err(Error::ZeroKernel(o));
        }
        for w in block.iter_mut() {
            *w /= l1;
        }
    }
    Ok(())
}

pub fn normalize_kernel(kernel: &NwKernel) -> Result<NwKernel> {
    kernel.normalized()
}

/// Reconstructed maps plus (optionally) their sparsity masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub r: Tensor,
    pub m: Option<Tensor>,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct NwCache {
    pub s: Tensor,
    pub m: Tensor,
    /// Numerator divided by the stabilized denominator, i.e. `R - b`.
    pub ratio: Tensor,
    /// `den + eps`
    pub den_eps: Tensor,
}

/// Raw forward on parameter slices. Returns `(R, M_up, cache)`.
pub fn forward_raw(
    s: &Tensor,
    m: &Tensor,
    weights: &[f64],
    bias: &[f64],
    k: usize,
    eps: f64,
) -> Result<(Tensor, Tensor, NwCache)> {
    if !s.same_shape(m) {
        return Err(Error::Shape(format!(
            "signal {}x{}x{} vs mask {}x{}x{}",
            s.channels, s.height, s.width, m.channels, m.height, m.width
        )));
    }
    let t = bias.len();
    let abs_w: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let mut num = Tensor::zeros(t, s.height, s.width);
    corr_accumulate(s, weights, k, &mut num)?;
    let mut den = Tensor::zeros(t, s.height, s.width);
    corr_accumulate(m, &abs_w, k, &mut den)?;

    let plane = s.plane();
    let mut r = Tensor::zeros(t, s.height, s.width);
    let mut ratio = num;
    let mut den_eps = den.clone();
    for o in 0..t {
        let b = bias[o];
        let range = o * plane..(o + 1) * plane;
        for ((q, d), out) in ratio.data[range.clone()]
            .iter_mut()
            .zip(&mut den_eps.data[range.clone()])
            .zip(&mut r.data[range])
        {
            *d += eps;
            *q /= *d;
            *out = *q + b;
        }
    }
    Ok((
        r,
        den,
        NwCache {
            s: s.clone(),
            m: m.clone(),
            ratio,
            den_eps,
        },
    ))
}

/// Gradients of one NW evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NwGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub s: Tensor,
    pub m: Tensor,
}

/// Reverse pass of [`forward_raw`]. `grad_m_up` is the incoming gradient on the
/// updated mask when a later NW layer consumed it.
pub fn backward_raw(
    grad_r: &Tensor,
    grad_m_up: Option<&Tensor>,
    cache: &NwCache,
    weights: &[f64],
    k: usize,
) -> Result<NwGrads> {
    let t = grad_r.channels;
    if !grad_r.same_shape(&cache.ratio) {
        return Err(Error::Shape("NW output gradient does not match cached output".into()));
    }
    let plane = grad_r.plane();
    let mut bias = vec![0.0; t];
    let mut g_num = Tensor::zeros(t, grad_r.height, grad_r.width);
    let mut g_den = Tensor::zeros(t, grad_r.height, grad_r.width);
    for o in 0..t {
        let range = o * plane..(o + 1) * plane;
        let gr = &grad_r.data[range.clone()];
        bias[o] = gr.iter().sum();
        for (i, &g) in gr.iter().enumerate() {
            let idx = o * plane + i;
            let d = cache.den_eps.data[idx];
            g_num.data[idx] = g / d;
            g_den.data[idx] = -g * cache.ratio.data[idx] / d;
        }
    }
    if let Some(gm) = grad_m_up {
        if !gm.same_shape(&g_den) {
            return Err(Error::Shape("mask gradient does not match cached output".into()));
        }
        g_den.add_assign(gm);
    }

    let abs_w: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let mut g_s = Tensor::zeros(cache.s.channels, cache.s.height, cache.s.width);
    corr_backward_input(&g_num, weights, k, &mut g_s)?;
    let mut g_m = Tensor::zeros(cache.m.channels, cache.m.height, cache.m.width);
    corr_backward_input(&g_den, &abs_w, k, &mut g_m)?;

    let mut g_w = vec![0.0; weights.len()];
    corr_backward_weights(&g_num, &cache.s, k, &mut g_w)?;
    let mut g_abs = vec![0.0; weights.len()];
    corr_backward_weights(&g_den, &cache.m, k, &mut g_abs)?;
    for ((g, ga), w) in g_w.iter_mut().zip(&g_abs).zip(weights) {
        // d|w|/dw with the subgradient 0 at w = 0
        let sign = if *w > 0.0 {
            1.0
        } else if *w < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g += sign * ga;
    }
    Ok(NwGrads {
        weights: g_w,
        bias,
        s: g_s,
        m: g_m,
    })
}

/// A single NW layer holding its kernel and the cache of its last forward pass.
#[derive(Debug, Clone)]
pub struct NwLayer {
    pub kernel: NwKernel,
    pub eps: f64,
    cache: Option<NwCache>,
}

impl NwLayer {
    pub fn new(kernel: NwKernel, eps: f64) -> Self {
        Self {
            kernel,
            eps,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &FeatureStack) -> Result<FeatureStack> {
        let m = input
            .m
            .as_ref()
            .ok_or_else(|| Error::Shape("NW layer input has no mask".into()))?;
        if input.r.channels != self.kernel.c_in {
            return Err(Error::Shape(format!(
                "NW layer expects {} input channels, got {}",
                self.kernel.c_in, input.r.channels
            )));
        }
        let (r, m_up, cache) = forward_raw(
            &input.r,
            m,
            &self.kernel.weights,
            &self.kernel.bias,
            self.kernel.k,
            self.eps,
        )?;
        self.cache = Some(cache);
        Ok(FeatureStack { r, m: Some(m_up) })
    }

    pub fn backward(&self, grad_r: &Tensor, grad_m_up: Option<&Tensor>) -> Result<NwGrads> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("NW backward called before forward".into()))?;
        backward_raw(grad_r, grad_m_up, cache, &self.kernel.weights, self.kernel.k)
    }
}

/// Stateless forward used by tests and tools.
pub fn nw_forward(input: &FeatureStack, kernel: &NwKernel, eps: f64) -> Result<FeatureStack> {
    NwLayer::new(kernel.clone(), eps).forward(input)
}

/// Truncated Gaussian kernel `exp(-d^2 / 2 sigma^2)`, `d <= 3 sigma`, with
/// half-width `ceil(3 sigma)` and unit L1 norm.
pub fn gaussian_kernel(sigma: f64) -> NwKernel {
    let reach = crate::baseline::GAUSS_TRUNCATION * sigma;
    let k = reach.ceil() as usize;
    let side = window_side(k);
    let mut weights = vec![0.0; side * side];
    for ky in 0..side {
        for kx in 0..side {
            let dy = ky as f64 - k as f64;
            let dx = kx as f64 - k as f64;
            let d2 = dx * dx + dy * dy;
            if d2 <= reach * reach {
                weights[ky * side + kx] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    normalize_weights(&mut weights, 1).expect("centre tap is positive");
    NwKernel {
        t: 1,
        c_in: 1,
        k,
        weights,
        bias: vec![0.0],
    }
}
