//! Size-preserving super-resolution networks: convolution and residual
//! layers, the CNNnetSR stack, and NWnetSR which swaps its head for a chain of
//! NW layers fed by the sparse signal and its mask.
//!
//! Parameters of a network live in one flat vector; every layer addresses its
//! weights and biases through offsets into it. Backward is explicit
//! reverse-mode over the fixed chain using activations cached by the forward
//! pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nw::{self, NwCache};
use crate::tensor::{corr_accumulate, corr_backward_input, corr_backward_weights, window_side, Tensor};

/// Output channels of the convolution that stands in for the upsampling stage.
pub const TAIL_FILTERS: usize = 32;
/// Half-width of the 3x3 convolutions.
const CONV_K: usize = 1;
/// Half-width of the first (9x9) NW layer; deeper NW layers are 3x3.
pub const FIRST_NW_K: usize = 4;

// ---------------------------------------------------------------------------
// Plain convolution

#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub t: usize,
    pub c_in: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(t: usize, c_in: usize, k: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n = t * c_in * window_side(k) * window_side(k);
        if weights.len() != n || bias.len() != t {
            return Err(Error::Shape(format!(
                "conv kernel needs {n} weights and {t} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            t,
            c_in,
            k,
            weights,
            bias,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Tensor,
}

fn conv_raw(input: &Tensor, weights: &[f64], bias: &[f64], k: usize) -> Result<Tensor> {
    let mut out = Tensor::zeros(bias.len(), input.height, input.width);
    for (o, &b) in bias.iter().enumerate() {
        out.channel_mut(o).fill(b);
    }
    corr_accumulate(input, weights, k, &mut out)?;
    Ok(out)
}

pub fn conv_forward(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    if input.channels != kernel.c_in {
        return Err(Error::Shape(format!(
            "conv expects {} channels, got {}",
            kernel.c_in, input.channels
        )));
    }
    conv_raw(input, &kernel.weights, &kernel.bias, kernel.k)
}

pub fn conv_backward(input: &Tensor, kernel: &ConvKernel, grad_out: &Tensor) -> Result<ConvGrads> {
    if grad_out.channels != kernel.t || grad_out.height != input.height || grad_out.width != input.width {
        return Err(Error::Shape("conv output gradient shape mismatch".into()));
    }
    let mut weights = vec![0.0; kernel.weights.len()];
    corr_backward_weights(grad_out, input, kernel.k, &mut weights)?;
    let bias = (0..kernel.t).map(|o| grad_out.channel(o).iter().sum()).collect();
    let mut g_in = Tensor::zeros(input.channels, input.height, input.width);
    corr_backward_input(grad_out, &kernel.weights, kernel.k, &mut g_in)?;
    Ok(ConvGrads {
        weights,
        bias,
        input: g_in,
    })
}

fn relu(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..x.clone()
    }
}

fn relu_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &x) in grad.data.iter_mut().zip(&pre.data) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}

// ---------------------------------------------------------------------------
// Architecture

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Convolutional head; dense (reconstructed or zero-filled sparse) input.
    Cnn,
    /// NW head; sparse signal plus mask input.
    Nw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ArchKind,
    pub blocks: usize,
    pub filters: usize,
    /// Number of NW layers in the head (0 for the convolutional head).
    pub nw_depth: usize,
}

impl Architecture {
    pub fn cnn(blocks: usize, filters: usize) -> Self {
        Self {
            kind: ArchKind::Cnn,
            blocks,
            filters,
            nw_depth: 0,
        }
    }

    pub fn nw(blocks: usize, filters: usize, nw_depth: usize) -> Self {
        Self {
            kind: ArchKind::Nw,
            blocks,
            filters,
            nw_depth,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.filters == 0 {
            return Err(Error::Config("blocks and filters must be at least 1".into()));
        }
        match self.kind {
            ArchKind::Nw if self.nw_depth == 0 => {
                Err(Error::Config("NW head needs nw_depth >= 1".into()))
            }
            ArchKind::Cnn if self.nw_depth != 0 => {
                Err(Error::Config("convolutional head takes no NW layers".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Structural description of one layer, used for checkpoints and comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv { c_in: usize, c_out: usize, k: usize },
    Nw { c_in: usize, c_out: usize, k: usize },
    Relu,
    ResidualBlock { filters: usize, k: usize },
    SkipAdd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpec {
    c_in: usize,
    c_out: usize,
    k: usize,
    w_off: usize,
    b_off: usize,
}

impl LayerSpec {
    fn weight_count(&self) -> usize {
        self.c_out * self.c_in * window_side(self.k) * window_side(self.k)
    }

    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w_off..self.w_off + self.weight_count()]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b_off..self.b_off + self.c_out]
    }
}

struct Allocator {
    next: usize,
}

impl Allocator {
    fn layer(&mut self, c_in: usize, c_out: usize, k: usize) -> LayerSpec {
        let w_off = self.next;
        let b_off = w_off + c_out * c_in * window_side(k) * window_side(k);
        self.next = b_off + c_out;
        LayerSpec {
            c_in,
            c_out,
            k,
            w_off,
            b_off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Head {
    Conv(LayerSpec),
    Nw(Vec<LayerSpec>),
}

/// Network input matching the head type.
#[derive(Debug, Clone)]
pub enum NetInput {
    Dense(Tensor),
    Sparse { s: Tensor, m: Tensor },
}

impl NetInput {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            NetInput::Dense(t) => (t.height, t.width),
            NetInput::Sparse { s, .. } => (s.height, s.width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    head: Head,
    blocks: Vec<(LayerSpec, LayerSpec)>,
    tail: LayerSpec,
    out: LayerSpec,
    nw_eps: f64,
    params: Vec<f64>,
}

enum HeadTape {
    Conv(Tensor),
    /// Per-layer caches plus the reconstructions each inner layer passed on.
    Nw(Vec<NwCache>, Vec<Tensor>),
}

struct BlockTape {
    input: Tensor,
    pre: Tensor,
    act: Tensor,
}

/// Activations cached by one forward pass.
pub struct Tape {
    head: HeadTape,
    blocks: Vec<BlockTape>,
    body: Tensor,
    tail_pre: Tensor,
    tail_act: Tensor,
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Network {
    /// Builds the layer map with zero parameters.
    fn skeleton(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let f = arch.filters;
        let mut a = Allocator { next: 0 };
        let head = match arch.kind {
            ArchKind::Cnn => Head::Conv(a.layer(1, f, CONV_K)),
            ArchKind::Nw => Head::Nw(
                (0..arch.nw_depth)
                    .map(|i| {
                        if i == 0 {
                            a.layer(1, f, FIRST_NW_K)
                        } else {
                            a.layer(f, f, CONV_K)
                        }
                    })
                    .collect(),
            ),
        };
        let blocks = (0..arch.blocks)
            .map(|_| (a.layer(f, f, CONV_K), a.layer(f, f, CONV_K)))
            .collect();
        let tail = a.layer(f, TAIL_FILTERS, CONV_K);
        let out = a.layer(TAIL_FILTERS, 1, 0);
        Ok(Self {
            arch,
            head,
            blocks,
            tail,
            out,
            nw_eps: nw::DEFAULT_EPS,
            params: vec![0.0; a.next],
        })
    }

    /// He-normal convolutions, truncated-normal L1-normalized NW kernels, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::skeleton(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv_specs = Vec::new();
        match &net.head {
            Head::Conv(s) => conv_specs.push(*s),
            Head::Nw(specs) => {
                for s in specs {
                    let n = s.weight_count();
                    let mut w = nw::truncated_normal(&mut rng, nw::INIT_MEAN, nw::INIT_STD, n);
                    nw::normalize_weights(&mut w, s.c_out)?;
                    net.params[s.w_off..s.w_off + n].copy_from_slice(&w);
                }
            }
        }
        for (a, b) in &net.blocks {
            conv_specs.push(*a);
            conv_specs.push(*b);
        }
        conv_specs.push(net.tail);
        conv_specs.push(net.out);
        for s in conv_specs {
            let fan_in = s.c_in * window_side(s.k) * window_side(s.k);
            let w = he_normal(&mut rng, fan_in, s.weight_count());
            net.params[s.w_off..s.w_off + w.len()].copy_from_slice(&w);
        }
        Ok(net)
    }

    /// Rebuilds a network from a saved parameter vector.
    pub fn from_params(arch: Architecture, params: Vec<f64>, nw_eps: f64) -> Result<Self> {
        let mut net = Self::skeleton(arch)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture needs {} parameters, blob has {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        net.params = params;
        net.nw_eps = nw_eps;
        Ok(net)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn nw_eps(&self) -> f64 {
        self.nw_eps
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the final 1x1 convolution's weights, leaving its bias.
    pub fn zero_output_weights(&mut self) {
        let s = self.out;
        self.params[s.w_off..s.w_off + s.weight_count()].fill(0.0);
    }

    /// Sets the final layer's bias.
    pub fn set_output_bias(&mut self, b: f64) {
        self.params[self.out.b_off] = b;
    }

    /// Zeroes the second convolution (weights and bias) of residual block `i`.
    pub fn zero_block_tail(&mut self, i: usize) {
        let s = self.blocks[i].1;
        self.params[s.w_off..s.b_off + s.c_out].fill(0.0);
    }

    /// Ranges of NW weights, each paired with its output-channel count.
    fn nw_weight_ranges(&self) -> Vec<(std::ops::Range<usize>, usize)> {
        match &self.head {
            Head::Conv(_) => Vec::new(),
            Head::Nw(specs) => specs
                .iter()
                .map(|s| (s.w_off..s.w_off + s.weight_count(), s.c_out))
                .collect(),
        }
    }

    /// Re-projects every NW kernel onto unit L1 norm per output channel.
    pub fn project_nw_kernels(&mut self) -> Result<()> {
        for (range, t) in self.nw_weight_ranges() {
            nw::normalize_weights(&mut self.params[range], t)?;
        }
        Ok(())
    }

    /// Full layer list in evaluation order.
    pub fn descriptor(&self) -> Vec<LayerDesc> {
        let mut out = self.head_descriptor();
        out.extend(self.body_descriptor());
        out
    }

    pub fn head_descriptor(&self) -> Vec<LayerDesc> {
        match &self.head {
            Head::Conv(s) => vec![LayerDesc::Conv {
                c_in: s.c_in,
                c_out: s.c_out,
                k: s.k,
            }],
            Head::Nw(specs) => specs
                .iter()
                .map(|s| LayerDesc::Nw {
                    c_in: s.c_in,
                    c_out: s.c_out,
                    k: s.k,
                })
                .collect(),
        }
    }

    /// Layers after the head; identical for both architectures with equal width.
    pub fn body_descriptor(&self) -> Vec<LayerDesc> {
        let mut out: Vec<LayerDesc> = self
            .blocks
            .iter()
            .map(|(a, _)| LayerDesc::ResidualBlock {
                filters: a.c_out,
                k: a.k,
            })
            .collect();
        out.push(LayerDesc::SkipAdd);
        out.push(LayerDesc::Conv {
            c_in: self.tail.c_in,
            c_out: self.tail.c_out,
            k: self.tail.k,
        });
        out.push(LayerDesc::Relu);
        out.push(LayerDesc::Conv {
            c_in: self.out.c_in,
            c_out: self.out.c_out,
            k: self.out.k,
        });
        out
    }

    fn check_input(&self, input: &NetInput) -> Result<()> {
        match (&self.head, input) {
            (Head::Conv(_), NetInput::Dense(t)) if t.channels == 1 => Ok(()),
            (Head::Nw(_), NetInput::Sparse { s, m }) if s.channels == 1 && s.same_shape(m) => {
                Ok(())
            }
            _ => Err(Error::Shape(format!(
                "input does not match the {:?} architecture",
                self.arch.kind
            ))),
        }
    }

    pub fn forward(&self, input: &NetInput) -> Result<(Tensor, Tape)> {
        self.check_input(input)?;
        let p = &self.params;
        let (h0, head_tape) = match (&self.head, input) {
            (Head::Conv(s), NetInput::Dense(x)) => (
                conv_raw(x, s.weights(p), s.bias(p), s.k)?,
                HeadTape::Conv(x.clone()),
            ),
            (Head::Nw(specs), NetInput::Sparse { s: sig, m }) => {
                let mut caches = Vec::with_capacity(specs.len());
                let mut passed = Vec::with_capacity(specs.len());
                let mut s = sig.clone();
                let mut mask = m.clone();
                let mut r = Tensor::zeros(0, 0, 0);
                for (i, spec) in specs.iter().enumerate() {
                    let (r_next, m_next, cache) =
                        nw::forward_raw(&s, &mask, spec.weights(p), spec.bias(p), spec.k, self.nw_eps)?;
                    caches.push(cache);
                    r = r_next;
                    mask = m_next;
                    if i + 1 < specs.len() {
                        // the next layer sees confidence-weighted data, so
                        // pixels without support do not leak their bias
                        s = r.mul(&mask);
                        passed.push(r.clone());
                    }
                }
                (r, HeadTape::Nw(caches, passed))
            }
            _ => unreachable!("checked above"),
        };

        let mut x = h0.clone();
        let mut block_tapes = Vec::with_capacity(self.blocks.len());
        for (a, b) in &self.blocks {
            let pre = conv_raw(&x, a.weights(p), a.bias(p), a.k)?;
            let act = relu(&pre);
            let mut y = conv_raw(&act, b.weights(p), b.bias(p), b.k)?;
            y.add_assign(&x);
            block_tapes.push(BlockTape { input: x, pre, act });
            x = y;
        }
        x.add_assign(&h0);
        let body = x;
        let tail_pre = conv_raw(&body, self.tail.weights(p), self.tail.bias(p), self.tail.k)?;
        let tail_act = relu(&tail_pre);
        let out = conv_raw(&tail_act, self.out.weights(p), self.out.bias(p), self.out.k)?;
        Ok((
            out,
            Tape {
                head: head_tape,
                blocks: block_tapes,
                body,
                tail_pre,
                tail_act,
            },
        ))
    }

    pub fn predict(&self, input: &NetInput) -> Result<Tensor> {
        Ok(self.forward(input)?.0)
    }

    fn conv_back(
        &self,
        spec: &LayerSpec,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut [f64],
        want_input: bool,
    ) -> Result<Option<Tensor>> {
        let p = &self.params;
        let wc = spec.weight_count();
        corr_backward_weights(grad_out, input, spec.k, &mut grads[spec.w_off..spec.w_off + wc])?;
        for o in 0..spec.c_out {
            grads[spec.b_off + o] += grad_out.channel(o).iter().sum::<f64>();
        }
        if !want_input {
            return Ok(None);
        }
        let mut g_in = Tensor::zeros(input.channels, input.height, input.width);
        corr_backward_input(grad_out, spec.weights(p), spec.k, &mut g_in)?;
        Ok(Some(g_in))
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor, grads: &mut [f64]) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let mut g_act = self
            .conv_back(&self.out, &tape.tail_act, grad_out, grads, true)?
            .expect("input gradient requested");
        relu_backward(&tape.tail_pre, &mut g_act);
        let g_body = self
            .conv_back(&self.tail, &tape.body, &g_act, grads, true)?
            .expect("input gradient requested");

        // body = blocks(h0) + h0
        let mut g = g_body.clone();
        for ((a, b), bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            let mut g_mid = self
                .conv_back(b, &bt.act, &g, grads, true)?
                .expect("input gradient requested");
            relu_backward(&bt.pre, &mut g_mid);
            let g_in = self
                .conv_back(a, &bt.input, &g_mid, grads, true)?
                .expect("input gradient requested");
            g.add_assign(&g_in);
        }
        g.add_assign(&g_body);

        match (&self.head, &tape.head) {
            (Head::Conv(s), HeadTape::Conv(x)) => {
                self.conv_back(s, x, &g, grads, false)?;
            }
            (Head::Nw(specs), HeadTape::Nw(caches, passed)) => {
                let mut g_r = g;
                let mut g_m: Option<Tensor> = None;
                for (i, (spec, cache)) in specs.iter().zip(caches).enumerate().rev() {
                    let ng = nw::backward_raw(&g_r, g_m.as_ref(), cache, spec.weights(&self.params), spec.k)?;
                    for (d, s) in grads[spec.w_off..spec.w_off + ng.weights.len()]
                        .iter_mut()
                        .zip(&ng.weights)
                    {
                        *d += s;
                    }
                    for (d, s) in grads[spec.b_off..spec.b_off + spec.c_out].iter_mut().zip(&ng.bias) {
                        *d += s;
                    }
                    if i > 0 {
                        // S_i = R_{i-1} * M_{i-1}, and M_{i-1} also feeds the denominator
                        let mask = &cache.m;
                        let r_prev = &passed[i - 1];
                        g_r = ng.s.mul(mask);
                        let mut gm = ng.m;
                        gm.add_assign(&ng.s.mul(r_prev));
                        g_m = Some(gm);
                    }
                }
            }
            _ => return Err(Error::State("tape does not belong to this network".into())),
        }
        Ok(())
    }
}

/// Parameter count of CNNnetSR from layer shapes.
pub fn cnn_param_count(blocks: usize, filters: usize) -> usize {
    let conv = |cin: usize, cout: usize, side: usize| cin * cout * side * side + cout;
    conv(1, filters, 3) + blocks * 2 * conv(filters, filters, 3) + conv(filters, TAIL_FILTERS, 3) + conv(TAIL_FILTERS, 1, 1)
}

/// Parameter count of NWnetSR from layer shapes.
pub fn nw_param_count(blocks: usize, filters: usize, nw_depth: usize) -> usize {
    let conv = |cin: usize, cout: usize, side: usize| cin * cout * side * side + cout;
    let head = conv(1, filters, 9) + nw_depth.saturating_sub(1) * conv(filters, filters, 3);
    cnn_param_count(blocks, filters) - conv(1, filters, 3) + head
}

pub fn build_cnnnet_sr(blocks: usize, filters: usize, seed: u64) -> Result<Network> {
    Network::new(Architecture::cnn(blocks, filters), seed)
}

pub fn build_nwnet_sr(blocks: usize, filters: usize, nw_depth: usize, seed: u64) -> Result<Network> {
    Network::new(Architecture::nw(blocks, filters, nw_depth), seed)
}

/// Random draw helper shared by gradient-check tooling.
pub fn random_tensor<R: Rng>(rng: &mut R, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Tensor {
    Tensor {
        channels: c,
        height: h,
        width: w,
        data: (0..c * h * w).map(|_| rng.random_range(lo..hi)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_and_box_kernels() {
        let x = Tensor::from_vec(1, 4, 5, (0..20).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let id = ConvKernel::new(1, 1, 1, w, vec![0.0]).unwrap();
        assert_eq!(conv_forward(&x, &id).unwrap(), x);

        let c = Tensor::from_vec(1, 5, 5, vec![0.3; 25]).unwrap();
        let ones = ConvKernel::new(1, 1, 1, vec![1.0; 9], vec![0.0]).unwrap();
        let y = conv_forward(&c, &ones).unwrap();
        for yy in 1..4 {
            for xx in 1..4 {
                assert!((y.data[yy * 5 + xx] - 2.7).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parameter_counts() {
        // Hand count for blocks=1, filters=8:
        // head 1*8*9+8 = 80, block 2*(8*8*9+8) = 1168,
        // tail 8*32*9+32 = 2336, out 32*1*1+1 = 33  => 3617
        let net = build_cnnnet_sr(1, 8, 0).unwrap();
        assert_eq!(net.param_count(), 3617);
        assert_eq!(cnn_param_count(1, 8), 3617);
        // NW head: 1*8*81+8 = 656 and two 3x3 NW layers of 8*8*9+8 = 584
        let net = build_nwnet_sr(1, 8, 3, 0).unwrap();
        assert_eq!(net.param_count(), 3617 - 80 + 656 + 2 * 584);
        assert_eq!(nw_param_count(1, 8, 3), net.param_count());
    }

    #[test]
    fn bodies_share_structure() {
        let a = build_cnnnet_sr(4, 16, 0).unwrap();
        let b = build_nwnet_sr(4, 16, 3, 0).unwrap();
        assert_eq!(a.body_descriptor(), b.body_descriptor());
        assert_ne!(a.head_descriptor(), b.head_descriptor());
        assert_eq!(
            b.head_descriptor(),
            vec![
                LayerDesc::Nw { c_in: 1, c_out: 16, k: 4 },
                LayerDesc::Nw { c_in: 16, c_out: 16, k: 1 },
                LayerDesc::Nw { c_in: 16, c_out: 16, k: 1 },
            ]
        );
        // exactly one final 1x1 linear layer
        assert_eq!(
            a.descriptor().last(),
            Some(&LayerDesc::Conv { c_in: 32, c_out: 1, k: 0 })
        );
    }

    #[test]
    fn shape_is_preserved_and_zero_output_gives_bias() {
        let mut net = build_cnnnet_sr(2, 4, 1).unwrap();
        let x = Tensor::from_vec(1, 7, 9, (0..63).map(|i| (i as f64).sin()).collect()).unwrap();
        let y = net.predict(&NetInput::Dense(x.clone())).unwrap();
        assert_eq!((y.channels, y.height, y.width), (1, 7, 9));
        net.zero_output_weights();
        net.set_output_bias(0.37);
        let y = net.predict(&NetInput::Dense(x)).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.37));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let net = build_cnnnet_sr(2, 4, 3).unwrap();
        let y = net.predict(&NetInput::Dense(Tensor::zeros(1, 6, 6))).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = build_nwnet_sr(1, 4, 2, 9).unwrap();
        let s = Tensor::from_vec(1, 8, 8, (0..64).map(|i| (i % 5) as f64 * 0.2).collect()).unwrap();
        let m = Tensor::from_vec(1, 8, 8, (0..64).map(|i| (i % 5 == 0) as u8 as f64).collect())
            .unwrap();
        let input = NetInput::Sparse { s, m };
        let a = net.predict(&input).unwrap();
        let b = net.predict(&input).unwrap();
        assert_eq!(
            a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn input_must_match_architecture() {
        let cnn = build_cnnnet_sr(1, 2, 0).unwrap();
        let t = Tensor::zeros(1, 4, 4);
        let sparse = NetInput::Sparse { s: t.clone(), m: t.clone() };
        assert!(matches!(cnn.forward(&sparse), Err(Error::Shape(_))));
        let nwn = build_nwnet_sr(1, 2, 1, 0).unwrap();
        assert!(matches!(nwn.forward(&NetInput::Dense(t)), Err(Error::Shape(_))));
    }

    #[test]
    fn residual_block_with_zero_tail_is_identity() {
        let mut net = build_cnnnet_sr(3, 4, 5).unwrap();
        let x = Tensor::from_vec(1, 6, 6, (0..36).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        for i in 0..3 {
            net.zero_block_tail(i);
        }
        let (_, tape) = net.forward(&NetInput::Dense(x)).unwrap();
        // body = h0 + h0 when every block is the identity map
        let HeadTape::Conv(_) = &tape.head else { panic!() };
        for bt in &tape.blocks {
            assert_eq!(bt.input, tape.blocks[0].input);
        }
        let h0 = &tape.blocks[0].input;
        for (b, h) in tape.body.data.iter().zip(&h0.data) {
            assert_eq!(*b, 2.0 * h);
        }
    }

    #[test]
    fn nw_weights_start_normalized() {
        let net = build_nwnet_sr(1, 3, 2, 4).unwrap();
        for (range, t) in net.nw_weight_ranges() {
            let w = &net.params()[range];
            for block in w.chunks(w.len() / t) {
                let l1: f64 = block.iter().map(|x| x.abs()).sum();
                assert!((l1 - 1.0).abs() < 1e-12);
                assert!(block.iter().all(|&x| x > 0.0));
            }
        }
    }

    fn check_net_gradient(net: &Network, input: &NetInput) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (h, w) = input.shape();
        let r = random_tensor(&mut rng, 1, h, w, -1.0, 1.0);
        let objective = |n: &Network| -> f64 {
            let y = n.predict(input).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = net.forward(input).unwrap();
        let mut g = vec![0.0; net.param_count()];
        net.backward(&tape, &r, &mut g).unwrap();
        let step = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..60 {
            let i = rng.random_range(0..net.param_count());
            let mut a = net.clone();
            a.params_mut()[i] += step;
            let mut b = net.clone();
            b.params_mut()[i] -= step;
            let fd = (objective(&a) - objective(&b)) / (2.0 * step);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn cnn_gradient_matches_finite_differences() {
        let net = build_cnnnet_sr(2, 4, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 1, 10, 9, 0.0, 1.0);
        check_net_gradient(&net, &NetInput::Dense(x));
    }

    #[test]
    fn nw_gradient_matches_finite_differences() {
        let net = build_nwnet_sr(1, 3, 3, 22).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_tensor(&mut rng, 1, 12, 12, 0.0, 1.0);
        let m = Tensor {
            data: (0..144).map(|_| (rng.random::<f64>() < 0.2) as u8 as f64).collect(),
            ..s.clone()
        };
        let s = Tensor {
            data: s.data.iter().zip(&m.data).map(|(a, b)| a * b).collect(),
            ..s
        };
        check_net_gradient(&net, &NetInput::Sparse { s, m });
    }
}
