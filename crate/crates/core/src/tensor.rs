//! Channel-major feature maps and the zero-padded, size-preserving 2-D
//! cross-correlation kernels every layer is built from.
//!
//! Weights are laid out `[out][in][ky][kx]` with window side `2k + 1`; tap
//! `(ky, kx)` reads input pixel `(y + ky - k, x + kx - k)`.

use crate::error::{Error, Result};
use crate::imaging::{CartesianImage, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_image(img: &CartesianImage) -> Self {
        Self {
            channels: 1,
            height: img.height(),
            width: img.width(),
            data: img.data().to_vec(),
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            channels: 1,
            height: mask.height(),
            width: mask.width(),
            data: mask.values().to_vec(),
        }
    }

    /// Single-channel tensor as an image.
    pub fn to_image(&self) -> Result<CartesianImage> {
        if self.channels != 1 {
            return Err(Error::Shape(format!(
                "expected one channel, found {}",
                self.channels
            )));
        }
        CartesianImage::from_vec(self.width, self.height, self.data.clone())
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
            ..*self
        }
    }

    /// One of the 8 square symmetries: bit 0 mirrors columns, bit 1 mirrors
    /// rows, bit 2 transposes (ignored for non-square planes).
    pub fn dihedral(&self, t: u8) -> Tensor {
        let (h, w) = (self.height, self.width);
        let transpose = t & 4 != 0 && h == w;
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = self.channel(c);
            let dst = out.channel_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let sx = if t & 1 != 0 { w - 1 - x } else { x };
                    let sy = if t & 2 != 0 { h - 1 - y } else { y };
                    let (sx, sy) = if transpose { (sy, sx) } else { (sx, sy) };
                    dst[y * w + x] = src[sy * w + sx];
                }
            }
        }
        out
    }
}

#[inline]
pub fn window_side(k: usize) -> usize {
    2 * k + 1
}

/// Valid output rows/columns for a tap offset `d` along an axis of length `n`.
#[inline]
fn span(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

fn check_weights(input: &Tensor, weights: &[f64], out_c: usize, k: usize) -> Result<()> {
    let taps = window_side(k) * window_side(k);
    if weights.len() != out_c * input.channels * taps {
        return Err(Error::Shape(format!(
            "{} weights for {out_c} outputs x {} inputs x {taps} taps",
            weights.len(),
            input.channels
        )));
    }
    Ok(())
}

/// Unfolds zero-padded windows into a `(channels * taps) x (h * w)` matrix.
fn im2col(input: &Tensor, k: usize) -> Vec<f64> {
    let (h, w) = (input.height, input.width);
    let side = window_side(k);
    let plane = h * w;
    let mut col = vec![0.0; input.channels * side * side * plane];
    let mut row = 0;
    for c in 0..input.channels {
        let src = input.channel(c);
        for ky in 0..side {
            let dy = ky as isize - k as isize;
            let (y0, y1) = span(h, dy);
            for kx in 0..side {
                let dx = kx as isize - k as isize;
                let (x0, x1) = span(w, dx);
                let dst = &mut col[row * plane..(row + 1) * plane];
                if x0 < x1 {
                    for y in y0..y1 {
                        let s = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                        dst[y * w + x0..y * w + x1].copy_from_slice(&src[s..s + (x1 - x0)]);
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Adjoint of `im2col`, accumulated into `out`.
fn col2im_add(col: &[f64], k: usize, out: &mut Tensor) {
    let (h, w) = (out.height, out.width);
    let side = window_side(k);
    let plane = h * w;
    let mut row = 0;
    for c in 0..out.channels {
        let dst = out.channel_mut(c);
        for ky in 0..side {
            let dy = ky as isize - k as isize;
            let (y0, y1) = span(h, dy);
            for kx in 0..side {
                let dx = kx as isize - k as isize;
                let (x0, x1) = span(w, dx);
                let src = &col[row * plane..(row + 1) * plane];
                if x0 < x1 {
                    for y in y0..y1 {
                        let s = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                        for (d, v) in dst[s..s + (x1 - x0)].iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                            *d += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c += a * b` for row-major `a (m x kk)` and `b (kk x n)` given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    m: usize,
    kk: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || kk == 0 {
        return;
    }
    debug_assert!(a.len() >= m * kk && b.len() >= kk * n && c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            kk,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[o] += sum_c corr(input[c], weights[o][c])`.
pub fn corr_accumulate(input: &Tensor, weights: &[f64], k: usize, out: &mut Tensor) -> Result<()> {
    check_weights(input, weights, out.channels, k)?;
    if out.height != input.height || out.width != input.width {
        return Err(Error::Shape("correlation output size differs from input".into()));
    }
    let plane = input.plane();
    let kk = input.channels * window_side(k) * window_side(k);
    let col = im2col(input, k);
    gemm_acc(
        out.channels,
        kk,
        plane,
        weights,
        (kk as isize, 1),
        &col,
        (plane as isize, 1),
        &mut out.data,
    );
    Ok(())
}

/// Gradient of `corr_accumulate` with respect to its input, accumulated into `grad_in`.
pub fn corr_backward_input(
    grad_out: &Tensor,
    weights: &[f64],
    k: usize,
    grad_in: &mut Tensor,
) -> Result<()> {
    check_weights(grad_in, weights, grad_out.channels, k)?;
    if grad_out.height != grad_in.height || grad_out.width != grad_in.width {
        return Err(Error::Shape("correlation gradient size differs from input".into()));
    }
    let plane = grad_out.plane();
    let kk = grad_in.channels * window_side(k) * window_side(k);
    let mut col = vec![0.0; kk * plane];
    gemm_acc(
        kk,
        grad_out.channels,
        plane,
        weights,
        (1, kk as isize),
        &grad_out.data,
        (plane as isize, 1),
        &mut col,
    );
    col2im_add(&col, k, grad_in);
    Ok(())
}

/// Gradient of `corr_accumulate` with respect to its weights, accumulated into `grad_w`.
pub fn corr_backward_weights(
    grad_out: &Tensor,
    input: &Tensor,
    k: usize,
    grad_w: &mut [f64],
) -> Result<()> {
    check_weights(input, grad_w, grad_out.channels, k)?;
    if grad_out.height != input.height || grad_out.width != input.width {
        return Err(Error::Shape("correlation gradient size differs from input".into()));
    }
    let plane = input.plane();
    let kk = input.channels * window_side(k) * window_side(k);
    let col = im2col(input, k);
    gemm_acc(
        grad_out.channels,
        plane,
        kk,
        &grad_out.data,
        (plane as isize, 1),
        &col,
        (1, plane as isize),
        grad_w,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dihedral_group() {
        let t = Tensor::from_vec(2, 3, 3, (0..18).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.dihedral(0), t);
        for k in 0..8u8 {
            let d = t.dihedral(k);
            let mut a = d.data.clone();
            let mut b = t.data.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
        assert_eq!(t.dihedral(1).dihedral(1), t);
        assert_eq!(t.dihedral(4).data[1], t.data[3]);
        assert_eq!(t.dihedral(3).data[0], t.data[8]);
    }

    /// Direct per-pixel evaluation of the correlation.
    fn naive(input: &Tensor, weights: &[f64], out_c: usize, k: usize) -> Tensor {
        let side = window_side(k);
        let mut out = Tensor::zeros(out_c, input.height, input.width);
        for o in 0..out_c {
            for y in 0..input.height as isize {
                for x in 0..input.width as isize {
                    let mut acc = 0.0;
                    for c in 0..input.channels {
                        for ky in 0..side as isize {
                            for kx in 0..side as isize {
                                let sy = y + ky - k as isize;
                                let sx = x + kx - k as isize;
                                if sy < 0
                                    || sx < 0
                                    || sy >= input.height as isize
                                    || sx >= input.width as isize
                                {
                                    continue;
                                }
                                let wv = weights[((o * input.channels + c) * side
                                    + ky as usize)
                                    * side
                                    + kx as usize];
                                acc += wv
                                    * input.data[c * input.plane()
                                        + sy as usize * input.width
                                        + sx as usize];
                            }
                        }
                    }
                    out.data[o * input.plane() + y as usize * input.width + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_correlation() {
        let input = Tensor::from_vec(
            2,
            5,
            7,
            (0..70).map(|i| ((i * 31) % 17) as f64 / 7.0 - 1.0).collect(),
        )
        .unwrap();
        for k in [0, 1, 2, 4] {
            let side = window_side(k);
            let weights: Vec<f64> = (0..3 * 2 * side * side)
                .map(|i| ((i * 13) % 11) as f64 / 5.0 - 1.0)
                .collect();
            let mut out = Tensor::zeros(3, 5, 7);
            corr_accumulate(&input, &weights, k, &mut out).unwrap();
            let expect = naive(&input, &weights, 3, k);
            for (a, b) in out.data.iter().zip(&expect.data) {
                assert!((a - b).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn adjoint_identities() {
        // <corr(x, w), g> == <x, corr^T(g, w)> == <w, corr_w^T(g, x)>
        let x = Tensor::from_vec(2, 6, 4, (0..48).map(|i| (i as f64 * 0.7).sin()).collect())
            .unwrap();
        let g = Tensor::from_vec(3, 6, 4, (0..72).map(|i| (i as f64 * 0.3).cos()).collect())
            .unwrap();
        let k = 1;
        let w: Vec<f64> = (0..3 * 2 * 9).map(|i| (i as f64 * 1.1).sin()).collect();
        let mut y = Tensor::zeros(3, 6, 4);
        corr_accumulate(&x, &w, k, &mut y).unwrap();
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut gx = Tensor::zeros(2, 6, 4);
        corr_backward_input(&g, &w, k, &mut gx).unwrap();
        let mid: f64 = gx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let mut gw = vec![0.0; w.len()];
        corr_backward_weights(&g, &x, k, &mut gw).unwrap();
        let rhs: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - mid).abs() < 1e-12);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn kernel_wider_than_image() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = vec![1.0; 81];
        let mut y = Tensor::zeros(1, 2, 2);
        corr_accumulate(&x, &w, 4, &mut y).unwrap();
        assert_eq!(y.data, vec![10.0; 4]);
    }

    #[test]
    fn weight_count_is_checked() {
        let x = Tensor::zeros(2, 3, 3);
        let mut y = Tensor::zeros(1, 3, 3);
        assert!(corr_accumulate(&x, &[0.0; 9], 1, &mut y).is_err());
    }
}
