//! Core image types and the per-frame preprocessing shared by every stage.
//!
//! Pixel `(u, v)` is column `u`, row `v`; its centre sits at the integer
//! grid coordinate `(u, v)`. Storage is row-major.

use crate::error::{Error, Result};

/// Dense grayscale field on a regular pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl CartesianImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels supplied for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite intensity at pixel {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[v * self.width + u] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy of the `width x height` window whose top-left pixel is `(u0, v0)`.
    pub fn crop(&self, u0: usize, v0: usize, width: usize, height: usize) -> Result<Self> {
        if u0 + width > self.width || v0 + height > self.height {
            return Err(Error::Size(format!(
                "crop {width}x{height} at ({u0}, {v0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for v in v0..v0 + height {
            let row = v * self.width;
            data.extend_from_slice(&self.data[row + u0..row + u0 + width]);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Sparsity map: binary at input, probabilistic after NW mask updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} mask values for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Data(format!("invalid mask value at pixel {i}")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&m| m == 0.0 || m == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|&&m| m != 0.0).count()
    }

    pub fn crop(&self, u0: usize, v0: usize, width: usize, height: usize) -> Result<Self> {
        if u0 + width > self.width || v0 + height > self.height {
            return Err(Error::Size(format!(
                "mask crop {width}x{height} at ({u0}, {v0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(width * height);
        for v in v0..v0 + height {
            let row = v * self.width;
            values.extend_from_slice(&self.values[row + u0..row + u0 + width]);
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }
}

/// Irregular sampling pattern: fiber centres inside a circular field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberLayout {
    centres: Vec<(f64, f64)>,
    fov_centre: (f64, f64),
    fov_radius: f64,
}

impl FiberLayout {
    /// Validates that the layout is non-empty, finite, and strictly inside the FoV.
    pub fn new(centres: Vec<(f64, f64)>, fov_centre: (f64, f64), fov_radius: f64) -> Result<Self> {
        if centres.is_empty() {
            return Err(Error::Layout("layout has no fibers".into()));
        }
        if !(fov_radius.is_finite() && fov_radius > 0.0)
            || !fov_centre.0.is_finite()
            || !fov_centre.1.is_finite()
        {
            return Err(Error::Layout(format!(
                "invalid field of view centre {fov_centre:?} radius {fov_radius}"
            )));
        }
        for (i, &(x, y)) in centres.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Layout(format!("fiber {i} has a non-finite centre")));
            }
            let d = ((x - fov_centre.0).powi(2) + (y - fov_centre.1).powi(2)).sqrt();
            if d >= fov_radius {
                return Err(Error::Layout(format!(
                    "fiber {i} at ({x}, {y}) is not strictly inside the field of view"
                )));
            }
        }
        Ok(Self {
            centres,
            fov_centre,
            fov_radius,
        })
    }

    pub fn centres(&self) -> &[(f64, f64)] {
        &self.centres
    }

    pub fn len(&self) -> usize {
        self.centres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centres.is_empty()
    }

    pub fn fov_centre(&self) -> (f64, f64) {
        self.fov_centre
    }

    pub fn fov_radius(&self) -> f64 {
        self.fov_radius
    }

    /// Side of the axis-aligned square bounding the FoV, in pixels.
    pub fn bounding_box_side(&self) -> usize {
        (2.0 * self.fov_radius).ceil() as usize
    }

    /// Whether the centre of pixel `(u, v)` lies inside the FoV circle.
    #[inline]
    pub fn pixel_in_fov(&self, u: usize, v: usize) -> bool {
        let dx = u as f64 - self.fov_centre.0;
        let dy = v as f64 - self.fov_centre.1;
        dx * dx + dy * dy <= self.fov_radius * self.fov_radius
    }

    /// Nearest-pixel location of every fiber (round half away from zero).
    pub fn pixel_positions(&self) -> Vec<(i64, i64)> {
        self.centres
            .iter()
            .map(|&(x, y)| (x.round() as i64, y.round() as i64))
            .collect()
    }

    /// Layout with every centre snapped to its pixel centre.
    pub fn snapped(&self) -> Self {
        Self {
            centres: self.centres.iter().map(|&(x, y)| (x.round(), y.round())).collect(),
            fov_centre: self.fov_centre,
            fov_radius: self.fov_radius,
        }
    }

    /// Same fibers in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            centres: order.iter().map(|&i| self.centres[i]).collect(),
            fov_centre: self.fov_centre,
            fov_radius: self.fov_radius,
        }
    }

    /// Sets every pixel whose centre falls outside the FoV to zero.
    pub fn apply_fov(&self, image: &CartesianImage) -> CartesianImage {
        let mut out = image.clone();
        for v in 0..out.height() {
            for u in 0..out.width() {
                if !self.pixel_in_fov(u, v) {
                    out.set(u, v, 0.0);
                }
            }
        }
        out
    }
}

/// Irregular samples embedded in a Cartesian grid, plus their sparsity map.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseImage {
    pub signal: CartesianImage,
    pub mask: Mask,
}

/// Statistics of one normalized frame, kept so predictions can be mapped back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean_lr: f64,
    pub std_lr: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        mean_lr: 0.0,
        std_lr: 1.0,
        scale_min: 0.0,
        scale_max: 1.0,
    };

    /// Forward affine map `x -> ((x - mean) / std - min) / (max - min)`.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        ((x - self.mean_lr) / self.std_lr - self.scale_min) / (self.scale_max - self.scale_min)
    }

    #[inline]
    pub fn invert(&self, y: f64) -> f64 {
        (y * (self.scale_max - self.scale_min) + self.scale_min) * self.std_lr + self.mean_lr
    }
}

/// Places each fiber signal at the pixel nearest its centre.
pub fn sparsify(
    signals: &[f64],
    layout: &FiberLayout,
    width: usize,
    height: usize,
) -> Result<SparseImage> {
    if signals.len() != layout.len() {
        return Err(Error::Shape(format!(
            "{} signals for {} fibers",
            signals.len(),
            layout.len()
        )));
    }
    let mut signal = CartesianImage::zeros(width, height);
    let mut mask = vec![0.0; width * height];
    let mut owner = vec![usize::MAX; width * height];
    for (i, ((u, v), &s)) in layout.pixel_positions().into_iter().zip(signals).enumerate() {
        if u < 0 || v < 0 || u >= width as i64 || v >= height as i64 {
            let (x, y) = layout.centres()[i];
            return Err(Error::OutOfBounds {
                index: i,
                x,
                y,
                width,
                height,
            });
        }
        let idx = v as usize * width + u as usize;
        if owner[idx] != usize::MAX {
            return Err(Error::Collision {
                first: owner[idx],
                second: i,
                u,
                v,
            });
        }
        owner[idx] = i;
        signal.data_mut()[idx] = s;
        mask[idx] = 1.0;
    }
    Ok(SparseImage {
        signal,
        mask: Mask {
            width,
            height,
            values: mask,
        },
    })
}

/// Reads the signal back at every fiber pixel, in layout order.
pub fn read_fiber_pixels(image: &CartesianImage, layout: &FiberLayout) -> Vec<f64> {
    layout
        .pixel_positions()
        .into_iter()
        .map(|(u, v)| image.get(u as usize, v as usize))
        .collect()
}

/// Standardizes `lr` by its own mean/std, then min-max scales it to [0, 1];
/// `hr` goes through the identical affine chain and is not clamped.
pub fn normalize_frame(
    lr: &CartesianImage,
    hr: &CartesianImage,
) -> Result<(CartesianImage, CartesianImage, NormStats)> {
    if !lr.same_shape(hr) {
        return Err(Error::Shape(format!(
            "lr {}x{} vs hr {}x{}",
            lr.width(),
            lr.height(),
            hr.width(),
            hr.height()
        )));
    }
    let stats = frame_stats(lr)?;
    Ok((normalize_with(lr, &stats), normalize_with(hr, &stats), stats))
}

/// Normalization statistics derived from one LR frame.
pub fn frame_stats(lr: &CartesianImage) -> Result<NormStats> {
    let n = lr.len() as f64;
    let mean = lr.mean();
    let var = lr.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::DegenerateFrame("LR frame has zero variance".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in lr.data() {
        let z = (x - mean) / std;
        lo = lo.min(z);
        hi = hi.max(z);
    }
    if !(hi > lo) {
        return Err(Error::DegenerateFrame("standardized LR frame has no range".into()));
    }
    Ok(NormStats {
        mean_lr: mean,
        std_lr: std,
        scale_min: lo,
        scale_max: hi,
    })
}

pub fn normalize_with(img: &CartesianImage, stats: &NormStats) -> CartesianImage {
    img.map(|x| stats.apply(x))
}

/// Applies the frame map to informative pixels only; empty pixels stay zero.
pub fn normalize_sparse(sparse: &SparseImage, stats: &NormStats) -> SparseImage {
    let mut signal = sparse.signal.clone();
    for (s, &m) in signal.data_mut().iter_mut().zip(sparse.mask.values()) {
        if m != 0.0 {
            *s = stats.apply(*s);
        }
    }
    SparseImage {
        signal,
        mask: sparse.mask.clone(),
    }
}

pub fn denormalize(img: &CartesianImage, stats: &NormStats) -> CartesianImage {
    img.map(|y| stats.invert(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(centres: Vec<(f64, f64)>) -> FiberLayout {
        FiberLayout::new(centres, (4.0, 4.0), 100.0).unwrap()
    }

    #[test]
    fn sparsify_single_fiber_rounds_to_nearest_pixel() {
        let l = layout(vec![(2.4, 3.1)]);
        let s = sparsify(&[0.7], &l, 8, 8).unwrap();
        assert_eq!(s.signal.get(2, 3), 0.7);
        assert_eq!(s.mask.get(2, 3), 1.0);
        assert_eq!(s.mask.count_nonzero(), 1);
        assert_eq!(s.signal.sum(), 0.7);
    }

    #[test]
    fn empty_layout_is_rejected() {
        assert!(matches!(
            FiberLayout::new(vec![], (0.0, 0.0), 1.0),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn sparsify_jittered_grid_counts() {
        // 4x5 grid at pitch 3 with sub-pixel offsets that never collide.
        let mut centres = Vec::new();
        for j in 0..5 {
            for i in 0..4 {
                let jitter = 0.1 * ((i * 7 + j * 3) % 5) as f64 - 0.2;
                centres.push((1.0 + 3.0 * i as f64 + jitter, 1.0 + 3.0 * j as f64 - jitter));
            }
        }
        let l = FiberLayout::new(centres, (8.0, 8.0), 20.0).unwrap();
        let s = sparsify(&[1.0; 20], &l, 16, 16).unwrap();
        assert_eq!(s.signal.sum(), 20.0);
        assert_eq!(s.mask.values().iter().sum::<f64>(), 20.0);
        assert!(s.mask.is_binary());
    }

    #[test]
    fn sparsify_reports_collisions_and_bounds() {
        let l = layout(vec![(1.2, 1.0), (0.9, 1.3)]);
        assert!(matches!(
            sparsify(&[1.0, 2.0], &l, 4, 4),
            Err(Error::Collision {
                first: 0,
                second: 1,
                ..
            })
        ));
        let l = layout(vec![(7.6, 1.0)]);
        assert!(matches!(
            sparsify(&[1.0], &l, 8, 8),
            Err(Error::OutOfBounds { index: 0, .. })
        ));
    }

    #[test]
    fn sparsify_is_lossless() {
        let l = layout(vec![(0.2, 0.1), (3.7, 2.2), (5.5, 6.4), (1.49, 6.51)]);
        let sig = [0.3, -1.25, 7.0, 0.001];
        let s = sparsify(&sig, &l, 8, 8).unwrap();
        assert_eq!(read_fiber_pixels(&s.signal, &l), sig.to_vec());
    }

    #[test]
    fn normalize_two_pixel_frame() {
        let lr = CartesianImage::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let (a, b, st) = normalize_frame(&lr, &lr).unwrap();
        assert_eq!(st.mean_lr, 1.0);
        assert_eq!(st.std_lr, 1.0);
        assert_eq!((st.scale_min, st.scale_max), (-1.0, 1.0));
        assert_eq!(a.data(), &[0.0, 1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn normalize_standardized_frame_is_symmetric() {
        let lr = CartesianImage::from_vec(2, 2, vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let (a, b, _) = normalize_frame(&lr, &lr).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_frame_is_degenerate() {
        let lr = CartesianImage::filled(4, 4, 0.3);
        assert!(matches!(
            normalize_frame(&lr, &lr),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn hr_uses_lr_statistics_without_clamping() {
        let lr = CartesianImage::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let hr = CartesianImage::from_vec(2, 1, vec![-2.0, 4.0]).unwrap();
        let (_, h, _) = normalize_frame(&lr, &hr).unwrap();
        assert_eq!(h.data(), &[-1.0, 2.0]);
    }

    #[test]
    fn identity_stats_denormalize_is_identity() {
        let img = CartesianImage::from_vec(3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(denormalize(&img, &NormStats::IDENTITY), img);
    }

    #[test]
    fn normalize_sparse_leaves_empty_pixels() {
        let l = layout(vec![(1.0, 1.0)]);
        let s = sparsify(&[2.0], &l, 3, 3).unwrap();
        let st = NormStats {
            mean_lr: 1.0,
            std_lr: 2.0,
            scale_min: -1.0,
            scale_max: 1.0,
        };
        let n = normalize_sparse(&s, &st);
        assert_eq!(n.signal.get(1, 1), st.apply(2.0));
        assert_eq!(n.signal.get(0, 0), 0.0);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in prop::collection::vec(-5.0f64..5.0, 256)) {
            let lr = CartesianImage::from_vec(16, 16, values).unwrap();
            prop_assume!(lr.max() - lr.min() > 1e-3);
            let (n, _, st) = normalize_frame(&lr, &lr).unwrap();
            prop_assert_eq!(n.min(), 0.0);
            prop_assert!((n.max() - 1.0).abs() < 1e-15);
            let back = denormalize(&n, &st);
            let err = back.data().iter().zip(lr.data())
                .map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9);
        }
    }
}
