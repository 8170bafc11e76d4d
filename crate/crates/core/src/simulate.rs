//! Synthetic fiber-bundle acquisition: HR frames cropped from a grayscale
//! source, then degraded through Voronoi signal averaging, Gaussian noise
//! and Delaunay interpolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::baseline::{delaunay_triangulate, interpolate_linear, Triangulation};
use crate::error::{Error, Result};
use crate::imaging::{sparsify, CartesianImage, FiberLayout, SparseImage};

/// Jitter amplitude of the hexagonal layout, as a fraction of the pitch.
pub const LAYOUT_JITTER: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} RGB pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }
}

#[inline]
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn to_grayscale(rgb: &RgbImage) -> CartesianImage {
    let data = rgb.pixels.iter().map(|p| luma(p[0], p[1], p[2])).collect();
    CartesianImage::from_vec(rgb.width, rgb.height, data).expect("shape already validated")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub sigma_mult: f64,
    pub sigma_add: f64,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_mult: 0.1,
            sigma_add: 0.05,
            seed: 0,
        }
    }
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self {
            sigma_mult: 0.0,
            sigma_add: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_mult >= 0.0 && self.sigma_add >= 0.0) {
            return Err(Error::Config(format!(
                "noise sigmas must be non-negative, got {} / {}",
                self.sigma_mult, self.sigma_add
            )));
        }
        Ok(())
    }
}

/// Frames sharing one fiber layout.
#[derive(Debug, Clone)]
pub struct VideoSequence {
    pub frames: Vec<CartesianImage>,
    pub layout: FiberLayout,
}

/// Number of bounding-box placements along an axis of length `len`.
pub fn crop_count(len: usize, side: usize) -> usize {
    if len < side {
        return 0;
    }
    let stride = (side / 2).max(1);
    (len - side) / stride + 1
}

/// Slides the FoV bounding box over the source at half-box stride, left to
/// right then top to bottom. Placements that would overrun the border are dropped.
pub fn crop_frames(gray: &CartesianImage, layout: &FiberLayout) -> Result<VideoSequence> {
    let side = layout.bounding_box_side();
    if gray.width() < side || gray.height() < side {
        return Err(Error::Size(format!(
            "source {}x{} is smaller than the {side}x{side} field-of-view box",
            gray.width(),
            gray.height()
        )));
    }
    let stride = (side / 2).max(1);
    let mut frames = Vec::new();
    for j in 0..crop_count(gray.height(), side) {
        for i in 0..crop_count(gray.width(), side) {
            frames.push(gray.crop(i * stride, j * stride, side, side)?);
        }
    }
    Ok(VideoSequence {
        frames,
        layout: layout.clone(),
    })
}

/// Jittered hexagonal packing of fibers inside a circular FoV.
///
/// Nodes that leave the circle, collide on a pixel with an earlier node, or
/// end up owning no pixel of the FoV are dropped.
pub fn generate_layout(fov_radius: f64, mean_spacing: f64, seed: u64) -> Result<FiberLayout> {
    if !(mean_spacing > 0.0 && fov_radius > mean_spacing) {
        return Err(Error::Layout(format!(
            "need fov_radius > mean_spacing > 0, got radius {fov_radius} spacing {mean_spacing}"
        )));
    }
    let side = (2.0 * fov_radius).ceil() as usize;
    let c = (side as f64 - 1.0) / 2.0;
    let row_pitch = mean_spacing * 3f64.sqrt() / 2.0;
    let rows = (fov_radius / row_pitch).ceil() as i64 + 1;
    let cols = (fov_radius / mean_spacing).ceil() as i64 + 1;
    let amp = LAYOUT_JITTER * mean_spacing;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = vec![false; side * side];
    let mut centres = Vec::new();
    for j in -rows..=rows {
        let offset = if j.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
        for i in -cols..=cols {
            // Draw for every node so the stream does not depend on which are kept.
            let jx: f64 = rng.random_range(-amp..=amp);
            let jy: f64 = rng.random_range(-amp..=amp);
            let x = c + (i as f64 + offset) * mean_spacing + jx;
            let y = c + j as f64 * row_pitch + jy;
            if (x - c).hypot(y - c) >= fov_radius {
                continue;
            }
            let (u, v) = (x.round(), y.round());
            if u < 0.0 || v < 0.0 || u >= side as f64 || v >= side as f64 {
                continue;
            }
            let idx = v as usize * side + u as usize;
            if taken[idx] {
                continue;
            }
            taken[idx] = true;
            centres.push((x, y));
        }
    }
    if centres.is_empty() {
        return Err(Error::Layout("no fibers fit inside the field of view".into()));
    }
    let layout = FiberLayout::new(centres, (c, c), fov_radius)?;
    let labels = voronoi_labels(side, side, &layout);
    let mut owned = vec![false; layout.len()];
    for l in labels.into_iter().flatten() {
        owned[l] = true;
    }
    let layout = if owned.iter().all(|&o| o) {
        layout
    } else {
        let kept = (0..layout.len()).filter(|&i| owned[i]).collect::<Vec<_>>();
        layout.permuted(&kept)
    };
    if layout.len() < 3 {
        return Err(Error::Layout(format!(
            "only {} fibers generated; at least 3 are required",
            layout.len()
        )));
    }
    Ok(layout)
}

/// Uniform bucket grid over fiber centres for nearest-centre queries.
struct BucketGrid {
    cell: f64,
    nx: i64,
    ny: i64,
    ox: f64,
    oy: f64,
    buckets: Vec<Vec<usize>>,
}

impl BucketGrid {
    fn new(layout: &FiberLayout) -> Self {
        let pts = layout.centres();
        let (mut x0, mut y0, mut x1, mut y1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let area = ((x1 - x0) * (y1 - y0)).max(1.0);
        let cell = (area / pts.len() as f64).sqrt().max(1.0);
        let nx = ((x1 - x0) / cell).floor() as i64 + 1;
        let ny = ((y1 - y0) / cell).floor() as i64 + 1;
        let mut buckets = vec![Vec::new(); (nx * ny) as usize];
        for (i, &(x, y)) in pts.iter().enumerate() {
            let bx = (((x - x0) / cell).floor() as i64).clamp(0, nx - 1);
            let by = (((y - y0) / cell).floor() as i64).clamp(0, ny - 1);
            buckets[(by * nx + bx) as usize].push(i);
        }
        Self {
            cell,
            nx,
            ny,
            ox: x0,
            oy: y0,
            buckets,
        }
    }

    /// Nearest fiber to `(px, py)`; equal distances resolve to the lowest index.
    fn nearest(&self, pts: &[(f64, f64)], px: f64, py: f64) -> usize {
        let bx = ((px - self.ox) / self.cell).floor() as i64;
        let by = ((py - self.oy) / self.cell).floor() as i64;
        let mut best = (f64::INFINITY, usize::MAX);
        let max_ring = self.nx.max(self.ny) + bx.abs().max(by.abs()) + 1;
        for ring in 0..=max_ring {
            for gy in by - ring..=by + ring {
                if gy < 0 || gy >= self.ny {
                    continue;
                }
                let on_edge_row = gy == by - ring || gy == by + ring;
                let mut gx = bx - ring;
                while gx <= bx + ring {
                    if gx >= 0 && gx < self.nx {
                        for &i in &self.buckets[(gy * self.nx + gx) as usize] {
                            let d = sq_dist(pts[i], px, py);
                            if d < best.0 || (d == best.0 && i < best.1) {
                                best = (d, i);
                            }
                        }
                    }
                    gx += if on_edge_row || ring == 0 { 1 } else { 2 * ring };
                }
            }
            // Every bucket beyond this ring is at least ring*cell away from the query.
            let reach = ring as f64 * self.cell;
            if best.1 != usize::MAX && best.0 < reach * reach {
                break;
            }
        }
        best.1
    }
}

#[inline]
pub(crate) fn sq_dist(p: (f64, f64), x: f64, y: f64) -> f64 {
    let dx = p.0 - x;
    let dy = p.1 - y;
    dx * dx + dy * dy
}

/// Owning fiber of every pixel (row-major); `None` outside the FoV.
pub fn voronoi_labels(width: usize, height: usize, layout: &FiberLayout) -> Vec<Option<usize>> {
    let grid = BucketGrid::new(layout);
    let pts = layout.centres();
    let mut labels = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            labels.push(if layout.pixel_in_fov(u, v) {
                Some(grid.nearest(pts, u as f64, v as f64))
            } else {
                None
            });
        }
    }
    labels
}

/// Mean HR intensity over each fiber's Voronoi cell, restricted to the FoV.
pub fn voronoi_downsample(hr: &CartesianImage, layout: &FiberLayout) -> Result<Vec<f64>> {
    for (i, &(x, y)) in layout.centres().iter().enumerate() {
        let (u, v) = (x.round(), y.round());
        if u < 0.0 || v < 0.0 || u >= hr.width() as f64 || v >= hr.height() as f64 {
            return Err(Error::OutOfBounds {
                index: i,
                x,
                y,
                width: hr.width(),
                height: hr.height(),
            });
        }
    }
    let labels = voronoi_labels(hr.width(), hr.height(), layout);
    let mut sums = vec![0.0; layout.len()];
    let mut counts = vec![0usize; layout.len()];
    for (&value, label) in hr.data().iter().zip(&labels) {
        if let Some(f) = *label {
            sums[f] += value;
            counts[f] += 1;
        }
    }
    if let Some(f) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCell(f));
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect())
}

/// `s * g + a` with `g ~ N(1, sigma_mult^2)`, `a ~ N(0, sigma_add^2)`, drawn
/// per fiber from the stream selected by `stream` (the frame index).
pub fn add_noise_stream(signals: &[f64], params: &NoiseParams, stream: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(stream);
    Ok(signals
        .iter()
        .map(|&s| {
            let zm: f64 = rng.sample(StandardNormal);
            let za: f64 = rng.sample(StandardNormal);
            s * (1.0 + params.sigma_mult * zm) + params.sigma_add * za
        })
        .collect())
}

pub fn add_noise(signals: &[f64], params: &NoiseParams) -> Result<Vec<f64>> {
    add_noise_stream(signals, params, 0)
}

/// One degraded frame.
#[derive(Debug, Clone)]
pub struct SimulatedFrame {
    /// Noisy per-fiber signals, in layout order.
    pub signals: Vec<f64>,
    /// Delaunay reconstruction of the noisy signals.
    pub lr: CartesianImage,
    pub sparse: SparseImage,
}

/// Degrades HR frames for a fixed layout; the triangulation is built once.
pub struct LrSimulator {
    layout: FiberLayout,
    tri: Triangulation,
}

impl LrSimulator {
    pub fn new(layout: &FiberLayout) -> Result<Self> {
        Ok(Self {
            layout: layout.clone(),
            tri: delaunay_triangulate(layout)?,
        })
    }

    pub fn layout(&self) -> &FiberLayout {
        &self.layout
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.tri
    }

    pub fn simulate(
        &self,
        hr: &CartesianImage,
        params: &NoiseParams,
        stream: u64,
    ) -> Result<SimulatedFrame> {
        let clean = voronoi_downsample(hr, &self.layout)?;
        let signals = add_noise_stream(&clean, params, stream)?;
        self.from_signals(signals, hr.width(), hr.height())
    }

    /// Rebuilds the LR and sparse images from already-noisy signals.
    pub fn from_signals(
        &self,
        signals: Vec<f64>,
        width: usize,
        height: usize,
    ) -> Result<SimulatedFrame> {
        let lr = interpolate_linear(&signals, &self.tri, width, height)?;
        let sparse = sparsify(&signals, &self.layout, width, height)?;
        Ok(SimulatedFrame {
            signals,
            lr,
            sparse,
        })
    }
}

pub fn simulate_lr(
    hr: &CartesianImage,
    layout: &FiberLayout,
    params: &NoiseParams,
) -> Result<(CartesianImage, SparseImage)> {
    let f = LrSimulator::new(layout)?.simulate(hr, params, 0)?;
    Ok((f.lr, f.sparse))
}

/// HR frames (FoV-masked) and their degraded counterparts for a whole source image.
#[derive(Debug, Clone)]
pub struct SimulatedVideo {
    pub hr: VideoSequence,
    pub frames: Vec<SimulatedFrame>,
}

pub fn simulate_video(
    gray: &CartesianImage,
    layout: &FiberLayout,
    params: &NoiseParams,
) -> Result<SimulatedVideo> {
    let mut hr = crop_frames(gray, layout)?;
    for f in hr.frames.iter_mut() {
        *f = layout.apply_fov(f);
    }
    let sim = LrSimulator::new(layout)?;
    let frames = hr
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| sim.simulate(f, params, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedVideo { hr, frames })
}
