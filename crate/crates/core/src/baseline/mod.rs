//! Non-learned reconstruction baselines: piecewise-linear interpolation over
//! the Delaunay triangulation, and Gaussian Nadaraya-Watson regression.

mod delaunay;

pub use delaunay::{delaunay_triangulate, triangulate_points, Triangle, Triangulation};

use crate::error::{Error, Result};
use crate::imaging::{CartesianImage, FiberLayout};

/// Slack on barycentric weights when testing whether a pixel lies in a triangle.
const INSIDE_TOL: f64 = 1e-12;

/// Gaussian kernels are truncated at this many standard deviations.
pub const GAUSS_TRUNCATION: f64 = 3.0;

/// Default Gaussian width as a fraction of the mean fiber spacing.
pub const DEFAULT_SIGMA_FACTOR: f64 = 0.7;

/// Barycentric interpolation of per-vertex signals onto the pixel grid.
///
/// Pixels outside the convex hull are 0; a pixel on a shared edge takes its
/// value from the lowest-indexed triangle.
pub fn interpolate_linear(
    signals: &[f64],
    tri: &Triangulation,
    width: usize,
    height: usize,
) -> Result<CartesianImage> {
    if signals.len() != tri.vertices().len() {
        return Err(Error::Shape(format!(
            "{} signals for {} vertices",
            signals.len(),
            tri.vertices().len()
        )));
    }
    let pts = tri.vertices();
    let mut out = CartesianImage::zeros(width, height);
    let mut filled = vec![false; width * height];
    for t in tri.triangles() {
        let [a, b, c] = t.vertices;
        let xs = [pts[a].0, pts[b].0, pts[c].0];
        let ys = [pts[a].1, pts[b].1, pts[c].1];
        let u0 = xs.iter().copied().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let v0 = ys.iter().copied().fold(f64::INFINITY, f64::min).ceil().max(0.0) as usize;
        let u1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor();
        let v1 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor();
        if u1 < 0.0 || v1 < 0.0 {
            continue;
        }
        let u1 = (u1 as usize).min(width - 1);
        let v1 = (v1 as usize).min(height - 1);
        let (sa, sb, sc) = (signals[a], signals[b], signals[c]);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let idx = v * width + u;
                if filled[idx] {
                    continue;
                }
                let [la, lb, lc] = t.barycentric(u as f64, v as f64);
                if la >= -INSIDE_TOL && lb >= -INSIDE_TOL && lc >= -INSIDE_TOL {
                    out.data_mut()[idx] = la * sa + lb * sb + lc * sc;
                    filled[idx] = true;
                }
            }
        }
    }
    Ok(out)
}

/// Classical Nadaraya-Watson regression with an isotropic Gaussian kernel
/// truncated at `3 sigma`; pixels with no fiber in range are 0.
pub fn nw_gaussian_reconstruct(
    signals: &[f64],
    layout: &FiberLayout,
    sigma: f64,
    width: usize,
    height: usize,
) -> Result<CartesianImage> {
    if signals.len() != layout.len() {
        return Err(Error::Shape(format!(
            "{} signals for {} fibers",
            signals.len(),
            layout.len()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let reach = GAUSS_TRUNCATION * sigma;
    let reach2 = reach * reach;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut num = vec![0.0; width * height];
    let mut den = vec![0.0; width * height];
    for (&(x, y), &s) in layout.centres().iter().zip(signals) {
        let u0 = (x - reach).ceil().max(0.0) as usize;
        let v0 = (y - reach).ceil().max(0.0) as usize;
        let u1 = (x + reach).floor();
        let v1 = (y + reach).floor();
        if u1 < 0.0 || v1 < 0.0 {
            continue;
        }
        let u1 = (u1 as usize).min(width - 1);
        let v1 = (v1 as usize).min(height - 1);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let d2 = (u as f64 - x).powi(2) + (v as f64 - y).powi(2);
                if d2 <= reach2 {
                    let k = (-d2 * inv).exp();
                    let idx = v * width + u;
                    num[idx] += s * k;
                    den[idx] += k;
                }
            }
        }
    }
    let data = num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| if d > 0.0 { n / d } else { 0.0 })
        .collect();
    CartesianImage::from_vec(width, height, data)
}

/// Gaussian width used when none is configured.
pub fn default_sigma(mean_spacing: f64) -> f64 {
    DEFAULT_SIGMA_FACTOR * mean_spacing
}

/// Mean nearest-neighbour distance between fiber centres.
pub fn mean_fiber_spacing(layout: &FiberLayout) -> f64 {
    let pts = layout.centres();
    if pts.len() < 2 {
        return 0.0;
    }
    let total: f64 = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p.0 - q.0).hypot(p.1 - q.1))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / pts.len() as f64
}
