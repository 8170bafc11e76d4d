//! Seeded synthetic tissue-like RGB sources: smooth stroma texture, dark
//! elliptical nuclei and a few bright lumens in H&E-like colours.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::simulate::RgbImage;

const EOSIN: [f64; 3] = [0.89, 0.58, 0.72];
const STROMA_DARK: [f64; 3] = [0.72, 0.38, 0.58];
const HEMATOXYLIN: [f64; 3] = [0.30, 0.16, 0.48];
const LUMEN: [f64; 3] = [0.97, 0.94, 0.96];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Nuclei per 1000 pixels.
    pub nuclei_density: f64,
    pub nucleus_radius: (f64, f64),
    pub lumens: usize,
    pub lumen_radius: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            nuclei_density: 2.2,
            nucleus_radius: (2.5, 6.0),
            lumens: 3,
            lumen_radius: (10.0, 28.0),
        }
    }
}

/// Bilinear value noise on a lattice of spacing `cell`, smoothstep-blended.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f64) -> Vec<f64> {
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        let gy = v as f64 / cell;
        let (j, ty) = (gy.floor() as usize, smooth(gy.fract()));
        for u in 0..w {
            let gx = u as f64 / cell;
            let (i, tx) = (gx.floor() as usize, smooth(gx.fract()));
            let a = grid[j * gw + i];
            let b = grid[j * gw + i + 1];
            let c = grid[(j + 1) * gw + i];
            let d = grid[(j + 1) * gw + i + 1];
            out[v * w + u] = (a * (1.0 - tx) + b * tx) * (1.0 - ty) + (c * (1.0 - tx) + d * tx) * ty;
        }
    }
    out
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Soft elliptical blobs rendered into a coverage map in [0, 1].
fn ellipses(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    count: usize,
    radius: (f64, f64),
) -> Vec<f64> {
    let mut cov = vec![0.0f64; w * h];
    for _ in 0..count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let a = rng.random_range(radius.0..radius.1);
        let b = a * rng.random_range(0.55..1.0);
        let th = rng.random_range(0.0..std::f64::consts::PI);
        let strength = rng.random_range(0.65..1.0);
        let (s, c) = th.sin_cos();
        let reach = a + 2.0;
        let u0 = (cx - reach).floor().max(0.0) as usize;
        let v0 = (cy - reach).floor().max(0.0) as usize;
        let u1 = ((cx + reach).ceil() as usize).min(w - 1);
        let v1 = ((cy + reach).ceil() as usize).min(h - 1);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let dx = u as f64 - cx;
                let dy = v as f64 - cy;
                let x = (c * dx + s * dy) / a;
                let y = (-s * dx + c * dy) / b;
                let r = (x * x + y * y).sqrt();
                // about one pixel of soft edge
                let edge = ((1.0 - r) * a).clamp(-0.5, 0.5) + 0.5;
                let p = &mut cov[v * w + u];
                *p = p.max(edge * strength);
            }
        }
    }
    cov
}

pub fn synth_tissue(width: usize, height: usize, seed: u64, params: &SynthParams) -> Result<RgbImage> {
    if width == 0 || height == 0 {
        return Err(Error::Size("synthetic image needs a positive size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width, height);
    let octaves = [(48.0, 0.45), (20.0, 0.3), (8.0, 0.17), (3.0, 0.08)];
    let mut stroma = vec![0.0; w * h];
    for (cell, weight) in octaves {
        for (s, n) in stroma.iter_mut().zip(value_noise(&mut rng, w, h, cell)) {
            *s += weight * n;
        }
    }
    let n_nuclei = (params.nuclei_density * (w * h) as f64 / 1000.0).round() as usize;
    let nuclei = ellipses(&mut rng, w, h, n_nuclei, params.nucleus_radius);
    let lumens = ellipses(&mut rng, w, h, params.lumens, params.lumen_radius);
    let pixels = (0..w * h)
        .map(|i| {
            let t = ((stroma[i] - 0.2) / 0.6).clamp(0.0, 1.0);
            let base = mix(EOSIN, STROMA_DARK, t);
            let with_lumen = mix(base, LUMEN, lumens[i]);
            mix(with_lumen, HEMATOXYLIN, nuclei[i])
        })
        .collect();
    RgbImage::new(w, h, pixels)
}
