//! Non-overlapping square tiles of normalized frames.

use crate::error::{Error, Result};
use crate::imaging::{CartesianImage, SparseImage};
use crate::network::NetInput;
use crate::tensor::Tensor;

use super::{Mode, NormalizedFrame};

pub const PATCH_SIZE: usize = 64;

/// One aligned training example.
#[derive(Debug, Clone)]
pub struct Patch {
    pub frame: usize,
    pub origin: (usize, usize),
    pub input: NetInput,
    pub target: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Tile origins at stride `size` from (0, 0); partial border tiles are dropped.
pub fn tile_origins(width: usize, height: usize, size: usize) -> Result<Vec<(usize, usize)>> {
    if size == 0 || width < size || height < size {
        return Err(Error::Size(format!(
            "{width}x{height} frame is smaller than a {size}x{size} patch"
        )));
    }
    let mut out = Vec::new();
    for j in 0..height / size {
        for i in 0..width / size {
            out.push((i * size, j * size));
        }
    }
    Ok(out)
}

fn crop_tensor(img: &CartesianImage, (u, v): (usize, usize), size: usize) -> Result<Tensor> {
    Ok(Tensor::from_image(&img.crop(u, v, size, size)?))
}

fn crop_sparse(s: &SparseImage, (u, v): (usize, usize), size: usize) -> Result<(Tensor, Tensor)> {
    Ok((
        Tensor::from_image(&s.signal.crop(u, v, size, size)?),
        Tensor::from_mask(&s.mask.crop(u, v, size, size)?),
    ))
}

/// Builds the network input for a whole frame (or a tile of it).
pub fn frame_input(frame: &NormalizedFrame, mode: Mode) -> NetInput {
    match mode {
        Mode::Cart => NetInput::Dense(Tensor::from_image(&frame.lr)),
        Mode::Sparse => NetInput::Dense(Tensor::from_image(&frame.sparse.signal)),
        Mode::Nw => NetInput::Sparse {
            s: Tensor::from_image(&frame.sparse.signal),
            m: Tensor::from_mask(&frame.sparse.mask),
        },
    }
}

pub fn extract_patches(frames: &[NormalizedFrame], mode: Mode, size: usize) -> Result<PatchSet> {
    let mut patches = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for origin in tile_origins(f.hr.width(), f.hr.height(), size)? {
            let input = match mode {
                Mode::Cart => NetInput::Dense(crop_tensor(&f.lr, origin, size)?),
                Mode::Sparse => NetInput::Dense(crop_sparse(&f.sparse, origin, size)?.0),
                Mode::Nw => {
                    let (s, m) = crop_sparse(&f.sparse, origin, size)?;
                    NetInput::Sparse { s, m }
                }
            };
            patches.push(Patch {
                frame: fi,
                origin,
                input,
                target: crop_tensor(&f.hr, origin, size)?,
            });
        }
    }
    Ok(PatchSet { patches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{sparsify, NormStats};
    use crate::simulate::generate_layout;

    #[test]
    fn tiling_counts() {
        assert_eq!(tile_origins(128, 128, 64).unwrap().len(), 4);
        assert_eq!(tile_origins(100, 100, 64).unwrap(), vec![(0, 0)]);
        assert_eq!(tile_origins(200, 64, 64).unwrap().len(), 3);
        assert!(matches!(tile_origins(63, 100, 64), Err(Error::Size(_))));
    }

    fn frame(side: usize) -> (NormalizedFrame, crate::imaging::FiberLayout) {
        let layout = generate_layout(side as f64 / 2.0, 2.5, 3).unwrap();
        let n = layout.len();
        let signals: Vec<f64> = (0..n).map(|i| (i % 7) as f64 / 7.0).collect();
        let sparse = sparsify(&signals, &layout, side, side).unwrap();
        let hr = CartesianImage::from_fn(side, side, |u, v| (u + 2 * v) as f64 / 400.0);
        (
            NormalizedFrame {
                lr: hr.map(|x| x * 0.5),
                sparse,
                hr,
                stats: NormStats::IDENTITY,
            },
            layout,
        )
    }

    #[test]
    fn sparse_patch_masks_count_fibers() {
        let (f, layout) = frame(130);
        let set = extract_patches(std::slice::from_ref(&f), Mode::Nw, 64).unwrap();
        assert_eq!(set.len(), 4);
        for p in &set.patches {
            let (u0, v0) = (p.origin.0 as i64, p.origin.1 as i64);
            let expect = layout
                .pixel_positions()
                .iter()
                .filter(|&&(u, v)| u >= u0 && u < u0 + 64 && v >= v0 && v < v0 + 64)
                .count();
            let NetInput::Sparse { m, .. } = &p.input else { panic!() };
            assert_eq!(m.data.iter().filter(|&&x| x == 1.0).count(), expect);
        }
    }

    #[test]
    fn dense_and_sparse_tilings_agree() {
        let (f, _) = frame(130);
        let frames = [f];
        let a = extract_patches(&frames, Mode::Cart, 64).unwrap();
        let b = extract_patches(&frames, Mode::Sparse, 64).unwrap();
        let c = extract_patches(&frames, Mode::Nw, 64).unwrap();
        let origins = |s: &PatchSet| s.patches.iter().map(|p| p.origin).collect::<Vec<_>>();
        assert_eq!(origins(&a), origins(&b));
        assert_eq!(origins(&a), origins(&c));
        for (p, q) in a.patches.iter().zip(&c.patches) {
            assert_eq!(p.target, q.target);
            assert_eq!(p.target.data[0], frames[0].hr.get(p.origin.0, p.origin.1));
        }
    }
}
