//! Training: patch pipeline, SSIM+L1 loss, Adam and population based training.

pub mod adam;
pub mod loss;
pub mod patches;
pub mod pbt;

pub use adam::{adam_step, AdamState};
pub use loss::{ssim_l1_loss, ssim_l1_loss_raw, ALPHA};
pub use patches::{extract_patches, frame_input, tile_origins, Patch, PatchSet, PATCH_SIZE};
pub use pbt::{pbt_run, pbt_run_observed, ExploitEvent, HistoryRow, Member, PbtConfig, PbtResult};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{CartesianImage, NormStats, SparseImage};
use crate::network::{ArchKind, Architecture, NetInput, Network};

/// The three compared model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// CNNnetSR on the Delaunay-interpolated LR image.
    Cart,
    /// CNNnetSR on the zero-filled sparse image.
    Sparse,
    /// NWnetSR on the sparse image and its mask.
    Nw,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Cart, Mode::Sparse, Mode::Nw];

    pub fn architecture(self, blocks: usize, filters: usize, nw_depth: usize) -> Architecture {
        match self {
            Mode::Nw => Architecture::nw(blocks, filters, nw_depth),
            _ => Architecture::cnn(blocks, filters),
        }
    }

    pub fn matches(self, arch: &Architecture) -> bool {
        (self == Mode::Nw) == (arch.kind == ArchKind::Nw)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cart => "cart",
            Mode::Sparse => "sparse",
            Mode::Nw => "nw",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cart" => Ok(Mode::Cart),
            "sparse" => Ok(Mode::Sparse),
            "nw" => Ok(Mode::Nw),
            _ => Err(Error::Config(format!("unknown mode {s:?} (cart, sparse, nw)"))),
        }
    }
}

/// One frame after per-frame normalization with its LR statistics.
#[derive(Debug, Clone)]
pub struct NormalizedFrame {
    pub lr: CartesianImage,
    pub sparse: SparseImage,
    pub hr: CartesianImage,
    pub stats: NormStats,
}

/// Applies the same square symmetry to a patch's input and target.
pub fn augment(p: &Patch, t: u8) -> Patch {
    let input = match &p.input {
        NetInput::Dense(x) => NetInput::Dense(x.dihedral(t)),
        NetInput::Sparse { s, m } => NetInput::Sparse {
            s: s.dihedral(t),
            m: m.dihedral(t),
        },
    };
    Patch {
        frame: p.frame,
        origin: p.origin,
        input,
        target: p.target.dihedral(t),
    }
}

/// Mean loss and accumulated gradient over a slice of (patch, symmetry) pairs.
fn batch_gradient(net: &Network, batch: &[(&Patch, u8)]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|&(p, t)| {
            let aug;
            let p = if t == 0 {
                p
            } else {
                aug = augment(p, t);
                &aug
            };
            let (out, tape) = net.forward(&p.input)?;
            let (loss, g_out) = ssim_l1_loss(&out, &p.target)?;
            let mut g = vec![0.0; net.param_count()];
            net.backward(&tape, &g_out, &mut g)?;
            Ok((loss, g))
        })
        .collect();
    let mut grads = vec![0.0; net.param_count()];
    let mut total = 0.0;
    for part in parts {
        let (l, g) = part?;
        total += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.iter_mut().for_each(|g| *g *= inv);
    Ok((total * inv, grads))
}

/// One pass over `patches` in a shuffled order; returns the mean batch loss.
/// With `augment`, every patch gets a random flip/transpose.
pub fn train_epoch<R: Rng>(
    net: &mut Network,
    adam: &mut AdamState,
    patches: &PatchSet,
    batch_size: usize,
    augment: bool,
    rng: &mut R,
) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::Data("empty training patch set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<(&Patch, u8)> = chunk
            .iter()
            .map(|&i| {
                let t = if augment { rng.random_range(0..8u8) } else { 0 };
                (&patches.patches[i], t)
            })
            .collect();
        let (loss, grads) = batch_gradient(net, &batch)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Data("non-finite loss or gradient during training".into()));
        }
        adam_step(net.params_mut(), &grads, adam)?;
        net.project_nw_kernels()?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Mean SSIM+L1 loss of `net` over `patches`.
pub fn evaluate_loss(net: &Network, patches: &PatchSet) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::Data("empty validation patch set".into()));
    }
    let losses: Vec<Result<f64>> = patches
        .patches
        .par_iter()
        .map(|p| {
            let out = net.predict(&p.input)?;
            Ok(ssim_l1_loss(&out, &p.target)?.0)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / patches.len() as f64)
}
