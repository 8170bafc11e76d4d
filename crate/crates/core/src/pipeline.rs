//! Workflows shared by the command line tool and the test suites: simulated
//! data directories, dataset assembly, baselines and model evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::{default_sigma, mean_fiber_spacing, nw_gaussian_reconstruct};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::imaging::{frame_stats, normalize_sparse, normalize_with, CartesianImage, FiberLayout};
use crate::io::{self, BitDepth};
use crate::iqa::{evaluate_video, IqaReport};
use crate::network::Network;
use crate::simulate::{generate_layout, simulate_video, LrSimulator, NoiseParams};
use crate::train::pbt::history_csv;
use crate::train::{extract_patches, frame_input, pbt_run, Mode, NormalizedFrame, PbtResult};

/// Where a fiber layout comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutSpec {
    Generated { radius: f64, spacing: f64, seed: u64 },
    File(PathBuf),
}

impl LayoutSpec {
    /// `gen:R,S[,SEED]` or a CSV path. A missing seed falls back to `default_seed`.
    pub fn parse(spec: &str, default_seed: u64) -> Result<Self> {
        let Some(rest) = spec.strip_prefix("gen:") else {
            return Ok(LayoutSpec::File(PathBuf::from(spec)));
        };
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("layout spec {spec:?} is not gen:R,S[,SEED]"));
        if !(2..=3).contains(&parts.len()) {
            return Err(bad());
        }
        let radius = parts[0].parse().map_err(|_| bad())?;
        let spacing = parts[1].parse().map_err(|_| bad())?;
        let seed = match parts.get(2) {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => default_seed,
        };
        Ok(LayoutSpec::Generated {
            radius,
            spacing,
            seed,
        })
    }

    pub fn resolve(&self) -> Result<FiberLayout> {
        match self {
            LayoutSpec::Generated {
                radius,
                spacing,
                seed,
            } => generate_layout(*radius, *spacing, *seed),
            LayoutSpec::File(p) => io::read_layout_csv(p),
        }
    }
}

/// Simulated frames of one source: FoV-masked HR crops and noisy signals.
#[derive(Debug, Clone)]
pub struct SimData {
    pub layout: FiberLayout,
    pub hr: Vec<CartesianImage>,
    pub signals: Vec<Vec<f64>>,
}

pub fn simulate_source(gray: &CartesianImage, layout: &FiberLayout, noise: &NoiseParams) -> Result<SimData> {
    let video = simulate_video(gray, layout, noise)?;
    Ok(SimData {
        layout: layout.clone(),
        hr: video.hr.frames,
        signals: video.frames.into_iter().map(|f| f.signals).collect(),
    })
}

fn frame_name(prefix: &str, i: usize, ext: &str) -> String {
    format!("{prefix}_{i:04}.{ext}")
}

/// Writes `layout.csv`, `signals_####.csv` and HR/LR/sparse/mask PNGs.
pub fn write_sim_dir(dir: &Path, sim: &SimData) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let p = dir.join("layout.csv");
    io::write_layout_csv(&p, &sim.layout)?;
    written.push(p);
    let lrs = LrSimulator::new(&sim.layout)?;
    for (i, (hr, s)) in sim.hr.iter().zip(&sim.signals).enumerate() {
        let f = lrs.from_signals(s.clone(), hr.width(), hr.height())?;
        let mask = CartesianImage::from_vec(
            hr.width(),
            hr.height(),
            f.sparse.mask.values().to_vec(),
        )?;
        for (name, img) in [
            ("hr", hr),
            ("lr", &f.lr),
            ("sparse", &f.sparse.signal),
            ("mask", &mask),
        ] {
            let p = dir.join(frame_name(name, i, "png"));
            io::write_gray_png(&p, img, BitDepth::Sixteen)?;
            written.push(p);
        }
        let p = dir.join(frame_name("signals", i, "csv"));
        io::write_signals_csv(&p, s)?;
        written.push(p);
    }
    Ok(written)
}

/// Reads a directory written by [`write_sim_dir`].
pub fn load_sim_dir(dir: &Path) -> Result<SimData> {
    let layout = io::read_layout_csv(&dir.join("layout.csv"))?;
    let mut hr = Vec::new();
    let mut signals = Vec::new();
    for i in 0.. {
        let sp = dir.join(frame_name("signals", i, "csv"));
        if !sp.exists() {
            break;
        }
        let s = io::read_signals_csv(&sp)?;
        if s.len() != layout.len() {
            return Err(Error::Data(format!(
                "{} has {} signals for {} fibers",
                sp.display(),
                s.len(),
                layout.len()
            )));
        }
        signals.push(s);
        hr.push(io::read_gray_png(&dir.join(frame_name("hr", i, "png")))?);
    }
    if hr.is_empty() {
        return Err(Error::Data(format!("no frames in {}", dir.display())));
    }
    Ok(SimData {
        layout,
        hr,
        signals,
    })
}

/// Rebuilds LR and sparse frames from the signals and normalizes each frame
/// with its LR statistics.
pub fn normalized_frames(sim: &SimData) -> Result<Vec<NormalizedFrame>> {
    let lrs = LrSimulator::new(&sim.layout)?;
    sim.hr
        .iter()
        .zip(&sim.signals)
        .map(|(hr, s)| {
            let f = lrs.from_signals(s.clone(), hr.width(), hr.height())?;
            let stats = frame_stats(&f.lr)?;
            Ok(NormalizedFrame {
                lr: normalize_with(&f.lr, &stats),
                sparse: normalize_sparse(&f.sparse, &stats),
                hr: normalize_with(hr, &stats),
                stats,
            })
        })
        .collect()
}

/// Gaussian width for the NW GAUSS baseline: explicit, or derived from spacing.
pub fn gauss_sigma(layout: &FiberLayout, sigma: Option<f64>) -> f64 {
    sigma.unwrap_or_else(|| default_sigma(mean_fiber_spacing(layout)))
}

/// NW GAUSS reconstructions of raw signals, mapped into each frame's normalized domain.
pub fn nw_gauss_frames(sim: &SimData, frames: &[NormalizedFrame], sigma: f64) -> Result<Vec<CartesianImage>> {
    sim.signals
        .iter()
        .zip(frames)
        .map(|(s, f)| {
            let raw = nw_gaussian_reconstruct(s, &sim.layout, sigma, f.hr.width(), f.hr.height())?;
            Ok(normalize_with(&raw, &f.stats))
        })
        .collect()
}

/// Full-frame predictions of a trained model.
pub fn predict_frames(net: &Network, mode: Mode, frames: &[NormalizedFrame]) -> Result<Vec<CartesianImage>> {
    if !mode.matches(&net.architecture()) {
        return Err(Error::Config(format!(
            "mode {mode} does not match a {:?} network",
            net.architecture().kind
        )));
    }
    frames
        .iter()
        .map(|f| net.predict(&frame_input(f, mode))?.to_image())
        .collect()
}

/// Metrics in the normalized domain (unit data range).
pub fn evaluate_frames(pred: &[CartesianImage], frames: &[NormalizedFrame]) -> Result<IqaReport> {
    let hr: Vec<CartesianImage> = frames.iter().map(|f| f.hr.clone()).collect();
    evaluate_video(pred, &hr, 1.0)
}

/// Places images side by side with a 2-pixel white gutter.
pub fn grid(images: &[&CartesianImage]) -> Result<CartesianImage> {
    let Some(first) = images.first() else {
        return Err(Error::Shape("empty grid".into()));
    };
    let (w, h) = (first.width(), first.height());
    if images.iter().any(|i| i.width() != w || i.height() != h) {
        return Err(Error::Shape("grid tiles differ in size".into()));
    }
    let gap = 2;
    let total = images.len() * w + (images.len() - 1) * gap;
    let mut out = CartesianImage::filled(total, h, 1.0);
    for (k, img) in images.iter().enumerate() {
        let x0 = k * (w + gap);
        for v in 0..h {
            for u in 0..w {
                out.set(x0 + u, v, img.get(u, v));
            }
        }
    }
    Ok(out)
}

/// Splits one user seed into independent per-purpose seeds (SplitMix64).
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SEED_LAYOUT: u64 = 1;
pub const SEED_NOISE: u64 = 2;
pub const SEED_SYNTH: u64 = 3;

pub fn tool_version() -> String {
    format!("nwsr {}", env!("CARGO_PKG_VERSION"))
}

/// Record of one command run, written as `manifest.json` in its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub wall_clock_s: f64,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            args,
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            tool_version: tool_version(),
            wall_clock_s: 0.0,
        }
    }

    /// Records artifact paths relative to `dir`.
    pub fn add_artifacts(&mut self, dir: &Path, paths: &[PathBuf]) {
        for p in paths {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            self.artifacts.push(rel.display().to_string());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_NAME);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Everything `run_train` produced, for callers that keep going in memory.
pub struct TrainOutcome {
    pub model: IqaReport,
    pub inter: IqaReport,
    pub nw_gauss: IqaReport,
    pub best_member: usize,
    pub artifacts: Vec<PathBuf>,
}

/// Loaded and normalized simulation directories.
pub struct Split {
    pub sims: Vec<SimData>,
    pub frames: Vec<Vec<NormalizedFrame>>,
}

impl Split {
    pub fn load(dirs: &[PathBuf]) -> Result<Self> {
        let sims = dirs.iter().map(|d| load_sim_dir(d)).collect::<Result<Vec<_>>>()?;
        Self::from_sims(sims)
    }

    pub fn from_sims(sims: Vec<SimData>) -> Result<Self> {
        let frames = sims.iter().map(normalized_frames).collect::<Result<Vec<_>>>()?;
        Ok(Self { sims, frames })
    }

    pub fn all_frames(&self) -> Vec<NormalizedFrame> {
        self.frames.iter().flatten().cloned().collect()
    }
}

pub fn history_and_events_csv(res: &PbtResult) -> (String, String) {
    let mut ev = String::from("iteration,member,source,lr_copied,lr_after,min_before,min_after\n");
    for e in &res.events {
        ev.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.iteration, e.member, e.source, e.lr_copied, e.lr_after, e.min_before, e.min_after
        ));
    }
    (history_csv(&res.history), ev)
}

fn write_frames(dir: &Path, frames: &[CartesianImage], out: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        let p = dir.join(frame_name("frame", i, "png"));
        io::write_gray_png(&p, f, BitDepth::Sixteen)?;
        out.push(p);
    }
    Ok(())
}

/// Trains one model variant with PBT and evaluates it and both baselines on
/// the test split. All artifacts go to `out_dir`.
pub fn run_train(cfg: &RunConfig, mode: Mode, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let train = Split::load(&cfg.train_dirs)?;
    let val = Split::load(&cfg.val_dirs)?;
    let test = Split::load(&cfg.test_dirs)?;
    let train_p = extract_patches(&train.all_frames(), mode, cfg.patch_size)?;
    let val_p = extract_patches(&val.all_frames(), mode, cfg.patch_size)?;
    let arch = mode.architecture(cfg.blocks, cfg.filters, cfg.nw_depth);
    let res = pbt_run(&cfg.pbt, arch, &train_p, &val_p)?;
    train_outputs(cfg, mode, &res, &test, out_dir)
}

/// Writes checkpoint, histories, test-set predictions, grids and reports.
pub fn train_outputs(
    cfg: &RunConfig,
    mode: Mode,
    res: &PbtResult,
    test: &Split,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let mut artifacts = Vec::new();
    let model_path = out_dir.join("model.json");
    checkpoint::save(&res.best, &model_path)?;
    artifacts.push(model_path.clone());
    artifacts.push(model_path.with_extension("bin"));
    let (history, events) = history_and_events_csv(res);
    for (name, text) in [("history.csv", history), ("events.csv", events)] {
        let p = out_dir.join(name);
        std::fs::write(&p, text)?;
        artifacts.push(p);
    }

    let frames = test.all_frames();
    let pred = predict_frames(&res.best, mode, &frames)?;
    let inter: Vec<CartesianImage> = frames.iter().map(|f| f.lr.clone()).collect();
    let mut gauss = Vec::new();
    for (sim, fr) in test.sims.iter().zip(&test.frames) {
        gauss.extend(nw_gauss_frames(sim, fr, gauss_sigma(&sim.layout, cfg.nw_gauss_sigma))?);
    }
    let hr: Vec<CartesianImage> = frames.iter().map(|f| f.hr.clone()).collect();
    let sparse: Vec<CartesianImage> = frames.iter().map(|f| f.sparse.signal.clone()).collect();

    let test_dir = out_dir.join("test");
    write_frames(&test_dir.join("sr"), &pred, &mut artifacts)?;
    write_frames(&test_dir.join("hr"), &hr, &mut artifacts)?;
    write_frames(&test_dir.join("inter"), &inter, &mut artifacts)?;
    write_frames(&test_dir.join("nwgauss"), &gauss, &mut artifacts)?;
    let grids: Vec<CartesianImage> = (0..frames.len())
        .map(|i| grid(&[&hr[i], &sparse[i], &inter[i], &gauss[i], &pred[i]]))
        .collect::<Result<_>>()?;
    write_frames(&out_dir.join("grids"), &grids, &mut artifacts)?;

    let model = evaluate_frames(&pred, &frames)?;
    let inter_r = evaluate_frames(&inter, &frames)?;
    let gauss_r = evaluate_frames(&gauss, &frames)?;
    for (name, r) in [
        ("report.csv", &model),
        ("inter_report.csv", &inter_r),
        ("nwgauss_report.csv", &gauss_r),
    ] {
        let p = out_dir.join(name);
        r.write_csv(&p)?;
        artifacts.push(p);
    }
    Ok(TrainOutcome {
        model,
        inter: inter_r,
        nw_gauss: gauss_r,
        best_member: res.best_member,
        artifacts,
    })
}

/// Sorted `.png` files of a directory.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    out.sort();
    Ok(out)
}

/// Pairs PNGs of two directories in name order and evaluates them.
pub fn evaluate_dirs(sr_dir: &Path, hr_dir: &Path) -> Result<IqaReport> {
    let sr = png_files(sr_dir)?;
    let hr = png_files(hr_dir)?;
    if sr.len() != hr.len() {
        return Err(Error::Data(format!(
            "{} has {} images, {} has {}",
            sr_dir.display(),
            sr.len(),
            hr_dir.display(),
            hr.len()
        )));
    }
    let load = |ps: &[PathBuf]| ps.iter().map(|p| io::read_gray_png(p)).collect::<Result<Vec<_>>>();
    evaluate_video(&load(&sr)?, &load(&hr)?, 1.0)
}

/// One Table-1 style row per named report, plus the same data as CSV.
pub fn compare_reports(reports: &[(String, IqaReport)]) -> Result<(String, String)> {
    if reports.len() < 2 {
        return Err(Error::Data("compare needs at least two reports".into()));
    }
    let width = reports.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut table = format!("{:<width$}  {:>15}  {:>15}\n", "method", "SSIM", "PSNR");
    let mut csv = String::from("method,ssim_mean,ssim_std,psnr_mean,psnr_std\n");
    for (name, r) in reports {
        table.push_str(&format!(
            "{:<width$}  {:>15}  {:>15}\n",
            name,
            format!("{:.3}\u{b1}{:.3}", r.ssim_mean, r.ssim_std),
            format!("{:.2}\u{b1}{:.2}", r.psnr_mean, r.psnr_std),
        ));
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.ssim_mean, r.ssim_std, r.psnr_mean, r.psnr_std
        ));
    }
    Ok((table, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_spec_parsing() {
        assert_eq!(
            LayoutSpec::parse("gen:60,2.5,7", 0).unwrap(),
            LayoutSpec::Generated {
                radius: 60.0,
                spacing: 2.5,
                seed: 7
            }
        );
        assert_eq!(
            LayoutSpec::parse("gen:60,2.5", 3).unwrap(),
            LayoutSpec::Generated {
                radius: 60.0,
                spacing: 2.5,
                seed: 3
            }
        );
        assert!(LayoutSpec::parse("gen:60", 0).is_err());
        assert!(LayoutSpec::parse("gen:a,b,c", 0).is_err());
        assert_eq!(
            LayoutSpec::parse("x/layout.csv", 0).unwrap(),
            LayoutSpec::File("x/layout.csv".into())
        );
    }

    #[test]
    fn grid_layout() {
        let a = CartesianImage::filled(3, 2, 0.0);
        let b = CartesianImage::filled(3, 2, 0.5);
        let g = grid(&[&a, &b]).unwrap();
        assert_eq!((g.width(), g.height()), (8, 2));
        assert_eq!(g.get(3, 0), 1.0);
        assert_eq!(g.get(5, 1), 0.5);
    }
}
