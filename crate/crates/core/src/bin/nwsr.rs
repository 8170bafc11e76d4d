use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nwsr::baseline::{delaunay_triangulate, interpolate_linear, nw_gaussian_reconstruct};
use nwsr::config::RunConfig;
use nwsr::error::{Error, Result};
use nwsr::io::{self, BitDepth};
use nwsr::iqa::IqaReport;
use nwsr::network::{build_nwnet_sr, random_tensor, NetInput};
use nwsr::nw::{backward_raw, forward_raw, NwKernel};
use nwsr::pipeline::{self, LayoutSpec, RunManifest, SimData};
use nwsr::simulate::{to_grayscale, NoiseParams};
use nwsr::synth::{synth_tissue, SynthParams};
use nwsr::tensor::Tensor;
use nwsr::train::{ssim_l1_loss_raw, Mode};

#[derive(Parser)]
#[command(name = "nwsr", version = env!("CARGO_PKG_VERSION"), about = "Fiber-bundle image reconstruction")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded synthetic tissue-like RGB sources.
    Synth(SynthArgs),
    /// Degrade a source image into HR/LR/sparse frame sequences.
    Simulate(SimulateArgs),
    /// Reconstruct frames with a classical baseline.
    Reconstruct(ReconstructArgs),
    /// Train one model variant with population based training.
    Train(TrainArgs),
    /// PSNR/SSIM of predicted frames against references.
    Eval(EvalArgs),
    /// Tabulate several evaluation reports.
    Compare(CompareArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Re-run the command recorded in a manifest into a new directory.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 240)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Layout CSV, or gen:RADIUS,SPACING[,SEED].
    #[arg(long)]
    layout: String,
    #[arg(long, default_value_t = 0.1)]
    sigma_mult: f64,
    #[arg(long, default_value_t = 0.05)]
    sigma_add: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Delaunay,
    Nwgauss,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, required_unless_present = "sim_dir")]
    signals: Option<PathBuf>,
    #[arg(long, required_unless_present = "sim_dir")]
    layout: Option<PathBuf>,
    /// Output size as WxH (single-frame mode).
    #[arg(long)]
    size: Option<String>,
    /// Gaussian width for nwgauss (default: 0.7 x mean fiber spacing).
    #[arg(long)]
    sigma: Option<f64>,
    /// Reconstruct every frame of a simulate output directory.
    #[arg(long, conflicts_with_all = ["signals", "layout", "size"])]
    sim_dir: Option<PathBuf>,
    /// Output PNG (single-frame mode).
    #[arg(long, required_unless_present = "sim_dir")]
    out: Option<PathBuf>,
    /// Output directory (batch mode).
    #[arg(long, required_unless_present = "out")]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cart,
    Sparse,
    Nw,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Cart => Mode::Cart,
            ModeArg::Sparse => Mode::Sparse,
            ModeArg::Nw => Mode::Nw,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    sr_dir: PathBuf,
    #[arg(long)]
    hr_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// NAME=REPORT.csv, repeated; at least two.
    #[arg(long = "report", required = true)]
    reports: Vec<String>,
    /// Optional CSV copy of the table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerArg {
    Nw,
    Conv,
    Loss,
    Net,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    layer: LayerArg,
    #[arg(long, default_value_t = 2)]
    cin: usize,
    #[arg(long, default_value_t = 3)]
    t: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampled coordinates.
    #[arg(long, default_value_t = 200)]
    samples: usize,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: kind=usage msg={e}");
            return ExitCode::from(2);
        }
    }
    let rest = argv[1..].to_vec();
    match run(cli.command, rest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, args),
        Command::Simulate(a) => cmd_simulate(a, args),
        Command::Reconstruct(a) => cmd_reconstruct(a, args),
        Command::Train(a) => cmd_train(a, args),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn finish(mut manifest: RunManifest, dir: &Path, artifacts: &[PathBuf], start: Instant) -> Result<()> {
    manifest.add_artifacts(dir, artifacts);
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    manifest.write(dir)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    std::fs::create_dir_all(&a.out_dir)?;
    let base = pipeline::derive_seed(a.seed, pipeline::SEED_SYNTH);
    let params = SynthParams::default();
    let mut written = Vec::new();
    for i in 0..a.count {
        let img = synth_tissue(a.size, a.size, base.wrapping_add(i as u64), &params)?;
        let p = a.out_dir.join(format!("source_{i:04}.png"));
        io::write_rgb_png(&p, &img)?;
        written.push(p);
    }
    let mut m = RunManifest::new("synth", args);
    m.seeds.insert("seed".into(), a.seed);
    m.config.insert("count".into(), a.count.to_string());
    m.config.insert("size".into(), a.size.to_string());
    finish(m, &a.out_dir, &written, start)
}

fn cmd_simulate(a: SimulateArgs, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let spec = LayoutSpec::parse(&a.layout, pipeline::derive_seed(a.seed, pipeline::SEED_LAYOUT))?;
    let layout = spec.resolve()?;
    let rgb = io::read_rgb_png(&a.input)?;
    let noise = NoiseParams {
        sigma_mult: a.sigma_mult,
        sigma_add: a.sigma_add,
        seed: pipeline::derive_seed(a.seed, pipeline::SEED_NOISE),
    };
    let sim = pipeline::simulate_source(&to_grayscale(&rgb), &layout, &noise)?;
    let written = pipeline::write_sim_dir(&a.out_dir, &sim)?;
    let mut m = RunManifest::new("simulate", args);
    m.seeds.insert("seed".into(), a.seed);
    m.seeds.insert("noise".into(), noise.seed);
    if let LayoutSpec::Generated { seed, .. } = spec {
        m.seeds.insert("layout".into(), seed);
    }
    m.config.insert("input".into(), a.input.display().to_string());
    m.config.insert("layout".into(), a.layout.clone());
    m.config.insert("sigma_mult".into(), a.sigma_mult.to_string());
    m.config.insert("sigma_add".into(), a.sigma_add.to_string());
    m.config.insert("fibers".into(), layout.len().to_string());
    m.config.insert("frames".into(), sim.hr.len().to_string());
    finish(m, &a.out_dir, &written, start)
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size {s:?} is not WxH"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    let w = w.parse().map_err(|_| bad())?;
    let h = h.parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

fn reconstruct_one(
    method: Method,
    signals: &[f64],
    layout: &nwsr::FiberLayout,
    sigma: Option<f64>,
    (w, h): (usize, usize),
) -> Result<nwsr::CartesianImage> {
    match method {
        Method::Delaunay => interpolate_linear(signals, &delaunay_triangulate(layout)?, w, h),
        Method::Nwgauss => {
            nw_gaussian_reconstruct(signals, layout, pipeline::gauss_sigma(layout, sigma), w, h)
        }
    }
}

fn cmd_reconstruct(a: ReconstructArgs, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    if let Some(dir) = &a.sim_dir {
        let out_dir = a
            .out_dir
            .clone()
            .ok_or_else(|| Error::Config("--sim-dir needs --out-dir".into()))?;
        std::fs::create_dir_all(&out_dir)?;
        let SimData {
            layout,
            hr,
            signals,
        } = pipeline::load_sim_dir(dir)?;
        let mut written = Vec::new();
        for (i, (s, f)) in signals.iter().zip(&hr).enumerate() {
            let img = reconstruct_one(a.method, s, &layout, a.sigma, (f.width(), f.height()))?;
            let p = out_dir.join(format!("frame_{i:04}.png"));
            io::write_gray_png(&p, &img, BitDepth::Sixteen)?;
            written.push(p);
        }
        let mut m = RunManifest::new("reconstruct", args);
        m.config.insert("sim_dir".into(), dir.display().to_string());
        return finish(m, &out_dir, &written, start);
    }
    let (Some(sp), Some(lp), Some(out)) = (&a.signals, &a.layout, &a.out) else {
        return Err(Error::Config("need --signals, --layout and --out".into()));
    };
    let layout = io::read_layout_csv(lp)?;
    let signals = io::read_signals_csv(sp)?;
    let side = layout.bounding_box_side();
    let size = match &a.size {
        Some(s) => parse_size(s)?,
        None => (side, side),
    };
    let img = reconstruct_one(a.method, &signals, &layout, a.sigma, size)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    io::write_gray_png(out, &img, BitDepth::Sixteen)?;
    Ok(())
}

fn cmd_train(a: TrainArgs, args: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let cfg = RunConfig::load(&a.config)?;
    let mode: Mode = a.mode.into();
    std::fs::create_dir_all(&a.out_dir)?;
    let snapshot = a.out_dir.join("config.txt");
    std::fs::write(&snapshot, cfg.to_text())?;
    let outcome = pipeline::run_train(&cfg, mode, &a.out_dir)?;
    let mut m = RunManifest::new("train", args);
    m.seeds.insert("seed".into(), cfg.pbt.seed);
    m.config = nwsr::config::parse_pairs(&cfg.to_text(), &snapshot)?;
    m.config.insert("mode".into(), mode.to_string());
    m.config.insert("best_member".into(), outcome.best_member.to_string());
    let mut written = outcome.artifacts;
    written.push(snapshot);
    println!(
        "{mode}: PSNR {:.3} dB, SSIM {:.4} (INTER {:.3} dB / {:.4}, NW GAUSS {:.3} dB / {:.4})",
        outcome.model.psnr_mean,
        outcome.model.ssim_mean,
        outcome.inter.psnr_mean,
        outcome.inter.ssim_mean,
        outcome.nw_gauss.psnr_mean,
        outcome.nw_gauss.ssim_mean
    );
    finish(m, &a.out_dir, &written, start)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let report = pipeline::evaluate_dirs(&a.sr_dir, &a.hr_dir)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    report.write_csv(&a.out)?;
    println!(
        "{} frames: PSNR {:.3}\u{b1}{:.3} dB, SSIM {:.4}\u{b1}{:.4}",
        report.psnr.len(),
        report.psnr_mean,
        report.psnr_std,
        report.ssim_mean,
        report.ssim_std
    );
    if report.infinite_psnr > 0 {
        println!("{} frames with infinite PSNR left out of the PSNR mean", report.infinite_psnr);
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let mut reports = Vec::new();
    for r in &a.reports {
        let (name, path) = r
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--report {r:?} is not NAME=PATH")))?;
        reports.push((name.to_string(), IqaReport::read_csv(Path::new(path))?));
    }
    let (table, csv) = pipeline::compare_reports(&reports)?;
    print!("{table}");
    if let Some(out) = &a.out {
        std::fs::write(out, csv)?;
    }
    Ok(())
}

fn max_rel_error(pairs: &[(f64, f64)]) -> f64 {
    pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let step = 1e-6;
    let (h, w) = (12, 12);
    let pairs: Vec<(f64, f64)> = match a.layer {
        LayerArg::Nw | LayerArg::Conv => {
            let nw = matches!(a.layer, LayerArg::Nw);
            let kernel = NwKernel::init(a.t, a.cin, a.k, &mut rng).normalized()?;
            let s = random_tensor(&mut rng, a.cin, h, w, 0.0, 1.0);
            let m = Tensor {
                data: (0..s.data.len()).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect(),
                ..s.clone()
            };
            let r = random_tensor(&mut rng, a.t, h, w, -1.0, 1.0);
            let objective = |wts: &[f64]| -> Result<f64> {
                let out = if nw {
                    forward_raw(&s, &m, wts, &kernel.bias, a.k, nwsr::nw::DEFAULT_EPS)?.0
                } else {
                    let ck = nwsr::network::ConvKernel::new(a.t, a.cin, a.k, wts.to_vec(), kernel.bias.clone())?;
                    nwsr::network::conv_forward(&s, &ck)?
                };
                Ok(out.data.iter().zip(&r.data).map(|(x, y)| x * y).sum())
            };
            let analytic = if nw {
                let (_, _, cache) = forward_raw(&s, &m, &kernel.weights, &kernel.bias, a.k, nwsr::nw::DEFAULT_EPS)?;
                backward_raw(&r, None, &cache, &kernel.weights, a.k)?.weights
            } else {
                let ck = nwsr::network::ConvKernel::new(a.t, a.cin, a.k, kernel.weights.clone(), kernel.bias.clone())?;
                nwsr::network::conv_backward(&s, &ck, &r)?.weights
            };
            let mut out = Vec::new();
            for _ in 0..a.samples {
                let i = rng.random_range(0..kernel.weights.len());
                let mut p = kernel.weights.clone();
                p[i] += step;
                let fp = objective(&p)?;
                p[i] -= 2.0 * step;
                let fm = objective(&p)?;
                out.push((analytic[i], (fp - fm) / (2.0 * step)));
            }
            out
        }
        LayerArg::Loss => {
            let (h, w) = (16, 16);
            let t: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
            let mut p: Vec<f64> = (0..h * w).map(|_| rng.random()).collect();
            let (_, g) = ssim_l1_loss_raw(&p, &t, w, h)?;
            let mut out = Vec::new();
            for _ in 0..a.samples {
                let i = rng.random_range(0..h * w);
                let orig = p[i];
                p[i] = orig + step;
                let fp = ssim_l1_loss_raw(&p, &t, w, h)?.0;
                p[i] = orig - step;
                let fm = ssim_l1_loss_raw(&p, &t, w, h)?.0;
                p[i] = orig;
                out.push((g[i], (fp - fm) / (2.0 * step)));
            }
            out
        }
        LayerArg::Net => {
            let (h, w) = (16, 16);
            let mut net = build_nwnet_sr(2, 4, 2, a.seed)?;
            let s = random_tensor(&mut rng, 1, h, w, 0.0, 1.0);
            let m = Tensor {
                data: (0..h * w).map(|_| (rng.random::<f64>() < 0.3) as u8 as f64).collect(),
                ..s.clone()
            };
            let s = Tensor {
                data: s.data.iter().zip(&m.data).map(|(x, y)| x * y).collect(),
                ..s
            };
            let input = NetInput::Sparse { s, m };
            let r = random_tensor(&mut rng, 1, h, w, -1.0, 1.0);
            let (_, tape) = net.forward(&input)?;
            let mut g = vec![0.0; net.param_count()];
            net.backward(&tape, &r, &mut g)?;
            let mut out = Vec::new();
            for _ in 0..a.samples {
                let i = rng.random_range(0..net.param_count());
                let orig = net.params()[i];
                let mut f = |v: f64| -> Result<f64> {
                    net.params_mut()[i] = v;
                    let y = net.predict(&input)?;
                    Ok(y.data.iter().zip(&r.data).map(|(x, y)| x * y).sum())
                };
                let fp = f(orig + step)?;
                let fm = f(orig - step)?;
                net.params_mut()[i] = orig;
                out.push((g[i], (fp - fm) / (2.0 * step)));
            }
            out
        }
    };
    let worst = max_rel_error(&pairs);
    println!("samples={} max_rel_error={worst:e}", pairs.len());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    let mut args = manifest.args.clone();
    let new_dir = a.out_dir.display().to_string();
    let mut replaced = false;
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--out-dir" && i + 1 < args.len() {
            args[i + 1] = new_dir.clone();
            replaced = true;
            i += 2;
            continue;
        }
        if let Some(rest) = args[i].strip_prefix("--out-dir=") {
            let _ = rest;
            args[i] = format!("--out-dir={new_dir}");
            replaced = true;
        }
        i += 1;
    }
    if !replaced {
        return Err(Error::Config(format!(
            "manifest command {:?} has no --out-dir to redirect",
            manifest.command
        )));
    }
    let mut argv = vec!["nwsr".to_string()];
    argv.extend(args.iter().cloned());
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Config(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Config("refusing to replay a replay".into()));
    }
    run(cli.command, args)
}
