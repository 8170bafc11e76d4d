//! Reference-based image quality: PSNR, Gaussian-window SSIM (with its
//! gradient, shared by the training loss) and per-video aggregation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::CartesianImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(pred: &CartesianImage, reference: &CartesianImage, data_range: f64) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(shape_err(pred, reference));
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data range must be positive, got {data_range}")));
    }
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

fn shape_err(a: &CartesianImage, b: &CartesianImage) -> Error {
    Error::Shape(format!(
        "{}x{} vs {}x{}",
        a.width(),
        a.height(),
        b.width(),
        b.height()
    ))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window_1d() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, x) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *x = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= s);
    g
}

/// Separable valid-mode filtering: `(h - 10) x (w - 10)` output.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; h * ow];
    for v in 0..h {
        let src = &x[v * w..(v + 1) * w];
        for u in 0..ow {
            rows[v * ow + u] = g.iter().zip(&src[u..u + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for v in 0..oh {
        for (j, gj) in g.iter().enumerate() {
            let src = &rows[(v + j) * ow..(v + j + 1) * ow];
            for (o, s) in out[v * ow..(v + 1) * ow].iter_mut().zip(src) {
                *o += gj * s;
            }
        }
    }
    out
}

/// Adjoint of `filter_valid`: spreads a valid-size map back to `w x h`.
fn filter_adjoint(y: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; h * ow];
    for v in 0..oh {
        for (j, gj) in g.iter().enumerate() {
            let dst = &mut rows[(v + j) * ow..(v + j + 1) * ow];
            for (d, s) in dst.iter_mut().zip(&y[v * ow..(v + 1) * ow]) {
                *d += gj * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for v in 0..h {
        for u in 0..ow {
            let s = rows[v * ow + u];
            for (d, gi) in out[v * w + u..v * w + u + SSIM_WINDOW].iter_mut().zip(g) {
                *d += gi * s;
            }
        }
    }
    out
}

/// Mean SSIM over valid windows, and optionally its gradient w.r.t. `x`.
///
/// Works on raw row-major buffers so the loss can share it.
pub fn ssim_raw(
    x: &[f64],
    y: &[f64],
    w: usize,
    h: usize,
    data_range: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if x.len() != w * h || y.len() != w * h {
        return Err(Error::Shape("buffer length does not match dimensions".into()));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::Config(format!("data range must be positive, got {data_range}")));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let g = gaussian_window_1d();
    let xx: Vec<f64> = x.iter().map(|a| a * a).collect();
    let yy: Vec<f64> = y.iter().map(|a| a * a).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, &g);
    let my = filter_valid(y, w, h, &g);
    let exx = filter_valid(&xx, w, h, &g);
    let eyy = filter_valid(&yy, w, h, &g);
    let exy = filter_valid(&xy, w, h, &g);
    let n = mx.len();
    let mut total = 0.0;
    let (mut da, mut db, mut dc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = exx[i] - ux * ux;
        let syy = eyy[i] - uy * uy;
        let sxy = exy[i] - ux * uy;
        let a1 = 2.0 * ux * uy + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = ux * ux + uy * uy + c1;
        let b2 = sxx + syy + c2;
        let num = a1 * a2;
        let den = b1 * b2;
        total += num / den;
        if want_grad {
            let den2 = den * den;
            // dS/d mu_x, dS/d E[x^2], dS/d E[xy] holding the other moments fixed
            let dn_dmu = 2.0 * uy * a2 - 2.0 * uy * a1;
            let dd_dmu = 2.0 * ux * b2 - 2.0 * ux * b1;
            da[i] = (dn_dmu * den - num * dd_dmu) / den2;
            db[i] = -num * b1 / den2;
            dc[i] = 2.0 * a1 / den;
        }
    }
    let score = total / n as f64;
    if !want_grad {
        return Ok((score, None));
    }
    let scale = 1.0 / n as f64;
    let ga = filter_adjoint(&da, w, h, &g);
    let gb = filter_adjoint(&db, w, h, &g);
    let gc = filter_adjoint(&dc, w, h, &g);
    let grad = (0..w * h)
        .map(|q| scale * (ga[q] + 2.0 * x[q] * gb[q] + y[q] * gc[q]))
        .collect();
    Ok((score, Some(grad)))
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).
pub fn ssim(pred: &CartesianImage, reference: &CartesianImage, data_range: f64) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(shape_err(pred, reference));
    }
    Ok(ssim_raw(
        pred.data(),
        reference.data(),
        pred.width(),
        pred.height(),
        data_range,
        false,
    )?
    .0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqaReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Frames with infinite PSNR, left out of the PSNR mean and std.
    pub infinite_psnr: usize,
}

/// Population mean and standard deviation; `(NaN, NaN)` for no samples.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn evaluate_video(sr: &[CartesianImage], hr: &[CartesianImage], data_range: f64) -> Result<IqaReport> {
    if sr.len() != hr.len() {
        return Err(Error::Shape(format!("{} frames vs {} frames", sr.len(), hr.len())));
    }
    if sr.is_empty() {
        return Err(Error::Data("no frames to evaluate".into()));
    }
    let mut p = Vec::with_capacity(sr.len());
    let mut s = Vec::with_capacity(sr.len());
    for (a, b) in sr.iter().zip(hr) {
        p.push(psnr(a, b, data_range)?);
        s.push(ssim(a, b, data_range)?);
    }
    Ok(report_from(p, s))
}

pub fn report_from(psnr: Vec<f64>, ssim: Vec<f64>) -> IqaReport {
    let finite: Vec<f64> = psnr.iter().copied().filter(|x| x.is_finite()).collect();
    let (psnr_mean, psnr_std) = mean_std(&finite);
    let (ssim_mean, ssim_std) = mean_std(&ssim);
    IqaReport {
        infinite_psnr: psnr.len() - finite.len(),
        psnr,
        ssim,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
    }
}

impl IqaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,ssim\n");
        for (i, (p, s)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(out, "{i},{p},{s}");
        }
        let _ = writeln!(out, "mean,{},{}", self.psnr_mean, self.ssim_mean);
        let _ = writeln!(out, "std,{},{}", self.psnr_std, self.ssim_std);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            what: "report",
            path: path.to_path_buf(),
            msg,
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("frame,psnr_db,ssim") {
            return Err(bad("missing header".into()));
        }
        let (mut p, mut s) = (Vec::new(), Vec::new());
        let mut summary = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(format!("line {}: expected 3 columns", no + 2)));
            }
            let num = |c: &str| {
                c.parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", no + 2)))
            };
            match cols[0] {
                "mean" | "std" => summary.push((num(cols[1])?, num(cols[2])?)),
                _ => {
                    p.push(num(cols[1])?);
                    s.push(num(cols[2])?);
                }
            }
        }
        if summary.len() != 2 {
            return Err(bad("missing mean/std rows".into()));
        }
        let mut report = report_from(p, s);
        report.psnr_mean = summary[0].0;
        report.ssim_mean = summary[0].1;
        report.psnr_std = summary[1].0;
        report.ssim_std = summary[1].1;
        Ok(report)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> CartesianImage {
        CartesianImage::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    /// Direct per-window evaluation with the 2-D weights; shares nothing with
    /// the separable path except the definition.
    fn ssim_direct(x: &CartesianImage, y: &CartesianImage, range: f64) -> f64 {
        let half = 5i64;
        let mut wts = vec![0.0; 121];
        for j in 0..11 {
            for i in 0..11 {
                let d2 = ((i as i64 - half).pow(2) + (j as i64 - half).pow(2)) as f64;
                wts[j * 11 + i] = (-d2 / 4.5).exp();
            }
        }
        let s: f64 = wts.iter().sum();
        wts.iter_mut().for_each(|w| *w /= s);
        let c1 = (0.01 * range) * (0.01 * range);
        let c2 = (0.03 * range) * (0.03 * range);
        let mut total = 0.0;
        let mut n = 0;
        for v in 0..=y.height() - 11 {
            for u in 0..=y.width() - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        mx += wts[j * 11 + i] * x.get(u + i, v + j);
                        my += wts[j * 11 + i] * y.get(u + i, v + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let dx = x.get(u + i, v + j) - mx;
                        let dy = y.get(u + i, v + j) - my;
                        vx += wts[j * 11 + i] * dx * dx;
                        vy += wts[j * 11 + i] * dy * dy;
                        cxy += wts[j * 11 + i] * dx * dy;
                    }
                }
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn psnr_closed_forms() {
        let a = CartesianImage::filled(8, 8, 0.25);
        let b = CartesianImage::filled(8, 8, 0.75);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((p - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &CartesianImage::zeros(4, 4), 1.0).is_err());
    }

    #[test]
    fn psnr_of_constructed_mse() {
        let a = CartesianImage::filled(10, 10, 0.5);
        // checkerboard of +-0.1 has MSE exactly 0.01
        let b = CartesianImage::from_fn(10, 10, |u, v| if (u + v) % 2 == 0 { 0.6 } else { 0.4 });
        assert!((psnr(&b, &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random_image(&mut rng, 32, 32);
        let z: Vec<f64> = (0..1024).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let noisy = CartesianImage::from_vec(
                32,
                32,
                base.data().iter().zip(&z).map(|(b, n)| b + sigma * n).collect(),
            )
            .unwrap();
            let p = psnr(&noisy, &base, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 20, 16);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        // checkerboard: local Gaussian means are ~1e-5, so structure dominates
        let z = CartesianImage::from_fn(20, 16, |u, v| if (u + v) % 2 == 0 { 0.4 } else { -0.4 });
        let neg = z.map(|x| -x);
        assert!(ssim(&neg, &z, 1.0).unwrap() < 0.0);
        assert!(ssim(&CartesianImage::zeros(10, 20), &CartesianImage::zeros(10, 20), 1.0).is_err());
    }

    #[test]
    fn ssim_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (w, h) in [(11, 11), (17, 23), (30, 12)] {
            let a = random_image(&mut rng, w, h);
            let b = random_image(&mut rng, w, h);
            let fast = ssim(&a, &b, 1.0).unwrap();
            let slow = ssim_direct(&a, &b, 1.0);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
            assert_eq!(fast, ssim(&b, &a, 1.0).unwrap());
        }
    }

    #[test]
    fn ssim_affine_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let (s, c) = (3.5, -0.7);
        let a2 = a.map(|x| s * x + c);
        let b2 = b.map(|x| s * x + c);
        let base = ssim(&a, &b, 1.0).unwrap();
        // luminance term is not shift invariant; only scale is exact
        let scaled = ssim(&a.map(|x| s * x), &b.map(|x| s * x), s).unwrap();
        assert!((base - scaled).abs() < 1e-9);
        assert!(ssim(&a2, &b2, s).unwrap().is_finite());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (14, 13);
        let x: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
        let (_, g) = ssim_raw(&x, &y, w, h, 1.0, true).unwrap();
        let g = g.unwrap();
        let step = 1e-6;
        for q in (0..w * h).step_by(7) {
            let mut xp = x.clone();
            xp[q] += step;
            let mut xm = x.clone();
            xm[q] -= step;
            let fp = ssim_raw(&xp, &y, w, h, 1.0, false).unwrap().0;
            let fm = ssim_raw(&xm, &y, w, h, 1.0, false).unwrap().0;
            let fd = (fp - fm) / (2.0 * step);
            assert!((fd - g[q]).abs() <= 1e-6 * fd.abs().max(1e-3), "{q}: {fd} vs {}", g[q]);
        }
    }

    #[test]
    fn video_aggregation() {
        let r = report_from(vec![20.0, 30.0], vec![0.5, 0.7]);
        assert_eq!((r.psnr_mean, r.psnr_std), (25.0, 5.0));
        let r = report_from(vec![20.0, f64::INFINITY], vec![1.0, 1.0]);
        assert_eq!((r.psnr_mean, r.infinite_psnr), (20.0, 1));
        assert_eq!((r.ssim_mean, r.ssim_std), (1.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<_> = (0..3).map(|_| random_image(&mut rng, 12, 12)).collect();
        let r = evaluate_video(&frames, &frames, 1.0).unwrap();
        assert_eq!((r.ssim_mean, r.ssim_std, r.infinite_psnr), (1.0, 0.0, 3));
        assert!(evaluate_video(&frames, &frames[..2], 1.0).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let r = report_from(vec![21.25, 30.5, f64::INFINITY], vec![0.5, 0.75, 1.0]);
        let text = r.to_csv();
        assert!(text.starts_with("frame,psnr_db,ssim\n0,21.25,0.5\n"));
        assert!(text.contains("\n2,inf,1\n"));
        let back = IqaReport::parse_csv(&text, Path::new("r.csv")).unwrap();
        assert_eq!(back, r);
    }
}
