//! File formats: grayscale/RGB PNG, fiber layout CSV, signal CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{CartesianImage, FiberLayout};
use crate::simulate::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

/// Writes a grayscale PNG; intensities are clamped to [0, 1] before quantization.
pub fn write_gray_png(path: &Path, img: &CartesianImage, depth: BitDepth) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            img.data()
                .iter()
                .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect()
        }
        BitDepth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            img.data()
                .iter()
                .flat_map(|&x| ((x.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
                .collect()
        }
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let buf = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf.iter().map(|&b| b as f64 / 255.0).collect(),
        other => return Err(Error::Png(format!("unsupported bit depth {other:?}"))),
    };
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        samples,
    })
}

/// Reads a PNG as grayscale; colour images are converted with the luma weights.
pub fn read_gray_png(path: &Path) -> Result<CartesianImage> {
    let d = decode(path)?;
    let data: Vec<f64> = match d.channels {
        1 => d.samples,
        2 => d.samples.chunks_exact(2).map(|c| c[0]).collect(),
        3 | 4 => d
            .samples
            .chunks_exact(d.channels)
            .map(|c| crate::simulate::luma(c[0], c[1], c[2]))
            .collect(),
        n => return Err(Error::Png(format!("unsupported channel count {n}"))),
    };
    CartesianImage::from_vec(d.width, d.height, data)
}

/// Reads a PNG as RGB; grayscale inputs are replicated across channels.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let d = decode(path)?;
    let mut rgb = Vec::with_capacity(d.width * d.height);
    for px in d.samples.chunks_exact(d.channels) {
        rgb.push(match d.channels {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        });
    }
    RgbImage::new(d.width, d.height, rgb)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img
        .pixels()
        .iter()
        .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// Layout CSV: `# fov_cx,fov_cy,fov_r=<cx>,<cy>,<r>` followed by one `x,y` per fiber.
pub fn write_layout_csv(path: &Path, layout: &FiberLayout) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (cx, cy) = layout.fov_centre();
    writeln!(w, "# fov_cx,fov_cy,fov_r={cx},{cy},{}", layout.fov_radius())?;
    for &(x, y) in layout.centres() {
        writeln!(w, "{x},{y}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_layout_csv(path: &Path) -> Result<FiberLayout> {
    let bad = |msg: String| Error::Parse {
        what: "layout csv",
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
    let values = header
        .trim()
        .strip_prefix("# fov_cx,fov_cy,fov_r=")
        .ok_or_else(|| bad(format!("bad header line {header:?}")))?;
    let fov = parse_floats(values).map_err(bad)?;
    if fov.len() != 3 {
        return Err(bad(format!("expected 3 header values, got {}", fov.len())));
    }
    let mut centres = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let xy = parse_floats(line).map_err(|e| bad(format!("line {}: {e}", n + 2)))?;
        if xy.len() != 2 {
            return Err(bad(format!("line {}: expected x,y", n + 2)));
        }
        centres.push((xy[0], xy[1]));
    }
    FiberLayout::new(centres, (fov[0], fov[1]), fov[2])
}

/// One signal per line, in layout order.
pub fn write_signals_csv(path: &Path, signals: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in signals {
        writeln!(w, "{s}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signals_csv(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(line.parse::<f64>().map_err(|e| Error::Parse {
            what: "signal csv",
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layout.csv");
        let l = FiberLayout::new(
            vec![(0.1 + 0.2, 3.0), (1.0 / 3.0, 2.5e-3), (4.75, 1.0)],
            (2.5, 2.5),
            3.9,
        )
        .unwrap();
        write_layout_csv(&p, &l).unwrap();
        assert_eq!(read_layout_csv(&p).unwrap(), l);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# fov_cx,fov_cy,fov_r=2.5,2.5,3.9\n"));
    }

    #[test]
    fn layout_csv_rejects_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("layout.csv");
        std::fs::write(&p, "1,2\n3,4\n").unwrap();
        assert!(matches!(read_layout_csv(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn sixteen_bit_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = CartesianImage::from_fn(7, 5, |u, v| (u * 5 + v) as f64 / 34.0);
        write_gray_png(&p, &img, BitDepth::Sixteen).unwrap();
        let back = read_gray_png(&p).unwrap();
        assert!(back.same_shape(&img));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn eight_bit_png_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        let img = CartesianImage::from_vec(3, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        write_gray_png(&p, &img, BitDepth::Eight).unwrap();
        let back = read_gray_png(&p).unwrap();
        assert_eq!(back.get(0, 0), 0.0);
        assert_eq!(back.get(2, 0), 1.0);
        assert_eq!(back.get(1, 0), 128.0 / 255.0);
    }

    #[test]
    fn signals_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = vec![0.1, -2.0 / 3.0, 1e-300];
        write_signals_csv(&p, &s).unwrap();
        assert_eq!(read_signals_csv(&p).unwrap(), s);
    }
}
