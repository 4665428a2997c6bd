//! PNG and raw-float image files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use delight_core::{MaskImage, RasterImage, ValueRange};

use crate::error::{CliError, Result};

/// Bit depth of written PNGs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Depth {
    Eight,
    Sixteen,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::from_io(path, e))
}

/// Decodes a PNG to interleaved samples in `[0, 1]` with its channel count
/// (palette images are expanded, alpha is dropped).
fn decode(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bad = |m: String| CliError::bad_input(format!("{}: {m}", path.display()));
    let mut dec = png::Decoder::new(BufReader::new(open(path)?));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let (src_c, alpha) = match info.color_type {
        png::ColorType::Grayscale => (1, false),
        png::ColorType::GrayscaleAlpha => (2, true),
        png::ColorType::Rgb => (3, false),
        png::ColorType::Rgba => (4, true),
        png::ColorType::Indexed => return Err(bad("unexpanded palette image".into())),
    };
    let samples: Vec<f32> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|v| *v as f32 / 255.0).collect(),
        d => return Err(bad(format!("unsupported bit depth {d:?}"))),
    };
    let c = if alpha { src_c - 1 } else { src_c };
    let data = if alpha {
        samples.chunks_exact(src_c).flat_map(|px| px[..c].to_vec()).collect()
    } else {
        samples
    };
    Ok((h, w, c, data))
}

/// Reads an RGB image (grayscale input is replicated to three channels).
pub fn read_rgb(path: &Path) -> Result<RasterImage> {
    let (h, w, c, data) = decode(path)?;
    let data = if c == 1 { data.iter().flat_map(|v| [*v; 3]).collect() } else { data };
    RasterImage::new(h, w, 3, ValueRange::Unit, data).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))
}

/// Reads a mask; RGB input is reduced to its first channel.
pub fn read_mask(path: &Path) -> Result<MaskImage> {
    let (h, w, c, data) = decode(path)?;
    let plane = data.chunks_exact(c).map(|px| px[0]).collect();
    MaskImage::new(h, w, plane).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))
}

fn encode(path: &Path, h: usize, w: usize, c: usize, data: &[f32], depth: Depth) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::from_io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::from_io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    let bytes: Vec<u8> = match depth {
        Depth::Eight => {
            enc.set_depth(png::BitDepth::Eight);
            data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
        }
        Depth::Sixteen => {
            enc.set_depth(png::BitDepth::Sixteen);
            data.iter()
                .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
                .collect()
        }
    };
    let mut writer = enc.write_header().map_err(|e| CliError::other(e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| CliError::other(e.to_string()))?;
    writer.finish().map_err(|e| CliError::other(e.to_string()))?;
    Ok(())
}

/// Writes a unit-range image (signed images are mapped to `[0, 1]` first).
pub fn write_png(path: &Path, img: &RasterImage, depth: Depth) -> Result<()> {
    let img = match img.range() {
        ValueRange::Signed | ValueRange::Offset => img.to_unit(),
        _ => img.clone(),
    };
    encode(path, img.height(), img.width(), img.channels(), img.data(), depth)
}

pub fn write_mask_png(path: &Path, mask: &MaskImage, depth: Depth) -> Result<()> {
    encode(path, mask.height(), mask.width(), 1, mask.data(), depth)
}

/// Raw float image: `u32` LE height, width, channels, then `f32` LE samples
/// in row-major interleaved order.
pub fn write_rawf(path: &Path, img: &RasterImage) -> Result<()> {
    let mut out = Vec::with_capacity(12 + img.data().len() * 4);
    for d in [img.height(), img.width(), img.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = File::create(path).map_err(|e| CliError::from_io(path, e))?;
    f.write_all(&out).map_err(|e| CliError::from_io(path, e))
}

pub fn read_rawf(path: &Path, range: ValueRange) -> Result<RasterImage> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| CliError::from_io(path, e))?;
    let bad = |m: &str| CliError::bad_input(format!("{}: {m}", path.display()));
    if bytes.len() < 12 {
        return Err(bad("truncated header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h.checked_mul(w).and_then(|v| v.checked_mul(c)).ok_or_else(|| bad("header overflows"))?;
    if bytes.len() != 12 + 4 * n {
        return Err(bad("payload size does not match the header"));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    RasterImage::new(h, w, c, range, data).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> RasterImage {
        RasterImage::from_fn(5, 7, 3, ValueRange::Unit, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 104.0).unwrap()
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = ramp();
        write_png(&p, &img, Depth::Sixteen).unwrap();
        let back = read_rgb(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
        write_png(&p, &img, Depth::Eight).unwrap();
        let back = read_rgb(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }

    #[test]
    fn mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = MaskImage::from_fn(4, 6, |y, x| if (x + y) % 2 == 0 { 1.0 } else { 0.0 }).unwrap();
        write_mask_png(&p, &m, Depth::Eight).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn rawf_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.rawf");
        let img = RasterImage::from_fn(3, 4, 3, ValueRange::Offset, |y, x, c| (y as f32 - x as f32) * 0.1 + c as f32 * 0.01).unwrap();
        write_rawf(&p, &img).unwrap();
        assert_eq!(read_rawf(&p, ValueRange::Offset).unwrap(), img);
        std::fs::write(&p, [1, 0, 0]).unwrap();
        assert!(read_rawf(&p, ValueRange::Offset).is_err());
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let e = read_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
