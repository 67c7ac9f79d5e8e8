//! Portable graymap/pixmap I/O for [`ImageGrid`].

use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

const MAX16: f64 = 65535.0;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads an 8- or 16-bit PGM/PPM into a grid with values in [0, 1].
pub fn read(path: &Path) -> Result<ImageGrid> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, samples): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / MAX16).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / MAX16).collect()),
        other => return Err(image_err(path, format!("unsupported pixel type {:?}", other.color()))),
    };
    // interleaved -> planar
    let mut planar = vec![0.0; samples.len()];
    let n = w * h;
    for (i, px) in samples.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * n + i] = v;
        }
    }
    ImageGrid::from_planar(h, w, channels, planar)
}

/// Quantizes a unit-range value to the 16-bit lattice.
#[inline]
pub fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * MAX16).round() as u16
}

/// Snaps a value onto the 16-bit lattice so that it survives a write/read
/// cycle unchanged.
#[inline]
pub fn quantize16(v: f64) -> f64 {
    to_u16(v) as f64 / MAX16
}

/// Binary P5 (1 channel) or P6 (3 channels) with big-endian samples.
fn encode(path: &Path, width: usize, height: usize, channels: usize, maxval: u16, samples: &[u8]) -> Result<()> {
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut bytes = format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes();
    bytes.extend_from_slice(samples);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a 1-channel grid as 16-bit PGM or a 3-channel grid as 16-bit PPM.
pub fn write(path: &Path, grid: &ImageGrid) -> Result<()> {
    let (h, w, c) = grid.shape();
    if c != 1 && c != 3 {
        return Err(image_err(path, format!("cannot store {c} channels as PNM")));
    }
    let n = h * w;
    let mut samples = Vec::with_capacity(2 * n * c);
    for i in 0..n {
        for ch in 0..c {
            samples.extend_from_slice(&to_u16(grid.values()[ch * n + i]).to_be_bytes());
        }
    }
    encode(path, w, h, c, u16::MAX, &samples)
}

/// Writes an 8-bit RGB pixmap from interleaved bytes.
pub fn write_rgb8(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(image_err(path, "pixel buffer has the wrong length"));
    }
    encode(path, width, height, 3, 255, &rgb)
}
