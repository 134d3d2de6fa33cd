//! IDX files: a big-endian 32-bit magic, one big-endian 32-bit size per
//! dimension, then unsigned bytes in row-major order.
//!
//! Images use magic `0x00000803` with dims `(count, rows, cols)`; labels use
//! `0x00000801` with dim `(count)`.

use std::fs;
use std::path::Path;

use super::Split;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Real;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: (offset + 4) as u64,
            found: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        expected: (header + len) as u64,
        found: bytes.len() as u64,
    })
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols, path)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, count, path)?.to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads an image/label file pair, keeping the first `limit` records.
///
/// Pixels are scaled by `1/255` into `[0, 1]`.
pub fn load_idx<T: Real>(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Split<T>> {
    let img = parse_idx_images(&read_file(images)?, images)?;
    let lab = parse_idx_labels(&read_file(labels)?, labels)?;
    if img.count != lab.len() {
        return Err(Error::CountMismatch {
            images: img.count,
            labels: lab.len(),
        });
    }
    let n = limit.map_or(img.count, |l| l.min(img.count));
    let d = img.rows * img.cols;
    let scale = T::of(255.0);
    let data = img.pixels[..n * d].iter().map(|&p| T::of(p as f64) / scale).collect();
    Split::new(
        Tensor::matrix(n, d, data)?,
        lab[..n].iter().map(|&l| l as usize).collect(),
    )
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(Error::invalid(
            "idx images",
            "pixel count is not a multiple of rows*cols",
        ));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, (pixels.len() / per) as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_file(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn parses_hand_crafted_image() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend_from_slice(&[0, 255, 0, 255]);
        let img = parse_idx_images(&bytes, p()).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (1, 2, 2));
        assert_eq!(img.pixels, vec![0, 255, 0, 255]);
    }

    #[test]
    fn distinct_diagnostics() {
        let bad = [0, 0, 8, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        assert!(matches!(
            parse_idx_images(&bad, p()),
            Err(Error::BadMagic { found: 0x801, .. })
        ));
        let short = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3];
        assert!(matches!(
            parse_idx_images(&short, p()),
            Err(Error::Truncated {
                expected: 24,
                found: 19,
                ..
            })
        ));
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8], p()),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 1], p()),
            Err(Error::Truncated { .. })
        ));
    }
}
