//! IDX files as distributed for MNIST and Fashion-MNIST.
//!
//! A big-endian `u32` magic (`0x0000_0801` for labels, `0x0000_0803` for
//! images), one big-endian `u32` per dimension, then the raw `u8` payload.
//! Gzipped files are detected by their header and inflated transparently.

use std::io::Read;
use std::path::{Path, PathBuf};

use fedaccess_core::data::Dataset;
use flate2::read::GzDecoder;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: bad magic number {found:#010x}, expected {expected:#010x}", path.display())]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{}: truncated, need {expected} bytes but found {actual}", path.display())]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io { path: path.to_path_buf(), source };
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        if bytes.len() >= 4 {
            check_magic(bytes, path, magic)?;
        }
        return Err(IdxError::Truncated { path: path.to_path_buf(), expected: need, actual: bytes.len() });
    }
    check_magic(bytes, path, magic)?;
    Ok((0..dims).map(|i| be_u32(&bytes[4 + 4 * i..]) as usize).collect())
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<(), IdxError> {
    let found = be_u32(bytes);
    if found != expected {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), expected, found });
    }
    Ok(())
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8], IdxError> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(IdxError::Truncated { path: path.to_path_buf(), expected, actual: bytes.len() });
    }
    Ok(&bytes[offset..expected])
}

/// Returns `(count, rows * cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>), IdxError> {
    let dims = header(bytes, path, IMAGES_MAGIC, 3)?;
    let (count, pixels) = (dims[0], dims[1] * dims[2]);
    Ok((count, pixels, payload(bytes, 16, count * pixels, path)?.to_vec()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, IdxError> {
    let dims = header(bytes, path, LABELS_MAGIC, 1)?;
    Ok(payload(bytes, 8, dims[0], path)?.to_vec())
}

/// Loads an image/label file pair. Pixels are scaled by 1/255; the class
/// count is one past the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let (count, dim, pixels) = parse_images(&read_file(images_path)?, images_path)?;
    let labels = parse_labels(&read_file(labels_path)?, labels_path)?;
    if count != labels.len() {
        return Err(IdxError::CountMismatch { images: count, labels: labels.len() });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let images = pixels.into_iter().map(|p| f64::from(p) / 255.0).collect();
    Dataset::new(images, dim, labels, num_classes)
        .map_err(|e| IdxError::Invalid { path: images_path.to_path_buf(), message: e.to_string() })
}

/// File names of the standard distribution, with or without `.gz`.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Finds `name` or `name.gz` inside `dir`.
pub fn locate(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join(name), dir.join(format!("{name}.gz"))].into_iter().find(|p| p.is_file())
}

/// Paths of the four distribution files, or the first missing one.
pub fn locate_split(dir: &Path) -> Result<[PathBuf; 4], PathBuf> {
    let find = |name: &str| locate(dir, name).ok_or_else(|| dir.join(name));
    Ok([find(TRAIN_IMAGES)?, find(TRAIN_LABELS)?, find(TEST_IMAGES)?, find(TEST_LABELS)?])
}

/// Train and test sets from a directory laid out like the official download.
pub fn load_split(dir: &Path) -> Result<(Dataset, Dataset), IdxError> {
    let [ti, tl, vi, vl] = locate_split(dir).map_err(|path| IdxError::Io {
        path,
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
    })?;
    Ok((load_idx(&ti, &tl)?, load_idx(&vi, &vl)?))
}

/// Serializes images and labels in IDX form (used for fixtures).
pub fn encode_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    for word in [IMAGES_MAGIC, images.len() as u32, rows, cols] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    images.iter().for_each(|img| out.extend_from_slice(img));
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
