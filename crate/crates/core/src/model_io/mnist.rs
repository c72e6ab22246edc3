//! MNIST IDX ingestion.
//!
//! ```text
//! images: 0x00000803 | count | rows | cols | count*rows*cols u8
//! labels: 0x00000801 | count | count u8
//! ```
//! All header words are big-endian u32.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: bad magic number {found:#010x}, expected {expected:#010x}", path.display())]
    Magic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{}: truncated file ({})", .1.display(), .0)]
    Truncated(String, PathBuf),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} at index {index} outside [0, {num_classes})")]
    Label {
        index: usize,
        label: u8,
        num_classes: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Image samples scaled to `[0, 1]` plus integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// The first `n` samples (or all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
            split: self.split,
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an IDX3 image file into `(rows, cols, images)` with raw bytes scaled by 1/255.
pub fn parse_idx_images(
    bytes: &[u8],
    path: &Path,
) -> Result<(usize, usize, Vec<Vec<f64>>), DatasetError> {
    let truncated = |what: &str| DatasetError::Truncated(what.to_string(), path.to_path_buf());
    let magic = read_u32(bytes, 0).ok_or_else(|| truncated("missing magic"))?;
    if magic != IMAGES_MAGIC {
        return Err(DatasetError::Magic {
            path: path.to_path_buf(),
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = read_u32(bytes, 4).ok_or_else(|| truncated("missing count"))? as usize;
    let rows = read_u32(bytes, 8).ok_or_else(|| truncated("missing rows"))? as usize;
    let cols = read_u32(bytes, 12).ok_or_else(|| truncated("missing cols"))? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(truncated(&format!(
            "expected {} pixel bytes, found {}",
            count * pixels,
            body.len()
        )));
    }
    let images = body[..count * pixels]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DatasetError> {
    let truncated = |what: &str| DatasetError::Truncated(what.to_string(), path.to_path_buf());
    let magic = read_u32(bytes, 0).ok_or_else(|| truncated("missing magic"))?;
    if magic != LABELS_MAGIC {
        return Err(DatasetError::Magic {
            path: path.to_path_buf(),
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let count = read_u32(bytes, 4).ok_or_else(|| truncated("missing count"))? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(truncated(&format!(
            "expected {count} labels, found {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset, DatasetError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (rows, cols, images) = parse_idx_images(&read_file(images_path)?, images_path)?;
    let raw_labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if images.len() != raw_labels.len() {
        return Err(DatasetError::CountMismatch {
            images: images.len(),
            labels: raw_labels.len(),
        });
    }
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(index, &label)| {
            if label < 10 {
                Ok(usize::from(label))
            } else {
                Err(DatasetError::Label {
                    index,
                    label,
                    num_classes: 10,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        images,
        labels,
        rows,
        cols,
        split,
    })
}

/// Encodes images (raw bytes) and labels as IDX files. Used to build fixtures.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
    labels: &[u8],
) -> std::io::Result<()> {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for image in images {
        assert_eq!(image.len(), rows * cols, "image size mismatch");
        img.extend_from_slice(image);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)
}
