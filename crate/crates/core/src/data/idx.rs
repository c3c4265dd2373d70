//! IDX image/label files (the MNIST family format).
//!
//! Layout is big-endian: a 4-byte magic (`0x00000803` images,
//! `0x00000801` labels), one `u32` per dimension, then unsigned bytes.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.offset + 4;
        let chunk = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| self.err(self.offset, format!("truncated header reading {what}")))?;
        self.offset = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.offset;
        if available < len {
            return Err(self.err(
                self.bytes.len(),
                format!("truncated payload: expected {len} bytes, found {available}"),
            ));
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an images file into an `N × (rows·cols)` tensor scaled to `[0, 1]`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader {
        path,
        bytes,
        offset: 0,
    };
    let magic = r.u32("magic")?;
    if magic != IMAGES_MAGIC {
        return Err(r.err(0, format!("bad images magic {magic:#010x}")));
    }
    let n = r.u32("item count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(r.err(4, "zero-sized dimension"));
    }
    let data = r.payload(n * rows * cols)?;
    let values = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::matrix(n, rows * cols, values)
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader {
        path,
        bytes,
        offset: 0,
    };
    let magic = r.u32("magic")?;
    if magic != LABELS_MAGIC {
        return Err(r.err(0, format!("bad labels magic {magic:#010x}")));
    }
    let n = r.u32("item count")? as usize;
    Ok(r.payload(n)?.iter().map(|&b| usize::from(b)).collect())
}

/// Loads a paired images/labels file set. The class count is the largest
/// label plus one (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let features = parse_images(ip, &read(ip)?)?;
    let labels = parse_labels(lp, &read(lp)?)?;
    if labels.len() != features.rows() {
        return Err(Error::Idx {
            path: lp.to_path_buf(),
            offset: 4,
            reason: format!(
                "count mismatch: labels file has {} items, images file has {}",
                labels.len(),
                features.rows()
            ),
        });
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, labels, classes)
}

/// Encodes images (values in `[0, 1]`, rounded to bytes) as an IDX file.
pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
