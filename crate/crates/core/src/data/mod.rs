//! On-disk formats and dataset preparation.
//!
//! * `VNF1` view-feature files: one shape's `|V| × D` matrix.
//! * `VND1` descriptor files: ids plus 512-d descriptors.
//! * JSON manifests tying ids, class labels, file paths and splits together.
//! * A synthetic generator whose classes differ only in view order.

mod descriptors;
mod manifest;
mod synthetic;
mod view_file;

pub use descriptors::{
    decode_descriptors, encode_descriptors, read_descriptors, write_descriptors, DescriptorFile,
};
pub use manifest::{load_samples, read_manifest, split_dataset, write_manifest, Manifest, ManifestRecord, Sample, Split};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSample, SyntheticSpec};
pub use view_file::{decode_view_features, encode_view_features, read_view_features, write_view_features};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer that reports truncation against
/// the file it came from.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::format(self.path, format!("invalid UTF-8 at byte {}", self.pos - len)))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}
