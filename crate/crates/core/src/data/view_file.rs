//! `VNF1` view-feature files.
//!
//! ```text
//! "VNF1" | version u32 = 1 | views u32 | dim u32 | views·dim × f32
//! ```
//!
//! All integers and floats little-endian, rows in rendering order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::vnn::ViewEmbeddingMatrix;

use super::{put_u32, read_file, write_file, Reader};

const MAGIC: &[u8; 4] = b"VNF1";
const VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode_view_features(m: &ViewEmbeddingMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, m.views() as u32);
    put_u32(&mut out, m.dim() as u32);
    for (i, &v) in m.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Data(format!("non-finite value {v} at element {i}")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

/// Parse a `VNF1` buffer. `path` is only used in error messages.
pub fn decode_view_features(bytes: &[u8], path: &Path) -> Result<ViewEmbeddingMatrix> {
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected VNF1"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let views = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let expected = HEADER + 4 * views * dim;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(views * dim);
    for _ in 0..views * dim {
        let offset = r.position();
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "{}: non-finite value at byte offset {offset}",
                path.display()
            )));
        }
        data.push(v as Real);
    }
    ViewEmbeddingMatrix::new(views, dim, data)
}

pub fn write_view_features(path: impl AsRef<Path>, m: &ViewEmbeddingMatrix) -> Result<()> {
    write_file(path.as_ref(), &encode_view_features(m)?)
}

pub fn read_view_features(path: impl AsRef<Path>) -> Result<ViewEmbeddingMatrix> {
    let path = path.as_ref();
    decode_view_features(&read_file(path)?, path)
}
