//! `VND1` descriptor files.
//!
//! ```text
//! "VND1" | version u32 = 1 | count u32 | dim u32
//! count × (id length u32, id UTF-8 bytes)
//! count·dim × f32, one descriptor per id in the same order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Real;

use super::{put_str, put_u32, read_file, write_file, Reader};

const MAGIC: &[u8; 4] = b"VND1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorFile {
    pub dim: usize,
    pub ids: Vec<String>,
    /// Row-major, `ids.len() × dim`.
    pub values: Vec<f32>,
}

impl DescriptorFile {
    pub fn new(dim: usize) -> Self {
        DescriptorFile {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, descriptor: &[Real]) -> Result<()> {
        if descriptor.len() != self.dim {
            return Err(Error::dim("descriptor", &[self.dim], &[descriptor.len()]));
        }
        self.ids.push(id.into());
        self.values.extend(descriptor.iter().map(|&v| v as f32));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn encode_descriptors(file: &DescriptorFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, file.ids.len() as u32);
    put_u32(&mut out, file.dim as u32);
    for id in &file.ids {
        put_str(&mut out, id);
    }
    for v in &file.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_descriptors(bytes: &[u8], path: &Path) -> Result<DescriptorFile> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected VND1"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let ids = (0..count).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let values = (0..count * dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::format(path, format!("{} trailing bytes", r.remaining())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{}: non-finite descriptor value", path.display())));
    }
    Ok(DescriptorFile { dim, ids, values })
}

pub fn write_descriptors(path: impl AsRef<Path>, file: &DescriptorFile) -> Result<()> {
    write_file(path.as_ref(), &encode_descriptors(file))
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<DescriptorFile> {
    let path = path.as_ref();
    decode_descriptors(&read_file(path)?, path)
}
