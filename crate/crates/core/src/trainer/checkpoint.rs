//! `VNC1` checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "VNC1" | version | config length | config JSON (UTF-8)
//! then, until end of file, one record per tensor:
//! name length | name | rank | extents... | f64 payload
//! ```
//!
//! The JSON holds the model and training configs, the completed epoch count,
//! the generator state and the loss history. Tensors are the model
//! parameters in layout order followed by `velocity.<name>` for each.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{put_str, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::rng::Generator;
use crate::vnn::{Model, ModelConfig, ModelParameters};

use super::TrainConfig;

const MAGIC: &[u8; 4] = b"VNC1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    /// Momentum buffers, one per parameter tensor.
    pub velocities: Vec<Tensor>,
    pub epoch: usize,
    pub rng: Generator,
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    rng: Generator,
    loss_history: Vec<f64>,
}

pub fn encode_checkpoint(cp: &Checkpoint) -> Vec<u8> {
    let header = Header {
        model: cp.model.config.clone(),
        train: cp.train.clone(),
        epoch: cp.epoch,
        rng: cp.rng.clone(),
        loss_history: cp.loss_history.clone(),
    };
    let json = serde_json::to_string(&header).expect("checkpoint header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &json);
    let names = cp.model.params.names();
    let params = names.iter().map(String::as_str).zip(cp.model.params.tensors());
    let velocities = names.iter().zip(&cp.velocities);
    for (name, t) in params {
        put_tensor(&mut out, name, t);
    }
    for (name, t) in velocities {
        put_tensor(&mut out, &format!("velocity.{name}"), t);
    }
    out
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    put_u32(out, t.shape().len() as u32);
    for &e in t.shape() {
        put_u32(out, e as u32);
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f64).to_le_bytes());
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    decode(bytes, path).map_err(|e| match e {
        Error::Truncated { path, expected, found } => Error::format(
            path,
            format!("truncated checkpoint: needed {expected} bytes, found {found}"),
        ),
        other => other,
    })
}

fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a VNC1 checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let json = r.string()?;
    let header: Header = serde_json::from_str(&json)
        .map_err(|e| Error::format(path, format!("bad checkpoint config: {e}")))?;
    header.model.validate()?;

    let mut named = Vec::new();
    while r.remaining() > 0 {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len = shape.iter().product::<usize>();
        if len.checked_mul(8).is_none_or(|n| n > r.remaining()) {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: r.position().saturating_add(len.saturating_mul(8)),
                found: bytes.len(),
            });
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()? as Real);
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, format!("tensor {name}: {e}")))?;
        named.push((name, t));
    }

    let layout = ModelParameters::layout(&header.model);
    let mut params = Vec::new();
    let mut velocities = Vec::new();
    for (name, t) in named {
        match name.strip_prefix("velocity.") {
            Some(base) => velocities.push((base.to_string(), t)),
            None => params.push((name, t)),
        }
    }
    let params = ModelParameters::from_named(&header.model, params)?;
    let velocities = ModelParameters::from_named(&header.model, velocities)?;
    debug_assert_eq!(layout.len(), params.tensors().len());
    Ok(Checkpoint {
        model: Model::new(header.model, params)?,
        train: header.train,
        velocities: velocities.tensors().to_vec(),
        epoch: header.epoch,
        rng: header.rng,
        loss_history: header.loss_history,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, cp: &Checkpoint) -> Result<()> {
    crate::data::write_file(path.as_ref(), &encode_checkpoint(cp))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&crate::data::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::trainer::Trainer;
    use crate::vnn::ViewEmbeddingMatrix;

    fn trainer() -> Trainer {
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 3,
            seed: 9,
            branch_sizes: vec![1, 2],
            d_prime: 3,
            ..TrainConfig::default()
        };
        Trainer::new(cfg, 4, 2).unwrap()
    }

    fn data() -> Vec<Sample> {
        (0..7)
            .map(|i| Sample {
                id: format!("s{i}"),
                label: i % 2,
                views: ViewEmbeddingMatrix::new(
                    3,
                    4,
                    (0..12).map(|k| ((i * 12 + k) as Real * 0.37).sin()).collect(),
                )
                .unwrap(),
            })
            .collect()
    }

    #[test]
    fn round_trip_is_exact_and_canonical() {
        let mut t = trainer();
        t.run_epoch(&data()).unwrap();
        let cp = t.checkpoint();
        let bytes = encode_checkpoint(&cp);
        let back = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, cp);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn resume_matches_straight_run() {
        let mut straight = trainer();
        straight.run(&data(), |_, _| {}).unwrap();

        let mut first = trainer();
        first.run_epoch(&data()).unwrap();
        first.run_epoch(&data()).unwrap();
        let bytes = encode_checkpoint(&first.checkpoint());
        let cp = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        let mut resumed = Trainer::from_checkpoint(cp).unwrap();
        resumed.run(&data(), |_, _| {}).unwrap();

        assert_eq!(resumed.loss_history, straight.loss_history);
        assert_eq!(resumed.model, straight.model);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&trainer().checkpoint());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_checkpoint(&wrong, Path::new("x")), Err(Error::Format { .. })));
        bytes[4] = 2;
        assert!(matches!(decode_checkpoint(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_checkpoint(&trainer().checkpoint());
        for cut in [3, 10, 40, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut], Path::new("x")),
                Err(Error::Format { .. })
            ));
        }
    }

    #[test]
    fn missing_tensor_rejected() {
        let t = trainer();
        let mut cp = t.checkpoint();
        cp.velocities.pop();
        let bytes = encode_checkpoint(&cp);
        assert!(decode_checkpoint(&bytes, Path::new("x")).is_err());
    }
}
