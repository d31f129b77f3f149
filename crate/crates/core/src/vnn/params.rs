use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};
use crate::rng::{set_seed, Generator};

use super::{ModelConfig, DESCRIPTOR_DIM};

/// All learnable tensors, in a fixed order with stable names:
/// `branch{i}.kernel`, `branch{i}.bias` for each branch, then
/// `fc1.weight`, `fc1.bias`, `fc2.weight`, `fc2.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParameters {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Canonical names and shapes for `config`.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(2 * config.branches.len() + 4);
        for (i, b) in config.branches.iter().enumerate() {
            out.push((format!("branch{i}.kernel"), vec![b.d_prime, b.n * config.input_dim]));
            out.push((format!("branch{i}.bias"), vec![b.d_prime]));
        }
        out.push(("fc1.weight".into(), vec![DESCRIPTOR_DIM, config.fused_dim()]));
        out.push(("fc1.bias".into(), vec![DESCRIPTOR_DIM]));
        out.push(("fc2.weight".into(), vec![config.num_classes, DESCRIPTOR_DIM]));
        out.push(("fc2.bias".into(), vec![config.num_classes]));
        out
    }

    /// Assemble from named tensors, checking them against the layout of
    /// `config`. Order of `named` does not matter.
    pub fn from_named(config: &ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = Self::layout(config);
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let pos = named
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Data(format!("missing parameter tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("parameter", &shape, t.shape()));
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some((extra, _)) = named.first() {
            return Err(Error::Data(format!("unexpected parameter tensor {extra}")));
        }
        Ok(ModelParameters { names, tensors })
    }
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        let layout = ModelParameters::layout(&config);
        for ((name, shape), (have_name, t)) in layout.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != have_name || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "parameter {have_name} {:?} does not match layout {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        if layout.len() != params.tensors.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.tensors.len()
            )));
        }
        Ok(Model { config, params })
    }

    /// Fresh model with weights drawn from `rng` (see [`init_parameters`]).
    pub fn init(config: ModelConfig, rng: &mut Generator) -> Result<Self> {
        let params = init_from(&config, rng)?;
        Ok(Model { config, params })
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero, drawn in layout order from
/// the generator seeded with `seed`.
pub fn init_parameters(config: &ModelConfig, seed: u64) -> Result<ModelParameters> {
    init_from(config, &mut set_seed(seed))
}

fn init_from(config: &ModelConfig, rng: &mut Generator) -> Result<ModelParameters> {
    config.validate()?;
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape) in ModelParameters::layout(config) {
        let t = if shape.len() == 2 {
            let bound = 1.0 / (shape[1] as f64).sqrt();
            let data = (0..shape[0] * shape[1])
                .map(|_| rng.uniform_in(-bound, bound) as Real)
                .collect();
            Tensor::new(shape, data)?
        } else {
            Tensor::zeros(&shape)
        };
        names.push(name);
        tensors.push(t);
    }
    Ok(ModelParameters { names, tensors })
}
