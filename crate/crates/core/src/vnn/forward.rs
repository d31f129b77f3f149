use crate::error::{Error, Result};
use crate::numerics::{Real, Tape, Tensor, Var};

use super::{
    Aggregation, BranchConfig, GramFeatureMatrix, Model, ModelConfig, ShapeDescriptor,
    ViewEmbeddingMatrix, LAYER_NORM_EPS,
};

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logits: Var,
    pub descriptor: Var,
}

/// Record the full network on `tape`. `params` holds one handle per
/// parameter tensor in layout order (see [`super::ModelParameters`]).
pub fn forward_on_tape(
    tape: &mut Tape,
    config: &ModelConfig,
    params: &[Var],
    views: &ViewEmbeddingMatrix,
) -> Result<ForwardOutput> {
    if params.len() != 2 * config.branches.len() + 4 {
        return Err(Error::dim(
            "forward",
            &[2 * config.branches.len() + 4],
            &[params.len()],
        ));
    }
    if views.dim() != config.input_dim {
        return Err(Error::dim("forward", &[views.views(), views.dim()], &[config.input_dim]));
    }
    let f = tape.constant(vec![views.views(), views.dim()], views.data().to_vec())?;
    let mut pooled = Vec::with_capacity(config.branches.len());
    for (i, branch) in config.branches.iter().enumerate() {
        let g = grams_on_tape(tape, f, branch, params[2 * i], params[2 * i + 1])?;
        pooled.push(aggregate_on_tape(tape, g, config.aggregation)?);
    }
    let fused = tape.concat(&pooled)?;
    let head = &params[2 * config.branches.len()..];
    let hidden = tape.linear(fused, head[0], head[1])?;
    let descriptor = if config.head_activation {
        tape.relu(hidden)
    } else {
        hidden
    };
    let logits = tape.linear(descriptor, head[2], head[3])?;
    Ok(ForwardOutput { logits, descriptor })
}

fn grams_on_tape(
    tape: &mut Tape,
    f: Var,
    branch: &BranchConfig,
    kernel: Var,
    bias: Var,
) -> Result<Var> {
    let views = tape.shape(f)[0];
    branch.gram_count(views)?;
    let windows = tape.windows(f, branch.n, branch.circular)?;
    let g = tape.linear(windows, kernel, bias)?;
    Ok(if branch.post_conv_activation {
        tape.relu(g)
    } else {
        g
    })
}

fn aggregate_on_tape(tape: &mut Tape, g: Var, aggregation: Aggregation) -> Result<Var> {
    match aggregation {
        Aggregation::MaxPool => tape.col_max(g),
        Aggregation::Attention => {
            let d_prime = tape.shape(g)[1];
            let pooled = tape.col_max(g)?;
            let weights = attention_weights_on_tape(tape, g, pooled)?;
            let attended = tape.vecmat(weights, g)?;
            let residual = tape.add(attended, pooled)?;
            if d_prime < 2 {
                return Err(Error::Config(format!(
                    "attention layer norm needs d_prime >= 2, got {d_prime}"
                )));
            }
            tape.layer_norm(residual, LAYER_NORM_EPS)
        }
    }
}

fn attention_weights_on_tape(tape: &mut Tape, g: Var, pooled: Var) -> Result<Var> {
    let d_prime = tape.shape(g)[1];
    let raw = tape.matvec(g, pooled)?;
    let scores = tape.scale(raw, 1.0 / (d_prime as Real).sqrt());
    tape.softmax(scores)
}

fn gram_constant(tape: &mut Tape, g: &GramFeatureMatrix, op: &'static str) -> Result<Var> {
    if g.rows() == 0 || g.cols() == 0 {
        return Err(Error::domain(op, "gram matrix has no rows"));
    }
    tape.constant(vec![g.rows(), g.cols()], g.data().to_vec())
}

/// Apply one n-gram learning unit: each window of `n` consecutive views is
/// flattened and projected by `kernel` (`D′ × n·D`) plus `bias`.
pub fn nglu_forward(
    views: &ViewEmbeddingMatrix,
    branch: &BranchConfig,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<GramFeatureMatrix> {
    let expected = [branch.d_prime, branch.n * views.dim()];
    if kernel.shape() != expected {
        return Err(Error::dim("nglu_forward", &expected, kernel.shape()));
    }
    let mut tape = Tape::new();
    let f = tape.constant(vec![views.views(), views.dim()], views.data().to_vec())?;
    let k = tape.leaf(kernel);
    let b = tape.leaf(bias);
    let g = grams_on_tape(&mut tape, f, branch, k, b)?;
    let shape = tape.shape(g).to_vec();
    GramFeatureMatrix::new(shape[0], shape[1], tape.value(g).to_vec())
}

/// Columnwise max over gram rows (`g_p`).
pub fn row_max_pool(g: &GramFeatureMatrix) -> Result<Vec<Real>> {
    let mut tape = Tape::new();
    let gv = gram_constant(&mut tape, g, "row_max_pool")?;
    let p = tape.col_max(gv)?;
    Ok(tape.value(p).to_vec())
}

/// Softmax over `G_j · g_p / √D′`.
pub fn attention_scores(g: &GramFeatureMatrix, pooled: &[Real]) -> Result<Vec<Real>> {
    if pooled.len() != g.cols() {
        return Err(Error::dim("attention_scores", &[g.rows(), g.cols()], &[pooled.len()]));
    }
    let mut tape = Tape::new();
    let gv = gram_constant(&mut tape, g, "attention_scores")?;
    let pv = tape.constant(vec![pooled.len()], pooled.to_vec())?;
    let w = attention_weights_on_tape(&mut tape, gv, pv)?;
    Ok(tape.value(w).to_vec())
}

/// `layer_norm(Σ β_j G_j + g_p, eps)`.
pub fn attention_aggregate(g: &GramFeatureMatrix, eps: Real) -> Result<Vec<Real>> {
    let mut tape = Tape::new();
    let gv = gram_constant(&mut tape, g, "attention_aggregate")?;
    let pooled = tape.col_max(gv)?;
    let weights = attention_weights_on_tape(&mut tape, gv, pooled)?;
    let attended = tape.vecmat(weights, gv)?;
    let residual = tape.add(attended, pooled)?;
    let out = tape.layer_norm(residual, eps)?;
    Ok(tape.value(out).to_vec())
}

/// One branch end to end: n-gram unit, then pooling.
pub fn branch_forward(
    views: &ViewEmbeddingMatrix,
    branch: &BranchConfig,
    kernel: &Tensor,
    bias: &Tensor,
    aggregation: Aggregation,
) -> Result<Vec<Real>> {
    let g = nglu_forward(views, branch, kernel, bias)?;
    match aggregation {
        Aggregation::Attention => attention_aggregate(&g, LAYER_NORM_EPS),
        Aggregation::MaxPool => row_max_pool(&g),
    }
}

/// Logits and descriptor for one shape.
pub fn multi_scale_forward(
    views: &ViewEmbeddingMatrix,
    model: &Model,
) -> Result<(Vec<Real>, ShapeDescriptor)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = model.params.tensors().iter().map(|t| tape.leaf(t)).collect();
    let out = forward_on_tape(&mut tape, &model.config, &vars, views)?;
    Ok((
        tape.value(out.logits).to_vec(),
        ShapeDescriptor(tape.value(out.descriptor).to_vec()),
    ))
}

/// The 512-d penultimate-layer output.
pub fn extract_descriptor(views: &ViewEmbeddingMatrix, model: &Model) -> Result<ShapeDescriptor> {
    multi_scale_forward(views, model).map(|(_, d)| d)
}

impl Model {
    pub fn forward(&self, views: &ViewEmbeddingMatrix) -> Result<(Vec<Real>, ShapeDescriptor)> {
        multi_scale_forward(views, self)
    }

    pub fn descriptor(&self, views: &ViewEmbeddingMatrix) -> Result<ShapeDescriptor> {
        extract_descriptor(views, self)
    }
}
