//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the adjoint. [`Tape::backward`] walks the nodes in reverse
//! record order, accumulating adjoints into every node that depends on a
//! gradient-tracking leaf. A tape runs backward once.

use crate::error::{Error, Result};

use super::{layer_norm_unchecked, softmax_unchecked, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong adjoints, used to prove the gradient checker can see
/// a broken backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointFault {
    /// ReLU passes the upstream gradient through unmasked.
    Relu,
    /// Layer norm drops the mean-correction terms.
    LayerNorm,
    /// Softmax returns the upstream gradient unchanged.
    Softmax,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x·Wᵀ + b`, `x` either `[m]` or `[r, m]`, `W` is `[k, m]`.
    Affine { x: Var, w: Var, b: Var },
    /// Stack sliding windows of `n` consecutive rows into `[g, n·d]`.
    Windows { x: Var, n: usize },
    Relu(Var),
    /// Columnwise max; `argmax[c]` is the first row attaining it.
    ColMax { x: Var, argmax: Vec<usize> },
    /// `[r, c] · [c] -> [r]`
    MatVec { a: Var, v: Var },
    /// `[r]ᵀ · [r, c] -> [c]`
    VecMat { v: Var, a: Var },
    Scale { x: Var, c: Real },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Real },
    Concat(Vec<Var>),
    CrossEntropy { logits: Var, label: usize, probs: Vec<Real> },
    Mean(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<Real>,
    op: Op,
    tracked: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    fault: Option<AdjointFault>,
}

/// Adjoints produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<Real>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Tracked leaves that the
    /// loss does not reach get an all-zero gradient; untracked values `None`.
    pub fn get(&self, var: Var) -> Option<&[Real]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose adjoint for one operation is wrong on purpose.
    #[doc(hidden)]
    pub fn with_fault(fault: AdjointFault) -> Self {
        Tape {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &[Real] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    /// Copy the value of `var` out as a tensor.
    pub fn tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<Real>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Record a tensor; it is tracked when it requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Record an untracked constant.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<Real>) -> Result<Var> {
        let t = Tensor::new(shape, value)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    /// Record a tracked parameter.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Fully connected layer. `x` is a vector `[m]` or a batch of rows `[r, m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let (rows, m) = match xs.as_slice() {
            [m] => (1, *m),
            [r, m] => (*r, *m),
            _ => return Err(Error::dim("linear", &xs, &ws)),
        };
        if ws.len() != 2 || ws[1] != m {
            return Err(Error::dim("linear", &xs, &ws));
        }
        let k = ws[0];
        if bs != [k] {
            return Err(Error::dim("linear", &ws, &bs));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = Vec::with_capacity(rows * k);
        for r in 0..rows {
            let xr = &xv[r * m..(r + 1) * m];
            for j in 0..k {
                let wr = &wv[j * m..(j + 1) * m];
                out.push(dot(xr, wr) + bv[j]);
            }
        }
        let shape = if xs.len() == 1 { vec![k] } else { vec![rows, k] };
        let tracked = self.tracked(&[x, w, b]);
        Ok(self.push(shape, out, Op::Affine { x, w, b }, tracked))
    }

    /// Rows `j..j+n` of a `[v, d]` matrix flattened into row `j` of the
    /// result. Non-circular gives `v - n + 1` rows; circular gives `v` rows
    /// with wraparound indexing.
    pub fn windows(&mut self, x: Var, n: usize, circular: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [v, d] = xs[..] else {
            return Err(Error::domain("windows", format!("expected a matrix, got {xs:?}")));
        };
        if n == 0 {
            return Err(Error::Config("n-gram size must be at least 1".into()));
        }
        let grams = if circular {
            v
        } else {
            if v < n {
                return Err(Error::Config(format!(
                    "{v} views cannot hold an n-gram of size {n}"
                )));
            }
            v - n + 1
        };
        let xv = self.value(x);
        let mut out = Vec::with_capacity(grams * n * d);
        for j in 0..grams {
            for t in 0..n {
                let row = (j + t) % v;
                out.extend_from_slice(&xv[row * d..(row + 1) * d]);
            }
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(vec![grams, n * d], out, Op::Windows { x, n }, tracked))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push(shape, out, Op::Relu(x), tracked)
    }

    /// Columnwise maximum of a `[r, c]` matrix. The adjoint goes to the
    /// first row holding the maximum.
    pub fn col_max(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let [r, c] = xs[..] else {
            return Err(Error::domain("col_max", format!("expected a matrix, got {xs:?}")));
        };
        let xv = self.value(x);
        let mut argmax = vec![0usize; c];
        let mut out = xv[..c].to_vec();
        for i in 1..r {
            for k in 0..c {
                let val = xv[i * c + k];
                // NaN wins so it reaches the loss instead of vanishing
                if val > out[k] || (val.is_nan() && !out[k].is_nan()) {
                    out[k] = val;
                    argmax[k] = i;
                }
            }
        }
        let tracked = self.tracked(&[x]);
        Ok(self.push(vec![c], out, Op::ColMax { x, argmax }, tracked))
    }

    pub fn matvec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (as_, vs) = (self.shape(a).to_vec(), self.shape(v).to_vec());
        let (&[r, c], &[len]) = (as_.as_slice(), vs.as_slice()) else {
            return Err(Error::dim("matvec", &as_, &vs));
        };
        if c != len {
            return Err(Error::dim("matvec", &as_, &vs));
        }
        let (av, vv) = (self.value(a), self.value(v));
        let out = (0..r).map(|i| dot(&av[i * c..(i + 1) * c], vv)).collect();
        let tracked = self.tracked(&[a, v]);
        Ok(self.push(vec![r], out, Op::MatVec { a, v }, tracked))
    }

    pub fn vecmat(&mut self, v: Var, a: Var) -> Result<Var> {
        let (vs, as_) = (self.shape(v).to_vec(), self.shape(a).to_vec());
        let (&[len], &[r, c]) = (vs.as_slice(), as_.as_slice()) else {
            return Err(Error::dim("vecmat", &vs, &as_));
        };
        if len != r {
            return Err(Error::dim("vecmat", &vs, &as_));
        }
        let (vv, av) = (self.value(v), self.value(a));
        let mut out = vec![0.0; c];
        for i in 0..r {
            let w = vv[i];
            for (o, &x) in out.iter_mut().zip(&av[i * c..(i + 1) * c]) {
                *o += w * x;
            }
        }
        let tracked = self.tracked(&[v, a]);
        Ok(self.push(vec![c], out, Op::VecMat { v, a }, tracked))
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push(shape, out, Op::Scale { x, c }, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(shape, out, Op::Add(a, b), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(shape, out, Op::Mul(a, b), tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let tracked = self.tracked(&[x]);
        self.push(vec![1], vec![total], Op::Sum(x), tracked)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 1 {
            return Err(Error::domain("softmax", format!("expected a vector, got {xs:?}")));
        }
        let out = softmax_unchecked(self.value(x));
        let shape = xs.to_vec();
        let tracked = self.tracked(&[x]);
        Ok(self.push(shape, out, Op::Softmax(x), tracked))
    }

    pub fn layer_norm(&mut self, x: Var, eps: Real) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 1 || xs[0] < 2 {
            return Err(Error::domain(
                "layer_norm",
                format!("need a vector of at least 2 elements, got {xs:?}"),
            ));
        }
        let (out, inv_std) = layer_norm_unchecked(self.value(x), eps);
        let tracked = self.tracked(&[x]);
        Ok(self.push(xs, out, Op::LayerNorm { x, inv_std }, tracked))
    }

    /// Concatenate vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::domain("concat", "nothing to concatenate"));
        }
        let mut out = Vec::new();
        for &p in parts {
            let ps = self.shape(p);
            if ps.len() != 1 {
                return Err(Error::domain("concat", format!("expected vectors, got {ps:?}")));
            }
            out.extend_from_slice(self.value(p));
        }
        let tracked = self.tracked(parts);
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), tracked))
    }

    /// `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 1 {
            return Err(Error::domain("cross_entropy", format!("expected a vector, got {ls:?}")));
        }
        let loss = super::cross_entropy(self.value(logits), label)?;
        let probs = softmax_unchecked(self.value(logits));
        let tracked = self.tracked(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            tracked,
        ))
    }

    /// Mean of scalar values.
    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var> {
        if scalars.is_empty() {
            return Err(Error::domain("mean", "no values"));
        }
        let mut total = 0.0;
        for &s in scalars {
            if self.shape(s) != [1] {
                return Err(Error::dim("mean", &[1], self.shape(s)));
            }
            total += self.value(s)[0];
        }
        let tracked = self.tracked(scalars);
        let m = total / scalars.len() as Real;
        Ok(self.push(vec![1], vec![m], Op::Mean(scalars.to_vec()), tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Propagate adjoints from a scalar `loss` back to every tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State("tape already consumed by a backward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Index {
                op: "backward",
                index: loss.0,
                size: self.nodes.len(),
            });
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::domain(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(upstream);
                continue;
            }
            self.propagate(idx, &upstream, &mut grads);
        }

        // Tracked leaves always get a gradient; everything else is dropped.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            let is_param = matches!(node.op, Op::Leaf) && node.tracked;
            if !is_param {
                *g = None;
            } else if g.is_none() {
                *g = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, dy: &[Real], grads: &mut [Option<Vec<Real>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let ws = self.shape(*w);
                let (k, m) = (ws[0], ws[1]);
                let rows = dy.len() / k;
                if self.is_tracked(*x) {
                    let wv = self.value(*w);
                    let mut dx = vec![0.0; rows * m];
                    for r in 0..rows {
                        for j in 0..k {
                            let g = dy[r * k + j];
                            if g == 0.0 {
                                continue;
                            }
                            axpy(&mut dx[r * m..(r + 1) * m], g, &wv[j * m..(j + 1) * m]);
                        }
                    }
                    accumulate(grads, *x, &dx);
                }
                if self.is_tracked(*w) {
                    let xv = self.value(*x);
                    let mut dw = vec![0.0; k * m];
                    for r in 0..rows {
                        let xr = &xv[r * m..(r + 1) * m];
                        for j in 0..k {
                            let g = dy[r * k + j];
                            if g == 0.0 {
                                continue;
                            }
                            axpy(&mut dw[j * m..(j + 1) * m], g, xr);
                        }
                    }
                    accumulate(grads, *w, &dw);
                }
                if self.is_tracked(*b) {
                    let mut db = vec![0.0; k];
                    for r in 0..rows {
                        for j in 0..k {
                            db[j] += dy[r * k + j];
                        }
                    }
                    accumulate(grads, *b, &db);
                }
            }
            Op::Windows { x, n } => {
                if self.is_tracked(*x) {
                    let xs = self.shape(*x);
                    let (v, d) = (xs[0], xs[1]);
                    let grams = node.shape[0];
                    let mut dx = vec![0.0; v * d];
                    for j in 0..grams {
                        for t in 0..*n {
                            let row = (j + t) % v;
                            let src = &dy[(j * n + t) * d..(j * n + t + 1) * d];
                            axpy(&mut dx[row * d..(row + 1) * d], 1.0, src);
                        }
                    }
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Relu(x) => {
                if self.is_tracked(*x) {
                    let xv = self.value(*x);
                    let dx: Vec<Real> = if self.fault == Some(AdjointFault::Relu) {
                        dy.to_vec()
                    } else {
                        zip_map(dy, xv, |g, v| if v > 0.0 { g } else { 0.0 })
                    };
                    accumulate(grads, *x, &dx);
                }
            }
            Op::ColMax { x, argmax } => {
                if self.is_tracked(*x) {
                    let c = argmax.len();
                    let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                    for (k, &row) in argmax.iter().enumerate() {
                        dx[row * c + k] += dy[k];
                    }
                    accumulate(grads, *x, &dx);
                }
            }
            Op::MatVec { a, v } => {
                let c = self.shape(*v)[0];
                if self.is_tracked(*a) {
                    let vv = self.value(*v);
                    let mut da = vec![0.0; dy.len() * c];
                    for (i, &g) in dy.iter().enumerate() {
                        axpy(&mut da[i * c..(i + 1) * c], g, vv);
                    }
                    accumulate(grads, *a, &da);
                }
                if self.is_tracked(*v) {
                    let av = self.value(*a);
                    let mut dv = vec![0.0; c];
                    for (i, &g) in dy.iter().enumerate() {
                        axpy(&mut dv, g, &av[i * c..(i + 1) * c]);
                    }
                    accumulate(grads, *v, &dv);
                }
            }
            Op::VecMat { v, a } => {
                let c = dy.len();
                let r = self.shape(*v)[0];
                if self.is_tracked(*v) {
                    let av = self.value(*a);
                    let dv: Vec<Real> = (0..r).map(|i| dot(&av[i * c..(i + 1) * c], dy)).collect();
                    accumulate(grads, *v, &dv);
                }
                if self.is_tracked(*a) {
                    let vv = self.value(*v);
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        axpy(&mut da[i * c..(i + 1) * c], vv[i], dy);
                    }
                    accumulate(grads, *a, &da);
                }
            }
            Op::Scale { x, c } => {
                if self.is_tracked(*x) {
                    let dx: Vec<Real> = dy.iter().map(|g| g * c).collect();
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.is_tracked(*v) {
                        accumulate(grads, *v, dy);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.is_tracked(*a) {
                    accumulate(grads, *a, &zip_map(dy, self.value(*b), |g, y| g * y));
                }
                if self.is_tracked(*b) {
                    accumulate(grads, *b, &zip_map(dy, self.value(*a), |g, x| g * x));
                }
            }
            Op::Sum(x) => {
                if self.is_tracked(*x) {
                    let dx = vec![dy[0]; self.nodes[x.0].value.len()];
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Softmax(x) => {
                if self.is_tracked(*x) {
                    let y = &node.value;
                    let dx = if self.fault == Some(AdjointFault::Softmax) {
                        dy.to_vec()
                    } else {
                        let inner = dot(dy, y);
                        zip_map(dy, y, |g, p| p * (g - inner))
                    };
                    accumulate(grads, *x, &dx);
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.is_tracked(*x) {
                    // dx = s · (dy − mean(dy) − y · mean(dy ⊙ y))
                    let y = &node.value;
                    let m = y.len() as Real;
                    let (mean_dy, mean_dyy) = if self.fault == Some(AdjointFault::LayerNorm) {
                        (0.0, 0.0)
                    } else {
                        (dy.iter().sum::<Real>() / m, dot(dy, y) / m)
                    };
                    let dx = zip_map(dy, y, |g, yi| inv_std * (g - mean_dy - yi * mean_dyy));
                    accumulate(grads, *x, &dx);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if self.is_tracked(p) {
                        accumulate(grads, p, &dy[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                if self.is_tracked(*logits) {
                    let mut dx: Vec<Real> = probs.iter().map(|p| p * dy[0]).collect();
                    dx[*label] -= dy[0];
                    accumulate(grads, *logits, &dx);
                }
            }
            Op::Mean(parts) => {
                let g = dy[0] / parts.len() as Real;
                for &p in parts {
                    if self.is_tracked(p) {
                        accumulate(grads, p, &[g]);
                    }
                }
            }
        }
    }

    fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }
}

fn accumulate(grads: &mut [Option<Vec<Real>>], v: Var, delta: &[Real]) {
    match &mut grads[v.0] {
        Some(g) => axpy(g, 1.0, delta),
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [Real], a: Real, x: &[Real]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn zip_map(a: &[Real], b: &[Real], f: impl Fn(Real, Real) -> Real) -> Vec<Real> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
