use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{DcmError, Result};
use crate::rng::rng_for;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Dense feed-forward classifier producing logits.
///
/// Layer `k` maps `layer_dims[k]` inputs to `layer_dims[k + 1]` outputs with
/// weight matrix of shape `layer_dims[k+1] x layer_dims[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Gradients with the same layout as an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> Self {
        GradientSet {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) -> Result<()> {
        if !self.congruent(other) {
            return Err(DcmError::shape("gradient sets have different layouts"));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    fn congruent(&self, other: &GradientSet) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    /// All gradient values, weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Supervision for a batch: hard labels or one target distribution per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Distributions(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Distributions(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Uniform target rows, the supervision of the confidence loss.
    pub fn uniform(n: usize, classes: usize) -> Self {
        let mut m = Matrix::zeros(n, classes);
        m.as_mut_slice().fill(1.0 / classes as f64);
        Targets::Distributions(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        if inputs.rows() != targets.len() {
            return Err(DcmError::shape(format!(
                "{} input rows but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        if let Targets::Distributions(t) = &targets {
            for (i, row) in t.row_iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
                    return Err(DcmError::Numeric(format!(
                        "target row {i} is not a probability distribution"
                    )));
                }
            }
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(DcmError::shape("softmax needs at least two classes"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(DcmError::Numeric("non-finite logit".into()));
    }
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    logits.map_rows(softmax_into)
}

/// `log Σ exp(z)` with max-subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Glorot-uniform weights, zero biases, fully determined by `seed`.
pub fn init_model(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(DcmError::config(
            "a model needs at least an input and an output dimension",
        ));
    }
    if layer_dims.contains(&0) {
        return Err(DcmError::config("layer dimensions must be positive"));
    }
    let mut rng = rng_for(seed, "init");
    let mut weights = Vec::with_capacity(layer_dims.len() - 1);
    let mut biases = Vec::with_capacity(layer_dims.len() - 1);
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        weights.push(Matrix::new(fan_out, fan_in, data)?);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        activation,
    })
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardCache {
    /// Input to each layer (index 0 is the batch input).
    inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Matrix>,
    logits: Matrix,
}

impl MlpModel {
    /// Assembles a model from explicit parameters, checking every invariant.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(DcmError::config(
                "layer_dims must hold at least two positive entries",
            ));
        }
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(DcmError::shape(format!(
                "expected {layers} weight and bias arrays, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for k in 0..layers {
            let (fan_in, fan_out) = (layer_dims[k], layer_dims[k + 1]);
            if weights[k].rows() != fan_out || weights[k].cols() != fan_in {
                return Err(DcmError::shape(format!(
                    "layer {k} weight is {}x{}, expected {fan_out}x{fan_in}",
                    weights[k].rows(),
                    weights[k].cols()
                )));
            }
            if biases[k].len() != fan_out {
                return Err(DcmError::shape(format!(
                    "layer {k} bias has length {}, expected {fan_out}",
                    biases[k].len()
                )));
            }
        }
        let model = MlpModel {
            layer_dims,
            weights,
            biases,
            activation,
        };
        if !model.is_finite() {
            return Err(DcmError::Numeric("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() && !(inputs.rows() == 0 && inputs.cols() == 0) {
            return Err(DcmError::shape(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        Ok(())
    }

    fn affine(&self, k: usize, input: &Matrix) -> Matrix {
        let mut z = if input.rows() == 0 {
            Matrix::zeros(0, self.layer_dims[k + 1])
        } else {
            input
                .mul_transpose(&self.weights[k])
                .expect("layer shapes checked at construction")
        };
        let b = &self.biases[k];
        for r in 0..z.rows() {
            for (v, bias) in z.row_mut(r).iter_mut().zip(b) {
                *v += bias;
            }
        }
        z
    }

    fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        self.check_inputs(inputs)?;
        let layers = self.weights.len();
        let mut cache_inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut current = if inputs.cols() == 0 {
            Matrix::empty(self.input_dim())
        } else {
            inputs.clone()
        };
        for k in 0..layers - 1 {
            let z = self.affine(k, &current);
            let act = self.activation;
            let a = z.map_rows(|src, dst| {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = act.apply(s);
                }
            });
            cache_inputs.push(current);
            pre.push(z);
            current = a;
        }
        let logits = self.affine(layers - 1, &current);
        cache_inputs.push(current);
        Ok(ForwardCache {
            inputs: cache_inputs,
            pre,
            logits,
        })
    }

    /// Logits for every input row.
    pub fn forward_logits(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let mut current = self.affine(0, inputs);
        for k in 1..self.weights.len() {
            let act = self.activation;
            for v in current.as_mut_slice() {
                *v = act.apply(*v);
            }
            current = self.affine(k, &current);
        }
        Ok(current)
    }

    /// Softmax probabilities for every input row.
    pub fn predict_proba(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.forward_logits(inputs)?))
    }

    /// Arg-max class per row, lowest index on ties.
    pub fn predict(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward_logits(inputs)?;
        Ok(logits.row_iter().map(argmax).collect())
    }

    /// Mean cross-entropy of the softmax outputs against the batch targets,
    /// and its gradient averaged over the batch.
    ///
    /// The logit gradient of example `i` is `(softmax_i - target_i) / n`. An
    /// empty batch yields zero loss and zero gradients.
    pub fn backward(&self, batch: &Batch) -> Result<(f64, GradientSet)> {
        let classes = self.n_classes();
        match &batch.targets {
            Targets::Labels(labels) => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
                    return Err(DcmError::Index {
                        index: bad,
                        bound: classes,
                    });
                }
            }
            Targets::Distributions(t) => {
                if t.rows() > 0 && t.cols() != classes {
                    return Err(DcmError::shape(format!(
                        "target distributions have {} columns, model has {classes} classes",
                        t.cols()
                    )));
                }
            }
        }
        if batch.inputs.rows() != batch.targets.len() {
            return Err(DcmError::shape("inputs and targets differ in length"));
        }
        let n = batch.len();
        if n == 0 {
            return Ok((0.0, GradientSet::zeros_like(self)));
        }
        let cache = self.forward_cached(&batch.inputs)?;
        let probs = softmax_rows(&cache.logits);

        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut delta = probs.clone();
        for i in 0..n {
            let s = probs.row(i);
            let d = delta.row_mut(i);
            match &batch.targets {
                Targets::Labels(labels) => {
                    let y = labels[i];
                    loss -= s[y].max(PROB_FLOOR).ln();
                    d[y] -= 1.0;
                }
                Targets::Distributions(t) => {
                    let t = t.row(i);
                    for j in 0..classes {
                        if t[j] > 0.0 {
                            loss -= t[j] * s[j].max(PROB_FLOOR).ln();
                        }
                        d[j] -= t[j];
                    }
                }
            }
            for v in d.iter_mut() {
                *v *= inv_n;
            }
        }
        loss *= inv_n;

        let layers = self.weights.len();
        let mut grads = GradientSet::zeros_like(self);
        for k in (0..layers).rev() {
            let input = &cache.inputs[k];
            grads.weights[k] = delta.transpose_mul(input)?;
            let gb = &mut grads.biases[k];
            for r in delta.row_iter() {
                for (g, v) in gb.iter_mut().zip(r) {
                    *g += v;
                }
            }
            if k > 0 {
                let mut upstream = delta.mul(&self.weights[k])?;
                let z = &cache.pre[k - 1];
                let act = self.activation;
                for ((u, &zv), &av) in upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(z.as_slice())
                    .zip(input.as_slice())
                {
                    *u *= act.derivative(zv, av);
                }
                delta = upstream;
            }
        }
        Ok((loss, grads))
    }

    /// In-place SGD update `p <- p - lr * g`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if !GradientSet::zeros_like(self).congruent(grads) {
            return Err(DcmError::shape("gradient layout does not match model"));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (p, d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p -= lr * d;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (p, d) in b.iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
        Ok(())
    }

    /// Functional form of [`MlpModel::sgd_step`].
    pub fn stepped(&self, grads: &GradientSet, lr: f64) -> Result<MlpModel> {
        let mut next = self.clone();
        next.sgd_step(grads, lr)?;
        Ok(next)
    }

    /// Visits every parameter mutably in flatten order (weights then bias, per layer).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for p in w.as_mut_slice().iter_mut().chain(b.iter_mut()) {
                f(idx, p);
                idx += 1;
            }
        }
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}
