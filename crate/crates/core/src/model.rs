//! One-hidden-layer encoder with unit-normalized output, linear classifier,
//! hand-written backpropagation and an Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::domain::{dot, Matrix, RandomSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embedding: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embedding: 32,
        }
    }
}

/// Read/write access to the flat parameter tensors, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// `z = normalize(w2 · relu(w1 · x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// hidden x input
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// embedding x hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// classes x embedding
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }
}

impl Parameters for ClassifierParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut RandomSource) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-limit, limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches")
}

impl EncoderParams {
    pub fn init(input: usize, hidden: usize, embedding: usize, rng: &mut RandomSource) -> Self {
        Self {
            w1: glorot(hidden, input, rng),
            b1: vec![0.0; hidden],
            w2: glorot(embedding, hidden, rng),
            b2: vec![0.0; embedding],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.w2.rows()
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, _) = self.w1.shape();
        let (e, h2) = self.w2.shape();
        if self.b1.len() != h || h2 != h || self.b2.len() != e {
            return Err(Error::ShapeMismatch(format!(
                "encoder w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len()
            )));
        }
        Ok(())
    }
}

impl ClassifierParams {
    pub fn init(embedding: usize, classes: usize, rng: &mut RandomSource) -> Self {
        Self {
            w: glorot(classes, embedding, rng),
            b: vec![0.0; classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.rows()
    }
}

/// Encoder and classifier together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

impl Model {
    /// Glorot-uniform weights and zero biases, drawn from the `init` stream.
    pub fn init(input: usize, config: &ModelConfig, classes: usize, seed: u64) -> Self {
        let mut rng = RandomSource::new(seed, "init");
        let encoder = EncoderParams::init(input, config.hidden, config.embedding, &mut rng);
        let classifier = ClassifierParams::init(config.embedding, classes, &mut rng);
        Self {
            encoder,
            classifier,
        }
    }

    /// Class predicted for each row of `features`.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let (z, _) = encode(&self.encoder, features)?;
        let logits = classify(&self.classifier, &z)?;
        Ok(logits
            .iter_rows()
            .map(|row| {
                let mut best = 0;
                for (k, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }
}

/// Forward intermediates needed by [`encoder_backward`].
#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: Matrix,
    pre_hidden: Matrix,
    hidden: Matrix,
    embeddings: Matrix,
    norms: Vec<f64>,
}

impl EncoderCache {
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn pre_hidden(&self) -> &Matrix {
        &self.pre_hidden
    }
}

pub fn encode(params: &EncoderParams, features: &Matrix) -> Result<(Matrix, EncoderCache)> {
    params.check_shapes()?;
    if features.cols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, encoder expects {}",
            features.cols(),
            params.input_dim()
        )));
    }
    let b = features.rows();
    let h = params.hidden_dim();
    let e = params.embedding_dim();
    let mut pre_hidden = Matrix::zeros(b, h);
    let mut hidden = Matrix::zeros(b, h);
    let mut embeddings = Matrix::zeros(b, e);
    let mut norms = Vec::with_capacity(b);
    for i in 0..b {
        let x = features.row(i);
        for u in 0..h {
            let a = dot(params.w1.row(u), x) + params.b1[u];
            pre_hidden[(i, u)] = a;
            hidden[(i, u)] = a.max(0.0);
        }
        let r = hidden.row(i);
        let mut sq = 0.0;
        let out = embeddings.row_mut(i);
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(params.w2.row(k), r) + params.b2[k];
            sq += *o * *o;
        }
        let n = sq.sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        out.iter_mut().for_each(|o| *o /= n);
        norms.push(n);
    }
    let cache = EncoderCache {
        inputs: features.clone(),
        pre_hidden,
        hidden,
        embeddings: embeddings.clone(),
        norms,
    };
    Ok((embeddings, cache))
}

/// Gradients of a scalar loss with respect to encoder parameters and inputs.
#[derive(Debug, Clone)]
pub struct EncoderGradients {
    pub params: EncoderParams,
    pub inputs: Matrix,
}

/// Backpropagates `grad_embeddings` (d loss / d unit embeddings) through the
/// normalization, the output layer and the rectified hidden layer.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_embeddings: &Matrix,
) -> Result<EncoderGradients> {
    if grad_embeddings.shape() != cache.embeddings.shape() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} vs embeddings {:?}",
            grad_embeddings.shape(),
            cache.embeddings.shape()
        )));
    }
    if cache.inputs.cols() != params.input_dim() || cache.hidden.cols() != params.hidden_dim() {
        return Err(Error::ShapeMismatch("cache does not match encoder".into()));
    }
    let b = grad_embeddings.rows();
    let h = params.hidden_dim();
    let e = params.embedding_dim();
    let d = params.input_dim();
    let mut grads = params.zeros_like();
    let mut grad_inputs = Matrix::zeros(b, d);
    let mut g_raw = vec![0.0; e];
    let mut g_pre = vec![0.0; h];
    for i in 0..b {
        let z = cache.embeddings.row(i);
        let gz = grad_embeddings.row(i);
        // d normalize(v) = (I - z z^T) / |v|
        let proj = dot(z, gz);
        let inv = 1.0 / cache.norms[i];
        for (k, g) in g_raw.iter_mut().enumerate().take(e) {
            *g = (gz[k] - z[k] * proj) * inv;
        }
        let r = cache.hidden.row(i);
        for (k, &g) in g_raw.iter().enumerate().take(e) {
            grads.b2[k] += g;
            for (w, rv) in grads.w2.row_mut(k).iter_mut().zip(r) {
                *w += g * rv;
            }
        }
        let a = cache.pre_hidden.row(i);
        for (u, g) in g_pre.iter_mut().enumerate().take(h) {
            *g = if a[u] > 0.0 {
                (0..e).map(|k| params.w2[(k, u)] * g_raw[k]).sum()
            } else {
                0.0
            };
        }
        let x = cache.inputs.row(i);
        let gx = grad_inputs.row_mut(i);
        for (u, &g) in g_pre.iter().enumerate().take(h) {
            if g == 0.0 {
                continue;
            }
            grads.b1[u] += g;
            let w1_row = params.w1.row(u);
            for (j, gw) in grads.w1.row_mut(u).iter_mut().enumerate() {
                *gw += g * x[j];
                gx[j] += g * w1_row[j];
            }
        }
    }
    Ok(EncoderGradients {
        params: grads,
        inputs: grad_inputs,
    })
}

/// Logits `w · z + b` for every row.
pub fn classify(params: &ClassifierParams, embeddings: &Matrix) -> Result<Matrix> {
    if embeddings.cols() != params.w.cols() || params.b.len() != params.w.rows() {
        return Err(Error::ShapeMismatch(format!(
            "embeddings have {} columns, classifier is {:?}",
            embeddings.cols(),
            params.w.shape()
        )));
    }
    let k = params.num_classes();
    let mut out = Matrix::zeros(embeddings.rows(), k);
    for (i, z) in embeddings.iter_rows().enumerate() {
        for c in 0..k {
            out[(i, c)] = dot(params.w.row(c), z) + params.b[c];
        }
    }
    Ok(out)
}

/// Gradients of the classifier parameters and of the embeddings.
pub fn classifier_backward(
    params: &ClassifierParams,
    embeddings: &Matrix,
    grad_logits: &Matrix,
) -> Result<(ClassifierParams, Matrix)> {
    if grad_logits.rows() != embeddings.rows() || grad_logits.cols() != params.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "logit gradient {:?} for {} rows and {} classes",
            grad_logits.shape(),
            embeddings.rows(),
            params.num_classes()
        )));
    }
    let mut grads = params.zeros_like();
    let mut grad_emb = Matrix::zeros(embeddings.rows(), embeddings.cols());
    for i in 0..embeddings.rows() {
        let z = embeddings.row(i);
        for c in 0..params.num_classes() {
            let g = grad_logits[(i, c)];
            grads.b[c] += g;
            for (w, zv) in grads.w.row_mut(c).iter_mut().zip(z) {
                *w += g * zv;
            }
            for (ge, wv) in grad_emb.row_mut(i).iter_mut().zip(params.w.row(c)) {
                *ge += g * wv;
            }
        }
    }
    Ok((grads, grad_emb))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &impl Parameters) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        if gs.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Diverged);
        }
        let mut ps = params.tensors_mut();
        if ps.len() != self.first.len()
            || ps.iter().zip(&self.first).any(|(p, m)| p.len() != m.len())
            || gs.iter().zip(&self.first).any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in ps.iter_mut().enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (j, x) in p.iter_mut().enumerate() {
                let g = gs[k][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *x -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
