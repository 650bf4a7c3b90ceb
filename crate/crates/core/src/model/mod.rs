//! One-layer CNN encoder with max-over-time pooling and a softmax classifier.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::Rng;

use crate::data::PAD;
use crate::error::{DasError, Result};
use crate::numerics::{ops, Tape, Tensor, Var};

/// Documents per forward chunk when predicting without gradients.
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `V × d` word embeddings; row 0 is padding.
    pub embedding: Tensor,
    /// `h × (window·d)` convolution filters.
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    /// `C × h` classifier weights.
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub window: usize,
}

/// Architecture sizes that are not implied by the embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub window: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelParams {
    pub fn vocab_len(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden(&self) -> usize {
        self.conv_w.rows()
    }

    pub fn classes(&self) -> usize {
        self.out_w.rows()
    }

    /// Parameters in declaration order: E, W, b, F_w, F_b.
    pub fn tensors(&self) -> [&Tensor; 5] {
        [&self.embedding, &self.conv_w, &self.conv_b, &self.out_w, &self.out_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 5] {
        [
            &mut self.embedding,
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        ParamVars {
            embedding: tape.leaf_ref(&self.embedding),
            conv_w: tape.leaf_ref(&self.conv_w),
            conv_b: tape.leaf_ref(&self.conv_b),
            out_w: tape.leaf_ref(&self.out_w),
            out_b: tape.leaf_ref(&self.out_b),
        }
    }

    fn check(&self) -> Result<()> {
        let (v, d, h, c) = (self.vocab_len(), self.embedding_dim(), self.hidden(), self.classes());
        let expect = [
            (self.conv_w.shape(), vec![h, self.window * d]),
            (self.conv_b.shape(), vec![h]),
            (self.out_w.shape(), vec![c, h]),
            (self.out_b.shape(), vec![c]),
        ];
        for (got, want) in expect {
            if got != want.as_slice() {
                return Err(DasError::Shape {
                    op: "model parameters",
                    left: got.to_vec(),
                    right: want,
                });
            }
        }
        if v < 2 || self.window == 0 || c < 2 {
            return Err(DasError::invalid("model needs V ≥ 2, window ≥ 1 and C ≥ 2"));
        }
        Ok(())
    }
}

/// Tape handles for the five parameter tensors.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub embedding: Var,
    pub conv_w: Var,
    pub conv_b: Var,
    pub out_w: Var,
    pub out_b: Var,
}

impl ParamVars {
    pub fn all(&self) -> [Var; 5] {
        [self.embedding, self.conv_w, self.conv_b, self.out_w, self.out_b]
    }

    pub fn from_slice(vars: &[Var]) -> Self {
        ParamVars {
            embedding: vars[0],
            conv_w: vars[1],
            conv_b: vars[2],
            out_w: vars[3],
            out_b: vars[4],
        }
    }
}

/// Glorot-uniform filters and classifier weights, zero biases.
pub fn init_params<R: Rng + ?Sized>(shape: ModelShape, embedding: Tensor, rng: &mut R) -> Result<ModelParams> {
    let d = embedding.cols();
    let fan_in = shape.window * d;
    let conv_w = glorot(shape.hidden, fan_in, rng)?;
    let out_w = glorot(shape.classes, shape.hidden, rng)?;
    let params = ModelParams {
        embedding,
        conv_w,
        conv_b: Tensor::zeros(&[shape.hidden]),
        out_w,
        out_b: Tensor::zeros(&[shape.classes]),
        window: shape.window,
    };
    params.check()?;
    Ok(params)
}

pub fn glorot_limit(fan_out: usize, fan_in: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Tensor> {
    let s = glorot_limit(rows, cols);
    let data = (0..rows * cols).map(|_| rng.random_range(-s..=s)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Rescales every classifier row whose L2 norm exceeds `max_norm`.
pub fn apply_max_norm(params: &mut ModelParams, max_norm: f64) {
    let h = params.out_w.cols();
    for row in params.out_w.data_mut().chunks_exact_mut(h) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > max_norm {
            let k = max_norm / norm;
            row.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Number of padding slots before and after a document so that every token
/// position anchors one window.
pub fn padding(window: usize) -> (usize, usize) {
    let left = (window - 1) / 2;
    (left, window - 1 - left)
}

/// Token ids of every window, flattened: window `i` covers positions
/// `i - left ..= i + right` of the document, with padding outside it.
pub fn window_ids(doc: &[usize], window: usize) -> Vec<usize> {
    let (left, right) = padding(window);
    let mut padded = Vec::with_capacity(doc.len() + window - 1);
    padded.extend(std::iter::repeat_n(PAD, left));
    padded.extend_from_slice(doc);
    padded.extend(std::iter::repeat_n(PAD, right));
    let mut ids = Vec::with_capacity(doc.len() * window);
    for start in 0..doc.len() {
        ids.extend_from_slice(&padded[start..start + window]);
    }
    ids
}

/// Pooled (pre-dropout) features for a batch of documents, `[B × h]`.
pub fn encode_batch(tape: &mut Tape<'_>, pv: &ParamVars, docs: &[&[usize]], window: usize) -> Result<Var> {
    if docs.is_empty() {
        return Err(DasError::invalid("cannot encode an empty batch"));
    }
    let mut ids = Vec::new();
    let mut offsets = Vec::with_capacity(docs.len() + 1);
    offsets.push(0);
    for doc in docs {
        if doc.is_empty() {
            return Err(DasError::invalid("cannot encode an empty document"));
        }
        ids.extend(window_ids(doc, window));
        offsets.push(offsets.last().unwrap() + doc.len());
    }
    let x = tape.gather_rows(pv.embedding, &ids, window)?;
    let pre = tape.affine(x, pv.conv_w, pv.conv_b)?;
    let hidden = tape.relu(pre);
    tape.segment_max_over_time(hidden, &offsets)
}

/// Classifier logits `F_w·ξ + F_b`.
pub fn logits(tape: &mut Tape<'_>, pv: &ParamVars, xi: Var) -> Result<Var> {
    tape.affine(xi, pv.out_w, pv.out_b)
}

/// Everything the encoder computes for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// Max-pooled features ξ, before dropout.
    pub xi: Vec<f64>,
    /// Winning window per feature.
    pub argmax: Vec<usize>,
    /// ξ after dropout, as fed to the classifier.
    pub classifier_input: Vec<f64>,
    /// Post-ReLU activations, one row per window.
    pub hidden: Tensor,
    /// Token ids per window (padding is [`PAD`]).
    pub windows: Vec<Vec<usize>>,
}

pub fn encode<R: Rng + ?Sized>(
    doc: &[usize],
    params: &ModelParams,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Encoding> {
    if doc.is_empty() {
        return Err(DasError::invalid("cannot encode an empty document"));
    }
    let window = params.window;
    let ids = window_ids(doc, window);
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let x = tape.gather_rows(pv.embedding, &ids, window)?;
    let pre = tape.affine(x, pv.conv_w, pv.conv_b)?;
    let hidden = tape.relu(pre);
    let hidden = tape.value(hidden).clone();
    let (xi, argmax) = ops::max_over_time(&hidden)?;
    let classifier_input = ops::dropout(&xi, dropout_rate, training, rng)?;
    Ok(Encoding {
        xi,
        argmax,
        classifier_input,
        hidden,
        windows: ids.chunks(window).map(<[usize]>::to_vec).collect(),
    })
}

pub fn classify(xi: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let z = ops::affine(xi, &params.out_w, params.out_b.data())?;
    Ok(ops::softmax(&z))
}

/// Eval-mode class distributions, one row per document.
pub fn predict_proba(params: &ModelParams, docs: &[Vec<usize>]) -> Result<Tensor> {
    if docs.is_empty() {
        return Err(DasError::invalid("nothing to predict"));
    }
    let c = params.classes();
    let mut out = Vec::with_capacity(docs.len() * c);
    for chunk in docs.chunks(PREDICT_CHUNK) {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        let xi = encode_batch(&mut tape, &pv, &refs, params.window)?;
        let z = logits(&mut tape, &pv, xi)?;
        let p = tape.softmax(z);
        out.extend_from_slice(tape.value(p).data());
    }
    Tensor::matrix(docs.len(), c, out)
}

/// Argmax class per row, ties to the lowest index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn predict(params: &ModelParams, docs: &[Vec<usize>]) -> Result<Vec<usize>> {
    Ok(argmax_rows(&predict_proba(params, docs)?))
}
