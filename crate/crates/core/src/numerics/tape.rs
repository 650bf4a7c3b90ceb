//! Reverse-mode gradient tape over the handful of operations the model uses.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass (argmax routes, dropout masks). Nodes only
//! refer to earlier nodes, so the tape is already in topological order and
//! the backward sweep is a single reverse scan.

use std::borrow::Cow;

use rand::Rng;

use super::ops::{self, check_affine};
use super::Tensor;
use crate::error::{DasError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    MaxOverTime {
        h: Var,
        argmax: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Option<Vec<f64>>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    MeanRows(Var),
    L1Normalize {
        v: Var,
        total: f64,
    },
    SymmetricKl(Var, Var),
    LogSoftmax(Var),
    Softmax(Var),
    Nll {
        log_probs: Var,
        targets: Tensor,
    },
    Entropy(Var),
    MmdRbf {
        xs: Var,
        xt: Var,
        sigma: f64,
    },
    Sum(Var),
    Mul(Var, Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Records a forward computation so it can be differentiated.
///
/// Leaves may borrow their tensors (model parameters) for the lifetime of
/// the tape; everything computed on it is owned.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// `x·Wᵀ + b`, row-wise when `x` is a matrix.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        check_affine(xv.shape(), wv.shape(), bv.len())?;
        let mut y = ops::affine_rows(xv, wv, bv.data());
        if xv.rank() < 2 {
            let n = y.len();
            y = y.reshaped(&[n]);
        }
        Ok(self.push(y, Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = Tensor::new(xv.shape().to_vec(), ops::relu(xv.data())).expect("same shape");
        self.push(y, Op::Relu(x))
    }

    /// Column maximum over all rows of `h`, giving a vector.
    pub fn max_over_time(&mut self, h: Var) -> Result<Var> {
        let rows = self.value(h).rows();
        let out = self.segment_max_over_time(h, &[0, rows])?;
        let cols = self.value(out).cols();
        let node = &mut self.nodes[out.0];
        let value = std::mem::replace(node.value.to_mut(), Tensor::scalar(0.0));
        *node.value.to_mut() = value.reshaped(&[cols]);
        Ok(out)
    }

    /// Column maximum within each row segment `offsets[k]..offsets[k+1]`,
    /// giving one output row per segment.
    pub fn segment_max_over_time(&mut self, h: Var, offsets: &[usize]) -> Result<Var> {
        let hv = self.value(h);
        if offsets.len() < 2 || *offsets.last().unwrap() != hv.rows() || offsets[0] != 0 {
            return Err(DasError::invalid(format!(
                "segment offsets {offsets:?} do not cover {} rows",
                hv.rows()
            )));
        }
        let cols = hv.cols();
        let segments = offsets.len() - 1;
        let mut out = Vec::with_capacity(segments * cols);
        let mut argmax = Vec::with_capacity(segments * cols);
        for win in offsets.windows(2) {
            if win[1] <= win[0] {
                return Err(DasError::invalid("max_over_time on an empty segment"));
            }
            let (best, arg) = ops::segment_max(hv, win[0], win[1]);
            out.extend(best);
            argmax.extend(arg);
        }
        let y = Tensor::matrix(segments, cols, out)?;
        Ok(self.push(y, Op::MaxOverTime { h, argmax }))
    }

    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let xv = self.value(x);
        let mask = ops::dropout_mask(xv.len(), rate, training, rng)?;
        let y = match &mask {
            None => xv.clone(),
            Some(m) => {
                let data = xv.data().iter().zip(m).map(|(v, k)| v * k).collect();
                Tensor::new(xv.shape().to_vec(), data)?
            }
        };
        Ok(self.push(y, Op::Dropout { x, mask }))
    }

    /// Looks up rows of `table` and concatenates every `group` consecutive
    /// lookups into one output row, producing `[ids.len() / group, group·d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize], group: usize) -> Result<Var> {
        let tv = self.value(table);
        let (rows, d) = (tv.rows(), tv.cols());
        if group == 0 || ids.is_empty() || ids.len() % group != 0 {
            return Err(DasError::invalid(format!(
                "cannot group {} lookups by {group}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(DasError::invalid(format!(
                "row index {bad} out of range for table with {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let y = Tensor::matrix(ids.len() / group, group * d, data)?;
        Ok(self.push(
            y,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start >= end || end > xv.rows() {
            return Err(DasError::invalid(format!(
                "row slice {start}..{end} invalid for shape {:?}",
                xv.shape()
            )));
        }
        let c = xv.cols();
        let y = Tensor::matrix(end - start, c, xv.data()[start * c..end * c].to_vec())?;
        Ok(self.push(y, Op::SliceRows { x, start }))
    }

    /// Mean over rows, giving a vector.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let mut mean = vec![0.0; c];
        for i in 0..r {
            for (m, v) in mean.iter_mut().zip(xv.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r as f64);
        self.push(Tensor::vector(mean), Op::MeanRows(x))
    }

    pub fn l1_normalize(&mut self, v: Var, eps: f64) -> Result<Var> {
        let vv = self.value(v);
        let y = ops::l1_normalize(vv.data(), eps)?;
        let total = vv.data().iter().map(|x| x + eps).sum();
        Ok(self.push(Tensor::vector(y), Op::L1Normalize { v, total }))
    }

    /// `KL(p‖q) + KL(q‖p)` for strictly positive distributions.
    pub fn symmetric_kl(&mut self, p: Var, q: Var) -> Result<Var> {
        let value = symmetric_kl_value(self.value(p).data(), self.value(q).data())?;
        Ok(self.push(Tensor::scalar(value), Op::SymmetricKl(p, q)))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        let c = y.cols();
        y.data_mut().chunks_exact_mut(c).for_each(ops::log_softmax_in_place);
        self.push(y, Op::LogSoftmax(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        let c = y.cols();
        y.data_mut().chunks_exact_mut(c).for_each(ops::softmax_in_place);
        self.push(y, Op::Softmax(x))
    }

    /// Mean over rows of `-Σ_j targets(j)·log_probs(j)`. Targets are constants.
    pub fn nll(&mut self, log_probs: Var, targets: Tensor) -> Result<Var> {
        let lp = self.value(log_probs);
        if lp.shape() != targets.shape() {
            return Err(DasError::Shape {
                op: "nll",
                left: lp.shape().to_vec(),
                right: targets.shape().to_vec(),
            });
        }
        let value = -ops::dot(lp.data(), targets.data()) / lp.rows() as f64;
        Ok(self.push(Tensor::scalar(value), Op::Nll { log_probs, targets }))
    }

    /// Mean row entropy of the distributions whose logs are `log_probs`.
    pub fn entropy(&mut self, log_probs: Var) -> Var {
        let lp = self.value(log_probs);
        let total: f64 = lp.data().iter().map(|&l| -l.exp() * l).sum();
        let value = total / lp.rows() as f64;
        self.push(Tensor::scalar(value), Op::Entropy(log_probs))
    }

    /// Biased MMD² between the rows of `xs` and `xt` under a Gaussian kernel.
    pub fn mmd_rbf(&mut self, xs: Var, xt: Var, sigma: f64) -> Result<Var> {
        let value = mmd_rbf_value(self.value(xs), self.value(xt), sigma)?;
        Ok(self.push(Tensor::scalar(value), Op::MmdRbf { xs, xt, sigma }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(DasError::Shape {
                op: "mul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    /// `Σ weight·term` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(DasError::invalid("weighted_sum expects scalar terms"));
            }
            total += w * t.item();
        }
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(DasError::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        if !out.is_finite() {
            return Err(DasError::Numerical(format!(
                "non-finite output {} before backward",
                out.item()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let gv = g.view2();
                let dx = Tensor::from_array2(gv.dot(&wv.view2())).reshaped(xv.shape());
                let dw = Tensor::from_array2(gv.t().dot(&xv.view2()));
                let mut db = vec![0.0; wv.rows()];
                for r in 0..g.rows() {
                    for (acc, v) in db.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                let db = Tensor::vector(db).reshaped(self.value(*b).shape());
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, shaped(xv, data));
            }
            Op::MaxOverTime { h, argmax } => {
                let hv = self.value(*h);
                let cols = hv.cols();
                let mut dh = Tensor::zeros(hv.shape());
                let d = dh.data_mut();
                for (k, (&gk, &row)) in g.data().iter().zip(argmax).enumerate() {
                    d[row * cols + k % cols] += gk;
                }
                accumulate(grads, *h, dh);
            }
            Op::Dropout { x, mask } => {
                let dx = match mask {
                    None => g.clone(),
                    Some(m) => shaped(g, g.data().iter().zip(m).map(|(a, b)| a * b).collect()),
                };
                accumulate(grads, *x, dx);
            }
            Op::GatherRows { table, ids } => {
                let tv = self.value(*table);
                let d = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (chunk, &i) in g.data().chunks_exact(d).zip(ids) {
                    for (acc, v) in dt.row_mut(i).iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let r = xv.rows() as f64;
                let mut dx = Tensor::zeros(xv.shape());
                let c = xv.cols();
                for row in dx.data_mut().chunks_exact_mut(c) {
                    for (d, gv) in row.iter_mut().zip(g.data()) {
                        *d = gv / r;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::L1Normalize { v, total } => {
                let inner = ops::dot(g.data(), y.data());
                let data = g.data().iter().map(|gj| (gj - inner) / total).collect();
                accumulate(grads, *v, shaped(self.value(*v), data));
            }
            Op::SymmetricKl(p, q) => {
                let s = g.item();
                let (pv, qv) = (self.value(*p), self.value(*q));
                let mut dp = Vec::with_capacity(pv.len());
                let mut dq = Vec::with_capacity(qv.len());
                for (&pi, &qi) in pv.data().iter().zip(qv.data()) {
                    let log_ratio = (pi / qi).ln();
                    dp.push(s * (log_ratio + 1.0 - qi / pi));
                    dq.push(s * (-log_ratio + 1.0 - pi / qi));
                }
                accumulate(grads, *p, shaped(pv, dp));
                accumulate(grads, *q, shaped(qv, dq));
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                for (ly, gy) in y.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                    let gsum: f64 = gy.iter().sum();
                    dx.extend(ly.iter().zip(gy).map(|(l, gi)| gi - l.exp() * gsum));
                }
                accumulate(grads, *x, shaped(y, dx));
            }
            Op::Softmax(x) => {
                let c = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                for (py, gy) in y.data().chunks_exact(c).zip(g.data().chunks_exact(c)) {
                    let inner = ops::dot(py, gy);
                    dx.extend(py.iter().zip(gy).map(|(p, gi)| p * (gi - inner)));
                }
                accumulate(grads, *x, shaped(y, dx));
            }
            Op::Nll { log_probs, targets } => {
                let lp = self.value(*log_probs);
                let scale = -g.item() / lp.rows() as f64;
                let data = targets.data().iter().map(|t| scale * t).collect();
                accumulate(grads, *log_probs, shaped(lp, data));
            }
            Op::Entropy(log_probs) => {
                let lp = self.value(*log_probs);
                let scale = -g.item() / lp.rows() as f64;
                let data = lp
                    .data()
                    .iter()
                    .map(|&l| {
                        let p = l.exp();
                        scale * (p * l + p)
                    })
                    .collect();
                accumulate(grads, *log_probs, shaped(lp, data));
            }
            Op::MmdRbf { xs, xt, sigma } => {
                let (dxs, dxt) = mmd_rbf_grad(self.value(*xs), self.value(*xt), *sigma, g.item());
                accumulate(grads, *xs, dxs);
                accumulate(grads, *xt, dxt);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, Tensor::filled(xv.shape(), g.item()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, shaped(av, da));
                accumulate(grads, *b, shaped(bv, db));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    let shape = self.value(v).shape();
                    accumulate(grads, v, Tensor::filled(shape, w * g.item()));
                }
            }
        }
    }
}

fn shaped(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient matches value shape")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

pub fn symmetric_kl_value(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(DasError::Shape {
            op: "symmetric_kl",
            left: vec![p.len()],
            right: vec![q.len()],
        });
    }
    if let Some(bad) = p.iter().chain(q).find(|v| !(**v > 0.0)) {
        return Err(DasError::invalid(format!(
            "symmetric_kl needs strictly positive distributions, found {bad}"
        )));
    }
    Ok(p.iter()
        .zip(q)
        .map(|(pi, qi)| (pi - qi) * (pi.ln() - qi.ln()))
        .sum())
}

pub fn mmd_rbf_value(xs: &Tensor, xt: &Tensor, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(DasError::invalid(format!("mmd bandwidth must be positive, got {sigma}")));
    }
    if xs.cols() != xt.cols() {
        return Err(DasError::Shape {
            op: "mmd_rbf",
            left: xs.shape().to_vec(),
            right: xt.shape().to_vec(),
        });
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    // The pair weights sum to zero, so MMD² = Σ w·(k − 1). Summing
    // `expm1` terms avoids cancelling O(1) kernel means against each other.
    let mean_gap = |a: &Tensor, b: &Tensor| {
        let mut total = 0.0;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                total += (-gamma * ops::sq_dist(a.row(i), b.row(j))).exp_m1();
            }
        }
        total / (a.rows() * b.rows()) as f64
    };
    Ok(mean_gap(xs, xs) + mean_gap(xt, xt) - 2.0 * mean_gap(xs, xt))
}

fn mmd_rbf_grad(xs: &Tensor, xt: &Tensor, sigma: f64, upstream: f64) -> (Tensor, Tensor) {
    let inv_s2 = 1.0 / (sigma * sigma);
    let gamma = 0.5 * inv_s2;
    let (m, n) = (xs.rows() as f64, xt.rows() as f64);
    // d k(a, b) / d a = -k(a, b)·(a - b)/σ²
    let pull = |a: &[f64], b: &[f64], coef: f64, out: &mut [f64]| {
        let k = (-gamma * ops::sq_dist(a, b)).exp();
        for ((o, ai), bi) in out.iter_mut().zip(a).zip(b) {
            *o += coef * -k * (ai - bi) * inv_s2;
        }
    };
    let mut ds = Tensor::zeros(xs.shape());
    for i in 0..xs.rows() {
        let mut acc = vec![0.0; xs.cols()];
        for j in 0..xs.rows() {
            pull(xs.row(i), xs.row(j), 2.0 / (m * m), &mut acc);
        }
        for j in 0..xt.rows() {
            pull(xs.row(i), xt.row(j), -2.0 / (m * n), &mut acc);
        }
        for (d, a) in ds.row_mut(i).iter_mut().zip(acc) {
            *d = upstream * a;
        }
    }
    let mut dt = Tensor::zeros(xt.shape());
    for i in 0..xt.rows() {
        let mut acc = vec![0.0; xt.cols()];
        for j in 0..xt.rows() {
            pull(xt.row(i), xt.row(j), 2.0 / (n * n), &mut acc);
        }
        for j in 0..xs.rows() {
            pull(xt.row(i), xs.row(j), -2.0 / (m * n), &mut acc);
        }
        for (d, a) in dt.row_mut(i).iter_mut().zip(acc) {
            *d = upstream * a;
        }
    }
    (ds, dt)
}
