//! Training objectives.
//!
//! Value functions take probability rows and clamp them to `[1e-12, 1]`
//! before taking logs. The [`graph`] functions build the same objectives on
//! a [`Tape`] from logits (log-softmax fused, no clamping needed) so they
//! can be differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{DasError, Result};
use crate::numerics::{l1_normalize, mmd_rbf_value, symmetric_kl_value, Tape, Tensor, Var};

/// Lower clamp for probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Additive smoothing before L1-normalising mean feature vectors.
pub const KL_EPS: f64 = 1e-6;

fn clamped_log(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln()
}

fn check_batch(name: &str, t: &Tensor) -> Result<()> {
    if t.is_empty() || t.rank() != 2 {
        return Err(DasError::invalid(format!("{name} needs a non-empty [batch × C] matrix")));
    }
    Ok(())
}

fn check_same(name: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(DasError::Shape {
            op: name,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean cross-entropy of one-hot `targets` under predicted distributions.
pub fn source_cross_entropy(targets: &Tensor, probs: &Tensor) -> Result<f64> {
    check_batch("source_cross_entropy", probs)?;
    check_same("source_cross_entropy", targets, probs)?;
    let total: f64 = targets
        .data()
        .iter()
        .zip(probs.data())
        .map(|(y, p)| if *y == 0.0 { 0.0 } else { -y * clamped_log(*p) })
        .sum();
    Ok(total / probs.rows() as f64)
}

pub fn symmetric_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    symmetric_kl_value(p, q)
}

/// Symmetric KL between the L1-normalised batch means of two feature sets.
pub fn feature_adaptation_loss(xi_s: &Tensor, xi_t: &Tensor, eps: f64) -> Result<f64> {
    check_batch("feature_adaptation_loss", xi_s)?;
    check_batch("feature_adaptation_loss", xi_t)?;
    let gs = l1_normalize(&column_means(xi_s), eps)?;
    let gt = l1_normalize(&column_means(xi_t), eps)?;
    symmetric_kl_value(&gs, &gt)
}

fn column_means(x: &Tensor) -> Vec<f64> {
    let mut m = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        m.iter_mut().zip(x.row(r)).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|a| *a /= x.rows() as f64);
    m
}

/// Mean prediction entropy in nats.
pub fn entropy_min_loss(probs: &Tensor) -> Result<f64> {
    check_batch("entropy_min_loss", probs)?;
    let total: f64 = probs.data().iter().map(|&p| -p * clamped_log(p)).sum();
    Ok(total / probs.rows() as f64)
}

pub fn is_one_hot(row: &[f64]) -> bool {
    row.iter().filter(|&&v| v == 1.0).count() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Cross-entropy against ensemble one-hot targets.
pub fn bootstrap_loss(z_tilde: &Tensor, probs: &Tensor) -> Result<f64> {
    check_batch("bootstrap_loss", probs)?;
    check_same("bootstrap_loss", z_tilde, probs)?;
    if let Some(r) = (0..z_tilde.rows()).find(|&r| !is_one_hot(z_tilde.row(r))) {
        return Err(DasError::invalid(format!("bootstrap target row {r} is not one-hot")));
    }
    source_cross_entropy(z_tilde, probs)
}

/// `exp(-5 (1 - ratio)²)·λ3`.
pub fn rampup_at_ratio(ratio: f64, lambda3: f64) -> f64 {
    let gap = 1.0 - ratio;
    (-5.0 * gap * gap).exp() * lambda3
}

/// Gaussian ramp-up of the bootstrapping weight for epoch `t` of `t_max`.
pub fn rampup_weight(t: usize, t_max: usize, lambda3: f64) -> Result<f64> {
    if t == 0 || t > t_max {
        return Err(DasError::invalid(format!("epoch {t} outside [1, {t_max}]")));
    }
    Ok(rampup_at_ratio(t as f64 / t_max as f64, lambda3))
}

/// Biased MMD² with kernel `exp(-‖x - y‖² / 2σ²)`.
pub fn mmd_rbf(xs: &Tensor, xt: &Tensor, sigma: f64) -> Result<f64> {
    check_batch("mmd_rbf", xs)?;
    check_batch("mmd_rbf", xt)?;
    mmd_rbf_value(xs, xt, sigma)
}

/// Median pairwise Euclidean distance over the rows of both batches; 1 when
/// every pair coincides.
pub fn median_bandwidth(xs: &Tensor, xt: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..xs.rows())
        .map(|r| xs.row(r))
        .chain((0..xt.rows()).map(|r| xt.row(r)))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

/// Loss components of one iteration (or their epoch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub l: f64,
    pub j: f64,
    pub gamma: f64,
    pub omega: f64,
    pub w_t: f64,
    pub total: f64,
}

/// `L + λ1·J + λ2·Γ + w(t)·Ω`, rejecting non-finite components.
pub fn total_loss(l: f64, j: f64, gamma: f64, omega: f64, weights: LossWeights, w_t: f64) -> Result<LossBreakdown> {
    for (name, v) in [("L", l), ("J", j), ("Gamma", gamma), ("Omega", omega), ("w(t)", w_t)] {
        if !v.is_finite() {
            return Err(DasError::Numerical(format!("loss component {name} is {v}")));
        }
    }
    Ok(LossBreakdown {
        l,
        j,
        gamma,
        omega,
        w_t,
        total: l + weights.lambda1 * j + weights.lambda2 * gamma + w_t * omega,
    })
}

/// Which distance aligns the source and target feature batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceLoss {
    #[serde(rename = "symmetric-kl-means")]
    SymmetricKlMeans,
    #[serde(rename = "mmd-rbf")]
    MmdRbf,
}

impl DistanceLoss {
    pub fn name(self) -> &'static str {
        match self {
            DistanceLoss::SymmetricKlMeans => "symmetric-kl-means",
            DistanceLoss::MmdRbf => "mmd-rbf",
        }
    }
}

impl std::str::FromStr for DistanceLoss {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric-kl-means" => Ok(DistanceLoss::SymmetricKlMeans),
            "mmd-rbf" => Ok(DistanceLoss::MmdRbf),
            other => Err(DasError::Config(format!("unknown distance loss '{other}'"))),
        }
    }
}

/// Differentiable versions of the objectives.
pub mod graph {
    use super::*;

    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
        let mut data = vec![0.0; labels.len() * classes];
        for (r, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(DasError::invalid(format!("label {l} out of range for {classes} classes")));
            }
            data[r * classes + l] = 1.0;
        }
        Tensor::matrix(labels.len(), classes, data)
    }

    pub fn source_cross_entropy(tape: &mut Tape<'_>, logits: Var, labels: &[usize]) -> Result<Var> {
        let classes = tape.value(logits).cols();
        let targets = one_hot(labels, classes)?;
        let lp = tape.log_softmax(logits);
        tape.nll(lp, targets)
    }

    pub fn feature_adaptation(tape: &mut Tape<'_>, xi_s: Var, xi_t: Var, eps: f64) -> Result<Var> {
        let ms = tape.mean_rows(xi_s);
        let mt = tape.mean_rows(xi_t);
        let gs = tape.l1_normalize(ms, eps)?;
        let gt = tape.l1_normalize(mt, eps)?;
        tape.symmetric_kl(gs, gt)
    }

    pub fn entropy_min(tape: &mut Tape<'_>, logits: Var) -> Var {
        let lp = tape.log_softmax(logits);
        tape.entropy(lp)
    }

    /// `targets` are constants; no gradient reaches them.
    pub fn bootstrap(tape: &mut Tape<'_>, logits: Var, targets: Tensor) -> Result<Var> {
        if let Some(r) = (0..targets.rows()).find(|&r| !is_one_hot(targets.row(r))) {
            return Err(DasError::invalid(format!("bootstrap target row {r} is not one-hot")));
        }
        let lp = tape.log_softmax(logits);
        tape.nll(lp, targets)
    }

    /// Distance between source and target features. With MMD and no
    /// explicit bandwidth, σ is the median heuristic on the current values
    /// and is held constant for differentiation.
    pub fn distance(
        tape: &mut Tape<'_>,
        kind: DistanceLoss,
        xi_s: Var,
        xi_t: Var,
        eps: f64,
        sigma: Option<f64>,
    ) -> Result<Var> {
        match kind {
            DistanceLoss::SymmetricKlMeans => feature_adaptation(tape, xi_s, xi_t, eps),
            DistanceLoss::MmdRbf => {
                let sigma = sigma.unwrap_or_else(|| median_bandwidth(tape.value(xi_s), tape.value(xi_t)));
                tape.mmd_rbf(xi_s, xi_t, sigma)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn cross_entropy_examples() {
        let y = m(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]);
        assert!(source_cross_entropy(&y, &y).unwrap() <= 1e-6);
        let u = Tensor::filled(&[2, 3], 1.0 / 3.0);
        assert_abs_diff_eq!(source_cross_entropy(&y, &u).unwrap(), 3f64.ln(), epsilon = 1e-4);
        let hard = m(&[vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]);
        assert!(source_cross_entropy(&y, &hard).unwrap().is_finite());
    }

    #[test]
    fn symmetric_kl_examples() {
        assert_eq!(symmetric_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        // 0.5 ln 2 + 0.5 ln(2/3) + 0.25 ln(1/2) + 0.75 ln(3/2)
        let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln()
            + 0.25 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        let v = symmetric_kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.2747, epsilon = 1e-4);
        assert_eq!(v, symmetric_kl(&[0.25, 0.75], &[0.5, 0.5]).unwrap());
        assert!(symmetric_kl(&[1.0, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn feature_adaptation_examples() {
        let a = m(&[vec![1.0, 2.0], vec![3.0, 0.5]]);
        assert_abs_diff_eq!(feature_adaptation_loss(&a, &a, KL_EPS).unwrap(), 0.0, epsilon = 1e-15);
        let swapped = m(&[vec![3.0, 0.5], vec![1.0, 2.0]]);
        let t = m(&[vec![0.1, 4.0], vec![2.0, 2.0]]);
        assert_eq!(
            feature_adaptation_loss(&a, &t, KL_EPS).unwrap(),
            feature_adaptation_loss(&swapped, &t, KL_EPS).unwrap()
        );
        let v = feature_adaptation_loss(&m(&[vec![1.0, 3.0]]), &m(&[vec![1.0, 1.0]]), 0.0).unwrap();
        assert_abs_diff_eq!(v, 0.2747, epsilon = 1e-4);
    }

    #[test]
    fn entropy_examples() {
        let onehot = m(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!(entropy_min_loss(&onehot).unwrap() <= 1e-6);
        let u = Tensor::filled(&[4, 3], 1.0 / 3.0);
        assert_abs_diff_eq!(entropy_min_loss(&u).unwrap(), 3f64.ln(), epsilon = 1e-4);
    }

    #[test]
    fn bootstrap_examples() {
        let z = m(&[vec![0.0, 1.0, 0.0]]);
        assert!(bootstrap_loss(&z, &z).unwrap() <= 1e-6);
        let u = Tensor::filled(&[1, 3], 1.0 / 3.0);
        assert_abs_diff_eq!(bootstrap_loss(&z, &u).unwrap(), 3f64.ln(), epsilon = 1e-4);
        assert!(bootstrap_loss(&m(&[vec![0.5, 0.5, 0.0]]), &u).is_err());
    }

    #[test]
    fn rampup_examples() {
        assert_eq!(rampup_weight(30, 30, 3.0).unwrap(), 3.0);
        assert_abs_diff_eq!(rampup_at_ratio(0.0, 3.0), 3.0 * (-5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(rampup_at_ratio(0.0, 3.0), 0.0202, epsilon = 1e-4);
        let w: Vec<f64> = (1..=30).map(|t| rampup_weight(t, 30, 3.0).unwrap()).collect();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!(rampup_weight(0, 30, 3.0).is_err());
        assert!(rampup_weight(31, 30, 3.0).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let zero = LossWeights::default();
        assert_eq!(total_loss(0.7, 2.0, 3.0, 4.0, zero, 0.0).unwrap().total, 0.7);
        let w = LossWeights { lambda1: 200.0, lambda2: 1.0, lambda3: 3.0 };
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, w, 3.0).unwrap().total, 416.0);
        let err = total_loss(1.0, f64::NAN, 0.0, 0.0, w, 1.0).unwrap_err();
        assert!(err.to_string().contains('J'));
    }

    #[test]
    fn mmd_examples() {
        let a = m(&[vec![0.3, 1.0], vec![2.0, -1.0]]);
        assert_abs_diff_eq!(mmd_rbf(&a, &a, 0.7).unwrap(), 0.0, epsilon = 1e-12);
        let v = mmd_rbf(&m(&[vec![0.0]]), &m(&[vec![1.0]]), 1.0).unwrap();
        assert_abs_diff_eq!(v, 2.0 - 2.0 * (-0.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.7869, epsilon = 1e-4);
        assert!(mmd_rbf(&a, &a, 0.0).is_err());
    }

    #[test]
    fn median_bandwidth_cases() {
        let xs = m(&[vec![0.0], vec![1.0]]);
        let xt = m(&[vec![3.0]]);
        // pairwise distances 1, 3, 2 -> median 2
        assert_eq!(median_bandwidth(&xs, &xt), 2.0);
        assert_eq!(median_bandwidth(&m(&[vec![1.0]]), &m(&[vec![1.0]])), 1.0);
    }
}
