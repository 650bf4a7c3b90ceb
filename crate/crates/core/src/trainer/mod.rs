//! The training loop: minibatch steps over the combined objective, epoch-end
//! ensemble refresh and dev-based model selection.

mod config;
mod experiment;
mod history;
mod optim;

pub use config::{TrainConfig, Variant};
pub use experiment::{prepare, run_experiment, run_experiment_with_dumps, run_multi_seed, ExperimentData, Prepared, RunOutput, RunRecord};
pub use history::{select_best_epoch, EpochRecord, History, CSV_HEADER};
pub use optim::{rmsprop_step, RmsProp};

use std::path::Path;
use std::time::Instant;

use crate::data::{BatchStream, PAD};
use crate::ensemble::{predict_all, EnsembleState};
use crate::error::{DasError, Result};
use crate::losses::{graph, rampup_weight, total_loss, DistanceLoss, LossBreakdown, LossWeights};
use crate::model::{apply_max_norm, encode_batch, init_params, logits, predict, ModelParams, ModelShape, ParamVars};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng::{stream, Rng, Stream};

/// Any loss component above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Token-id documents ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub source: Vec<Vec<usize>>,
    pub source_labels: Vec<usize>,
    pub source_unlabeled: Vec<Vec<usize>>,
    /// Target documents; their labels never enter training.
    pub target: Vec<Vec<usize>>,
    pub dev: Vec<Vec<usize>>,
    pub dev_labels: Vec<usize>,
    pub classes: usize,
}

impl TrainingSet {
    /// Labeled source, then unlabeled source, then target.
    pub fn union(&self) -> Vec<Vec<usize>> {
        self.source
            .iter()
            .chain(&self.source_unlabeled)
            .chain(&self.target)
            .cloned()
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.source.len() != self.source_labels.len() || self.dev.len() != self.dev_labels.len() {
            return Err(DasError::Data("every source and dev document needs a label".into()));
        }
        if self.source.is_empty() || self.target.is_empty() || self.dev.is_empty() {
            return Err(DasError::Data("training needs source, target and dev documents".into()));
        }
        if let Some(&l) = self.source_labels.iter().chain(&self.dev_labels).find(|&&l| l >= self.classes) {
            return Err(DasError::Data(format!("label {l} out of range for {} classes", self.classes)));
        }
        Ok(())
    }
}

/// Documents and constant targets for one iteration.
#[derive(Debug, Clone)]
pub struct StepBatch<'a> {
    pub source: Vec<&'a [usize]>,
    pub source_labels: Vec<usize>,
    pub target: Vec<&'a [usize]>,
    pub union: Vec<&'a [usize]>,
    /// Ensemble targets for `union`; `None` disables the bootstrapping term.
    pub union_targets: Option<Tensor>,
}

/// Per-iteration settings of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub weights: LossWeights,
    pub w_t: f64,
    pub distance: DistanceLoss,
    pub kl_eps: f64,
    pub mmd_sigma: Option<f64>,
    pub dropout_rate: f64,
    pub training: bool,
}

impl StepSettings {
    pub fn from_config(config: &TrainConfig, w_t: f64) -> Self {
        StepSettings {
            weights: config.effective_weights(),
            w_t,
            distance: config.effective_distance(),
            kl_eps: config.kl_eps,
            mmd_sigma: config.mmd_bandwidth(),
            dropout_rate: config.dropout_rate,
            training: true,
        }
    }
}

/// Builds `L + λ1·J + λ2·Γ + w(t)·Ω` on the tape. Terms with zero weight are
/// neither computed nor charged any dropout randomness.
pub fn build_loss(
    tape: &mut Tape<'_>,
    pv: &ParamVars,
    window: usize,
    batch: &StepBatch<'_>,
    settings: &StepSettings,
    rng: &mut Rng,
) -> Result<(Var, LossBreakdown)> {
    let w = settings.weights;
    let need_target = w.lambda1 > 0.0 || w.lambda2 > 0.0;
    let bootstrap_targets = batch.union_targets.as_ref().filter(|_| settings.w_t > 0.0);

    let mut docs: Vec<&[usize]> = batch.source.clone();
    let ns = docs.len();
    if need_target {
        docs.extend(&batch.target);
    }
    let nt_end = docs.len();
    if bootstrap_targets.is_some() {
        docs.extend(&batch.union);
    }
    let xi = encode_batch(tape, pv, &docs, window)?;
    let xi_s = tape.slice_rows(xi, 0, ns)?;

    let dropped = tape.dropout(xi_s, settings.dropout_rate, settings.training, rng)?;
    let z_s = logits(tape, pv, dropped)?;
    let l = graph::source_cross_entropy(tape, z_s, &batch.source_labels)?;
    let mut terms = vec![(l, 1.0)];
    let (mut j_val, mut gamma_val, mut omega_val) = (0.0, 0.0, 0.0);

    if need_target {
        let xi_t = tape.slice_rows(xi, ns, nt_end)?;
        if w.lambda1 > 0.0 {
            let j = graph::distance(tape, settings.distance, xi_s, xi_t, settings.kl_eps, settings.mmd_sigma)?;
            j_val = tape.scalar(j);
            terms.push((j, w.lambda1));
        }
        if w.lambda2 > 0.0 {
            let dropped = tape.dropout(xi_t, settings.dropout_rate, settings.training, rng)?;
            let z_t = logits(tape, pv, dropped)?;
            let gamma = graph::entropy_min(tape, z_t);
            gamma_val = tape.scalar(gamma);
            terms.push((gamma, w.lambda2));
        }
    }
    if let Some(targets) = bootstrap_targets {
        let xi_u = tape.slice_rows(xi, nt_end, docs.len())?;
        let dropped = tape.dropout(xi_u, settings.dropout_rate, settings.training, rng)?;
        let z_u = logits(tape, pv, dropped)?;
        let omega = graph::bootstrap(tape, z_u, targets.clone())?;
        omega_val = tape.scalar(omega);
        terms.push((omega, settings.w_t));
    }
    let w_t = if bootstrap_targets.is_some() { settings.w_t } else { 0.0 };
    let breakdown = total_loss(tape.scalar(l), j_val, gamma_val, omega_val, w, w_t)?;
    let total = tape.weighted_sum(&terms)?;
    Ok((total, breakdown))
}

fn check_divergence(b: &LossBreakdown) -> Result<()> {
    for (name, v) in [("L", b.l), ("J", b.j), ("Gamma", b.gamma), ("Omega", b.omega), ("total", b.total)] {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(DasError::Numerical(format!("loss component {name} diverged to {v}")));
        }
    }
    Ok(())
}

/// Loss of one batch without updating anything.
pub fn batch_loss(params: &ModelParams, batch: &StepBatch<'_>, settings: &StepSettings, rng: &mut Rng) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    Ok(build_loss(&mut tape, &pv, params.window, batch, settings, rng)?.1)
}

/// Forward, backward, RMSProp update and max-norm projection. The padding
/// embedding row receives no update.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut RmsProp,
    batch: &StepBatch<'_>,
    settings: &StepSettings,
    max_norm: f64,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    let (breakdown, mut grads) = {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let (total, breakdown) = build_loss(&mut tape, &pv, params.window, batch, settings, rng)?;
        check_divergence(&breakdown)?;
        let mut g = tape.backward(total)?;
        let grads: Vec<Tensor> = pv.all().iter().map(|&v| g.take(v)).collect();
        (breakdown, grads)
    };
    grads[0].row_mut(PAD).fill(0.0);
    opt.step(&mut params.tensors_mut(), &grads)?;
    apply_max_norm(params, max_norm);
    if !params.is_finite() {
        return Err(DasError::Numerical("parameters became non-finite".into()));
    }
    Ok(breakdown)
}

pub fn error_rate(predicted: &[usize], gold: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(gold).filter(|(p, g)| p != g).count();
    wrong as f64 / gold.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest dev error.
    pub best: ModelParams,
    pub last: ModelParams,
    pub history: History,
}

pub fn train(config: &TrainConfig, data: &TrainingSet, embedding: Tensor) -> Result<TrainOutcome> {
    train_with_dumps(config, data, embedding, None)
}

/// Like [`train`]; with `dump_dir`, the ensemble matrix is written there
/// after every epoch as `ensemble_epoch<N>.bin`.
pub fn train_with_dumps(
    config: &TrainConfig,
    data: &TrainingSet,
    embedding: Tensor,
    dump_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    data.check()?;
    let weights = config.effective_weights();
    let shape = ModelShape {
        window: config.window,
        hidden: config.hidden,
        classes: data.classes,
    };
    let mut params = init_params(shape, embedding, &mut stream(config.seed, Stream::Init))?;
    let mut opt = RmsProp::new(params.tensors(), config.learning_rate, config.rmsprop_rho, config.rmsprop_eps);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let union = data.union();
    let mut batches = BatchStream::new(
        &data.source_labels,
        data.target.len(),
        union.len(),
        config.batch_size,
        config.balance_source,
        stream(config.seed, Stream::Shuffle),
    )?;
    let mut ensemble = if weights.lambda3 > 0.0 {
        Some(EnsembleState::new(union.len(), data.classes, config.alpha)?)
    } else {
        None
    };

    let mut history = History::default();
    let mut best = params.clone();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let skipped = ensemble.is_some() && epoch == 1 && config.skip_first_epoch_bootstrap;
        let w_t = if skipped {
            0.0
        } else {
            rampup_weight(epoch, config.epochs, weights.lambda3)?
        };
        let settings = StepSettings::from_config(config, w_t);
        let mut sum = LossBreakdown::default();
        let triples = batches.next_epoch();
        for (it, triple) in triples.iter().enumerate() {
            let batch = StepBatch {
                source: triple.source.iter().map(|&i| data.source[i].as_slice()).collect(),
                source_labels: triple.source.iter().map(|&i| data.source_labels[i]).collect(),
                target: triple.target.iter().map(|&i| data.target[i].as_slice()).collect(),
                union: triple.union.iter().map(|&i| union[i].as_slice()).collect(),
                union_targets: ensemble
                    .as_ref()
                    .filter(|_| w_t > 0.0)
                    .map(|e| e.targets_for(&triple.union)),
            };
            let b = train_step(&mut params, &mut opt, &batch, &settings, config.max_norm, &mut dropout_rng)
                .map_err(|e| match e {
                    DasError::Numerical(msg) => {
                        DasError::Numerical(format!("epoch {epoch}, iteration {}: {msg}", it + 1))
                    }
                    other => other,
                })?;
            sum.l += b.l;
            sum.j += b.j;
            sum.gamma += b.gamma;
            sum.omega += b.omega;
            sum.total += b.total;
        }
        let n = triples.len().max(1) as f64;

        let dev_error = error_rate(&predict(&params, &data.dev)?, &data.dev_labels);
        if history.epochs.is_empty() || dev_error < history.best_dev_error {
            history.best_epoch = epoch;
            history.best_dev_error = dev_error;
            best = params.clone();
        }
        if let Some(ens) = ensemble.as_mut() {
            ens.update(&predict_all(&params, &union)?)?;
            if let Some(dir) = dump_dir {
                ens.dump(&dir.join(format!("ensemble_epoch{epoch}.bin")))?;
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            l: sum.l / n,
            j: sum.j / n,
            gamma: sum.gamma / n,
            omega: sum.omega / n,
            w_t,
            total: sum.total / n,
            dev_error,
            seconds: if config.log_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
            bootstrap_skipped: skipped,
        });
    }
    Ok(TrainOutcome {
        best,
        last: params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::random_embeddings;
    use crate::numerics::grad_check;
    use rand::Rng as _;

    fn toy_params(seed: u64) -> ModelParams {
        let mut rng = stream(seed, Stream::Init);
        let emb = random_embeddings(12, 4, &mut rng);
        init_params(ModelShape { window: 3, hidden: 5, classes: 3 }, emb, &mut rng).unwrap()
    }

    fn toy_docs(rng: &mut Rng, n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..6);
                (0..len).map(|_| rng.random_range(1..12)).collect()
            })
            .collect()
    }

    fn settings(w: LossWeights, w_t: f64, distance: DistanceLoss) -> StepSettings {
        StepSettings {
            weights: w,
            w_t,
            distance,
            kl_eps: 1e-6,
            mmd_sigma: None,
            dropout_rate: 0.0,
            training: false,
        }
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let params = toy_params(3);
        let mut rng = stream(9, Stream::Synth);
        let src = toy_docs(&mut rng, 4);
        let tgt = toy_docs(&mut rng, 4);
        let uni = toy_docs(&mut rng, 4);
        let batch = StepBatch {
            source: src.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 2, 1, 2],
            target: tgt.iter().map(Vec::as_slice).collect(),
            union: uni.iter().map(Vec::as_slice).collect(),
            union_targets: Some(graph::one_hot(&[1, 0, 2, 2], 3).unwrap()),
        };
        for distance in [DistanceLoss::SymmetricKlMeans, DistanceLoss::MmdRbf] {
            let s = StepSettings {
                mmd_sigma: Some(1.5),
                ..settings(LossWeights { lambda1: 2.0, lambda2: 0.7, lambda3: 3.0 }, 1.3, distance)
            };
            let f = |tape: &mut Tape<'_>, vars: &[Var]| {
                let pv = ParamVars::from_slice(vars);
                let mut r = stream(0, Stream::Dropout);
                Ok(build_loss(tape, &pv, 3, &batch, &s, &mut r)?.0)
            };
            let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
            let report = grad_check(f, &tensors, 1e-5, 1e-4).unwrap();
            assert!(report.passed(), "{distance:?}: {report:?}");
        }
    }

    #[test]
    fn zero_weights_skip_terms() {
        let params = toy_params(1);
        let mut rng = stream(2, Stream::Synth);
        let src = toy_docs(&mut rng, 3);
        let batch = StepBatch {
            source: src.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 1, 2],
            target: src.iter().map(Vec::as_slice).collect(),
            union: src.iter().map(Vec::as_slice).collect(),
            union_targets: Some(graph::one_hot(&[0, 0, 0], 3).unwrap()),
        };
        let b = batch_loss(&params, &batch, &settings(LossWeights::default(), 0.0, DistanceLoss::SymmetricKlMeans), &mut rng)
            .unwrap();
        assert_eq!((b.j, b.gamma, b.omega, b.w_t), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(b.total, b.l);
    }

    #[test]
    fn one_step_usually_decreases_loss() {
        let mut decreased = 0;
        for seed in 0..100u64 {
            let mut params = toy_params(seed);
            let mut rng = stream(seed, Stream::Synth);
            let src = toy_docs(&mut rng, 6);
            let tgt = toy_docs(&mut rng, 6);
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let batch = StepBatch {
                source: src.iter().map(Vec::as_slice).collect(),
                source_labels: labels,
                target: tgt.iter().map(Vec::as_slice).collect(),
                union: src.iter().map(Vec::as_slice).collect(),
                union_targets: None,
            };
            let s = settings(LossWeights { lambda1: 1.0, lambda2: 0.5, lambda3: 0.0 }, 0.0, DistanceLoss::SymmetricKlMeans);
            let mut opt = RmsProp::new(params.tensors(), 1e-3, 0.9, 1e-8);
            let before = batch_loss(&params, &batch, &s, &mut rng).unwrap().total;
            train_step(&mut params, &mut opt, &batch, &s, 3.0, &mut rng).unwrap();
            let after = batch_loss(&params, &batch, &s, &mut rng).unwrap().total;
            if after < before {
                decreased += 1;
            }
        }
        assert!(decreased >= 90, "decreased in {decreased}/100 instances");
    }

    #[test]
    fn padding_row_never_moves() {
        let mut params = toy_params(4);
        let mut rng = stream(4, Stream::Synth);
        let docs = toy_docs(&mut rng, 4);
        let batch = StepBatch {
            source: docs.iter().map(Vec::as_slice).collect(),
            source_labels: vec![0, 1, 2, 0],
            target: docs.iter().map(Vec::as_slice).collect(),
            union: docs.iter().map(Vec::as_slice).collect(),
            union_targets: None,
        };
        let s = settings(LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 0.0 }, 0.0, DistanceLoss::SymmetricKlMeans);
        let mut opt = RmsProp::new(params.tensors(), 0.01, 0.9, 1e-8);
        for _ in 0..5 {
            train_step(&mut params, &mut opt, &batch, &s, 0.5, &mut rng).unwrap();
        }
        assert!(params.embedding.row(PAD).iter().all(|&v| v == 0.0));
        for r in 0..params.out_w.rows() {
            let norm: f64 = params.out_w.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn error_rate_counts_mismatches() {
        assert_eq!(error_rate(&[0, 1, 2, 2], &[0, 1, 1, 0]), 0.5);
    }
}
