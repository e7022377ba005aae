//! Mini-batch training with early stopping, evaluation and k-fold runs.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{kfold_plan, kfold_plan_grouped, FoldPlan, Label, SequenceSample};
use crate::dropout::{mix64, sample_masks, DropoutSpec, MaskSet};
use crate::error::{Error, Result};
use crate::net::{batch_loss, dpm_forward, dpm_gradients_masked, NetworkConfig, NetworkParams};
use crate::stats::{accuracy_of, mcc_of, mean_std, ConfusionCounts, REPORT_STD};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Optimizer {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub validation_interval: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Sample fresh weight masks for every training sample.
    pub dropout_in_training: bool,
    pub dropout: DropoutSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            max_iterations: 3000,
            patience: 5,
            validation_interval: 50,
            optimizer: Optimizer::adam(),
            seed: 0,
            dropout_in_training: true,
            dropout: DropoutSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if self.patience == 0 {
            return bad("patience must be ≥ 1");
        }
        if self.validation_interval == 0 {
            return bad("validation interval must be ≥ 1");
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("adam needs β1, β2 in [0, 1) and ε > 0");
            }
        }
        Ok(())
    }
}

/// Adam moment estimates; unused by sgd.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    m: Option<NetworkParams>,
    v: Option<NetworkParams>,
}

pub fn apply_update(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    state: &mut OptimizerState,
    optimizer: Optimizer,
    lr: f64,
) -> Result<()> {
    if params.num_values() != grads.num_values() {
        return Err(Error::shape(
            "apply_update",
            "gradient structure differs from parameters",
        ));
    }
    state.step += 1;
    match optimizer {
        Optimizer::Sgd => params.add_scaled(-lr, grads),
        Optimizer::Adam { beta1, beta2, eps } => {
            let m = state.m.get_or_insert_with(|| grads.zeros_like());
            let v = state.v.get_or_insert_with(|| grads.zeros_like());
            let t = state.step as i32;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for (((p, g), m), v) in params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(m.tensors_mut())
                .zip(v.tensors_mut())
            {
                for (((p, &g), m), v) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    EarlyStop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<LossPoint>,
    pub stop_reason: StopReason,
    pub final_iteration: usize,
    /// Iteration whose parameters were returned (0 = initial).
    pub best_iteration: usize,
    pub best_val_loss: Option<f64>,
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,train_loss,val_loss\n");
        for p in &self.curve {
            let val = p.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{val}", p.iteration, p.train_loss);
        }
        out
    }
}

fn training_masks(cfg: &TrainConfig, params: &NetworkParams, iteration: usize, n: usize) -> Vec<Option<MaskSet>> {
    if !cfg.dropout_in_training || cfg.dropout.rate() == 0.0 {
        return Vec::new();
    }
    let base = mix64(cfg.seed ^ 0x6d61_736b, iteration as u64);
    (0..n)
        .map(|i| Some(sample_masks(&cfg.dropout, params, mix64(base, i as u64))))
        .collect()
}

/// Trains from `params`; returns the parameters with the lowest validation
/// loss seen (including the initial ones) and the loss history. Without a
/// validation set the final parameters are returned.
pub fn train(
    mut params: NetworkParams,
    net: &NetworkConfig,
    cfg: &TrainConfig,
    trainset: &[SequenceSample],
    valset: &[SequenceSample],
) -> Result<(NetworkParams, TrainReport)> {
    cfg.validate()?;
    params.check_config(net)?;
    if trainset.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let start = Instant::now();
    let val_refs: Vec<&SequenceSample> = valset.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..trainset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut state = OptimizerState::default();
    let mut curve = Vec::new();
    let mut best = if val_refs.is_empty() {
        None
    } else {
        Some((batch_loss(&params, net, &val_refs)?, 0usize, params.clone()))
    };
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut iteration = 0;
    while iteration < cfg.max_iterations {
        iteration += 1;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(trainset.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&trainset[order[cursor]]);
            cursor += 1;
        }
        let masks = training_masks(cfg, &params, iteration, batch.len());
        let (loss, grads) = dpm_gradients_masked(&params, net, &batch, &masks)?;
        apply_update(&mut params, &grads, &mut state, cfg.optimizer, cfg.learning_rate)?;

        let mut point = LossPoint {
            iteration,
            train_loss: loss,
            val_loss: None,
        };
        if let Some((best_loss, best_iter, best_params)) = best.as_mut() {
            if iteration % cfg.validation_interval == 0 {
                let v = batch_loss(&params, net, &val_refs)?;
                point.val_loss = Some(v);
                if v < *best_loss {
                    *best_loss = v;
                    *best_iter = iteration;
                    *best_params = params.clone();
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
        }
        curve.push(point);
        if stale >= cfg.patience {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let (params, best_iteration, best_val_loss) = match best {
        Some((loss, it, p)) => (p, it, Some(loss)),
        None => (params, iteration, None),
    };
    Ok((
        params,
        TrainReport {
            curve,
            stop_reason,
            final_iteration: iteration,
            best_iteration,
            best_val_loss,
            wall_time: start.elapsed(),
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// P(collision) per sample.
    pub probs: Vec<f64>,
    pub predictions: Vec<Label>,
    pub counts: ConfusionCounts,
}

/// Deterministic forward over `testset`; collision is predicted when
/// P(collision) ≥ `threshold`.
pub fn evaluate(
    params: &NetworkParams,
    net: &NetworkConfig,
    testset: &[SequenceSample],
    threshold: f64,
) -> Result<Evaluation> {
    let probs = testset
        .par_iter()
        .map(|s| dpm_forward(params, net, s, None).map(|p| p.data()[Label::Collision.class_index()]))
        .collect::<Result<Vec<f64>>>()?;
    let mut counts = ConfusionCounts::default();
    let predictions = probs
        .iter()
        .zip(testset)
        .map(|(&p, s)| {
            let pred = if p >= threshold {
                Label::Collision
            } else {
                Label::NoCollision
            };
            counts.record(pred == Label::Collision, s.label == Label::Collision);
            pred
        })
        .collect();
    Ok(Evaluation {
        probs,
        predictions,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FoldUnit {
    /// All windows of an episode share a fold.
    Episodes,
    Samples,
}

impl std::str::FromStr for FoldUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episodes" => Ok(FoldUnit::Episodes),
            "samples" => Ok(FoldUnit::Samples),
            other => Err(Error::InvalidArgument(format!(
                "fold unit must be 'episodes' or 'samples', got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KFoldConfig {
    pub k: usize,
    pub unit: FoldUnit,
    /// Fraction of each training partition held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for KFoldConfig {
    fn default() -> Self {
        KFoldConfig {
            k: 10,
            unit: FoldUnit::Episodes,
            val_fraction: 0.1,
            seed: 0,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub mcc: f64,
    pub counts: ConfusionCounts,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub final_iteration: usize,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    pub accuracy: (f64, f64),
    pub mcc: (f64, f64),
}

impl KFoldReport {
    pub fn from_folds(folds: Vec<FoldResult>) -> Result<Self> {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let mcc: Vec<f64> = folds.iter().map(|f| f.mcc).collect();
        Ok(KFoldReport {
            accuracy: mean_std(&acc, REPORT_STD)?,
            mcc: mean_std(&mcc, REPORT_STD)?,
            folds,
        })
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    pub fn mccs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.mcc).collect()
    }

    /// `fold,accuracy,mcc` rows followed by mean and std rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,mcc\n");
        for f in &self.folds {
            let _ = writeln!(out, "{},{},{}", f.fold, f.accuracy, f.mcc);
        }
        let _ = writeln!(out, "mean,{},{}", self.accuracy.0, self.mcc.0);
        let _ = writeln!(out, "std,{},{}", self.accuracy.1, self.mcc.1);
        out
    }
}

pub fn fold_plan(samples: &[SequenceSample], k: usize, unit: FoldUnit, seed: u64) -> Result<FoldPlan> {
    match unit {
        FoldUnit::Samples => kfold_plan(samples.len(), k, seed),
        FoldUnit::Episodes => {
            let groups: Vec<u32> = samples.iter().map(|s| s.episode_id).collect();
            kfold_plan_grouped(&groups, k, seed)
        }
    }
}

/// Splits training indices into (train, validate) at the fold unit.
fn validation_split(
    samples: &[SequenceSample],
    idx: &[usize],
    unit: FoldUnit,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 {
        return (idx.to_vec(), Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match unit {
        FoldUnit::Samples => {
            let mut shuffled = idx.to_vec();
            shuffled.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
            let train = shuffled.split_off(n_val);
            let (mut t, mut v) = (train, shuffled);
            t.sort_unstable();
            v.sort_unstable();
            (t, v)
        }
        FoldUnit::Episodes => {
            let mut eps: Vec<u32> = idx.iter().map(|&i| samples[i].episode_id).collect();
            eps.sort_unstable();
            eps.dedup();
            eps.shuffle(&mut rng);
            let n_val = ((eps.len() as f64 * fraction).round() as usize).min(eps.len().saturating_sub(1));
            let val: std::collections::HashSet<u32> = eps[..n_val].iter().copied().collect();
            idx.iter().partition(|&&i| !val.contains(&samples[i].episode_id))
        }
    }
}

/// Trains and tests one model per fold from the same initial parameters.
pub fn run_kfold(
    samples: &[SequenceSample],
    net: &NetworkConfig,
    train_cfg: &TrainConfig,
    kcfg: &KFoldConfig,
    mut progress: impl FnMut(&FoldResult),
) -> Result<KFoldReport> {
    if kcfg.k < 2 {
        return Err(Error::InvalidArgument("k-fold needs k ≥ 2".into()));
    }
    let plan = fold_plan(samples, kcfg.k, kcfg.unit, kcfg.seed)?;
    let init = NetworkParams::init(net, train_cfg.seed)?;
    let mut folds = Vec::with_capacity(kcfg.k);
    for fold in 0..kcfg.k {
        let test_idx = plan.test_indices(fold);
        let (train_idx, val_idx) = validation_split(
            samples,
            &plan.train_indices(fold),
            kcfg.unit,
            kcfg.val_fraction,
            mix64(kcfg.seed, fold as u64),
        );
        let pick = |ix: &[usize]| ix.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        let (train_set, val_set, test_set) = (pick(&train_idx), pick(&val_idx), pick(&test_idx));
        let (params, report) = train(init.clone(), net, train_cfg, &train_set, &val_set)?;
        let eval = evaluate(&params, net, &test_set, kcfg.threshold)?;
        let result = FoldResult {
            fold,
            accuracy: accuracy_of(&eval.counts)?,
            mcc: mcc_of(&eval.counts),
            counts: eval.counts,
            train_size: train_set.len(),
            val_size: val_set.len(),
            test_size: test_set.len(),
            final_iteration: report.final_iteration,
            stop_reason: report.stop_reason,
        };
        progress(&result);
        folds.push(result);
    }
    KFoldReport::from_folds(folds)
}
