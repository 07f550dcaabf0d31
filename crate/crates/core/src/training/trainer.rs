use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::dataset::Dataset;
use super::metrics::{evaluate, evaluate_horizons, Metrics, MetricsReport};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{forward, BoundParams, GraphContext, ModelParams};

/// Windows per forward pass when only predicting.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    /// Drives batch shuffling; model initialization has its own seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 12,
            patience: 10,
            max_epochs: 50,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.learning_rate) || !pos(self.adam_eps) {
            return Err(Error::InvalidArgument("learning_rate and adam_eps must be positive".into()));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, patience and max_epochs must be at least 1".into(),
            ));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidArgument("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas[0],
            beta2: self.adam_betas[1],
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean masked MAE of the epoch's batches, in normalized units. Epoch 0
    /// holds the loss of the initial parameters over the whole training set.
    pub train_mae: f64,
    /// Validation MAE in original units.
    pub val_mae: f64,
    pub lr: f64,
    /// Wall-clock time of the epoch's optimization (0 for epoch 0).
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    /// `epoch,train_mae,val_mae,lr`; timings live in [`History::timing_csv`]
    /// so this file is reproducible byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mae,val_mae,lr\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{}", r.epoch, r.train_mae, r.val_mae, r.lr).unwrap();
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for r in &self.records {
            writeln!(out, "{},{}", r.epoch, r.seconds).unwrap();
        }
        out
    }

    pub fn initial_val_mae(&self) -> Option<f64> {
        self.records.first().map(|r| r.val_mae)
    }

    pub fn best_val_mae(&self) -> Option<f64> {
        self.records.get(self.best_epoch).map(|r| r.val_mae)
    }

    /// Per-epoch optimization times, epoch 0 excluded.
    pub fn epoch_seconds(&self) -> Vec<f64> {
        self.records.iter().skip(1).map(|r| r.seconds).collect()
    }
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub history: History,
}

/// `mean(|pred − target|)` over observed entries, recorded on `tape`.
pub fn masked_mae(tape: &mut Tape, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
    let count = mask.data().iter().filter(|&&m| m > 0.0).count();
    if count == 0 {
        return Err(Error::InvalidArgument("batch has no observed targets".into()));
    }
    let y = tape.constant(target.clone());
    let m = tape.constant(mask.clone());
    let diff = tape.sub(pred, y)?;
    let abs = tape.abs(diff);
    let masked = tape.mul(abs, m)?;
    let total = tape.sum(masked);
    Ok(tape.scale(total, 1.0 / count as f64))
}

/// Normalized-space predictions `[W, H, N, F]` for every window.
pub fn predict_dataset(params: &ModelParams, ctx: &GraphContext, ds: &Dataset) -> Result<Tensor> {
    let mut out = Vec::with_capacity(ds.targets.numel());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _, _) = ds.batch(chunk)?;
        let mut tape = Tape::new();
        let bp = BoundParams::bind(params, &mut tape, false);
        let y = forward(&mut tape, &bp, &x, ctx)?;
        out.extend_from_slice(tape.value(y).data());
    }
    let mut shape = ds.targets.shape().to_vec();
    shape[3] = params.config().f_out;
    Tensor::new(shape, out)
}

fn denormalize(ds: &Dataset, mut t: Tensor) -> Result<Tensor> {
    ds.node_stats.inverse_zscore(t.data_mut())?;
    Ok(t)
}

fn check_dataset(params: &ModelParams, ctx: &GraphContext, ds: &Dataset, name: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} dataset is empty")));
    }
    let cfg = params.config();
    if ds.window() != cfg.window
        || ds.horizon() != cfg.horizon
        || ds.num_nodes() != ctx.num_nodes()
        || ds.num_features() != cfg.f_in
        || cfg.f_out != cfg.f_in
    {
        return Err(Error::Shape(format!(
            "{name} windows ({}, {}, {}, {}) do not match the model (T={}, H={}, N={}, F_in={}, F_out={})",
            ds.window(),
            ds.horizon(),
            ds.num_nodes(),
            ds.num_features(),
            cfg.window,
            cfg.horizon,
            ctx.num_nodes(),
            cfg.f_in,
            cfg.f_out
        )));
    }
    Ok(())
}

/// Metrics of `params` on `ds` in original units.
pub fn evaluate_dataset(params: &ModelParams, g: &Graph, ds: &Dataset) -> Result<MetricsReport> {
    let ctx = GraphContext::new(g);
    check_dataset(params, &ctx, ds, "evaluation")?;
    let preds = denormalize(ds, predict_dataset(params, &ctx, ds)?)?;
    let targets = denormalize(ds, ds.targets.clone())?;
    evaluate_horizons(&preds, &targets, &ds.mask)
}

fn val_mae(params: &ModelParams, ctx: &GraphContext, ds: &Dataset) -> Result<Metrics> {
    let preds = denormalize(ds, predict_dataset(params, ctx, ds)?)?;
    let targets = denormalize(ds, ds.targets.clone())?;
    evaluate(preds.data(), targets.data(), &ds.mask)
}

fn normalized_mae(params: &ModelParams, ctx: &GraphContext, ds: &Dataset) -> Result<f64> {
    let preds = predict_dataset(params, ctx, ds)?;
    Ok(evaluate(preds.data(), ds.targets.data(), &ds.mask)?.mae)
}

/// Mini-batch Adam on the masked MAE with early stopping on validation MAE.
///
/// Epoch 0 records the untrained model. Training stops after `patience`
/// epochs without a strict improvement, or at `max_epochs`, and returns the
/// best validation parameters.
pub fn train(params: ModelParams, g: &Graph, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ctx = GraphContext::new(g);
    check_dataset(&params, &ctx, train_ds, "training")?;
    check_dataset(&params, &ctx, val_ds, "validation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = cfg.adam();
    let mut state = AdamState::new(params.tensors());
    let mut current = params;
    let mut best = current.clone();
    let mut history = History::default();
    let mut best_val = val_mae(&current, &ctx, val_ds)?.mae;
    history.records.push(EpochRecord {
        epoch: 0,
        train_mae: normalized_mae(&current, &ctx, train_ds)?,
        val_mae: best_val,
        lr: cfg.learning_rate,
        seconds: 0.0,
    });
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y, m) = train_ds.batch(chunk)?;
            if !m.data().iter().any(|&v| v > 0.0) {
                continue;
            }
            let mut tape = Tape::new();
            let bp = BoundParams::bind(&current, &mut tape, true);
            let vars = bp.vars().to_vec();
            let pred = forward(&mut tape, &bp, &x, &ctx)?;
            let loss = masked_mae(&mut tape, pred, &y, &m)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v).expect("parameter gradient")).collect();
            adam_step(current.tensors_mut(), &grads, &mut state, &adam)?;
            loss_sum += value;
            batches += 1;
        }
        let seconds = start.elapsed().as_secs_f64();
        let val = val_mae(&current, &ctx, val_ds)?.mae;
        if !val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        history.records.push(EpochRecord {
            epoch,
            train_mae: loss_sum / batches.max(1) as f64,
            val_mae: val,
            lr: cfg.learning_rate,
            seconds,
        });
        if val < best_val {
            best_val = val;
            best = current.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best, history })
}
