//! Deterministic optimization: loss, Adam, training/eval loops.
//!
//! The determinism contract: identical config and seed give bitwise
//! identical parameters, epoch histories and checkpoints. Everything that
//! consumes randomness derives its stream from the run seed, reductions run
//! in fixed order, and no wall-clock value feeds back into the math.

use std::time::Instant;

use crate::autodiff::{Tape, Tensor};
use crate::data::{make_batches, Batch, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, hull_inside_fraction, MetricReport};
use crate::models::Model;
use crate::params::ParamSet;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Standardize values with the dataset statistics during training.
    pub standardize: bool,
    /// Stop once validation MSE (original units) falls below this.
    pub target_val_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            seed: 0,
            standardize: true,
            target_val_mse: None,
        }
    }
}

impl TrainConfig {
    /// Default learning rate per model family: attention models train at
    /// 3e-4, the aggregation-based models at 1e-3.
    pub fn default_lr(kind: crate::models::ModelKind) -> f64 {
        use crate::models::ModelKind::*;
        match kind {
            Msa | Tfs | Per => 3e-4,
            Gen | Gng | Cnp | Gka => 1e-3,
        }
    }
}

/// Masked mean squared error over valid target slots and channels.
pub fn mse_loss(pred: &Tensor, y_t: &Tensor, mask_t: &Tensor) -> Result<Tensor> {
    assert_eq!(pred.shape(), y_t.shape(), "loss: prediction/target shapes");
    let diff = pred.sub(y_t);
    let sq = diff.mul(&diff);
    let b = mask_t.shape()[0];
    let nt = mask_t.shape()[1];
    sq.masked_mean_all(&mask_t.reshape(&[b, nt, 1]))
}

/// Adam with bias correction; state kept per parameter entry.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.entries().iter().map(|e| vec![0.0; e.value.len()]).collect(),
            v: params.entries().iter().map(|e| vec![0.0; e.value.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count");
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: params.entry(i).name.clone(),
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let w = params.values_mut(i);
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    pub final_val_mse: f64,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn effective_norm(dataset: &Dataset, standardize: bool) -> Normalization {
    if standardize {
        dataset.normalization.clone()
    } else {
        Normalization::identity(dataset.dims)
    }
}

/// Squared error of a prediction buffer against a batch, in original units.
fn batch_sq_error(pred: &[f64], batch: &Batch, norm: &Normalization) -> (f64, usize) {
    let o = batch.dims.o;
    let mut sum = 0.0;
    let mut count = 0usize;
    for bi in 0..batch.size {
        for t in 0..batch.nt {
            if batch.mask_t.data()[bi * batch.nt + t] == 0.0 {
                continue;
            }
            for c in 0..o {
                let idx = (bi * batch.nt + t) * o + c;
                let p = pred[idx] * norm.y_t_std[c] + norm.y_t_mean[c];
                let y = batch.y_t.data()[idx] * norm.y_t_std[c] + norm.y_t_mean[c];
                sum += (p - y) * (p - y);
                count += 1;
            }
        }
    }
    (sum, count)
}

/// Mean squared error over a dataset in original units, fixed batch order.
pub fn eval_mse(model: &Model, dataset: &Dataset, batch_size: usize, standardize: bool) -> Result<f64> {
    let norm = effective_norm(dataset, standardize);
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in make_batches(dataset, batch_size, None, &norm)? {
        let pred = model.predict(&batch)?;
        let (s, c) = batch_sq_error(&pred, &batch, &norm);
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::EmptySetReduction);
    }
    Ok(sum / count as f64)
}

/// Full-dataset metric suite in original units. For 2-d outputs the hull
/// statistic uses each pair's own context-value hull.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize, standardize: bool) -> Result<MetricReport> {
    let norm = effective_norm(dataset, standardize);
    let o = dataset.dims.o;
    let mut preds: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut hull_inside = 0usize;
    let mut hull_total = 0usize;
    for batch in make_batches(dataset, batch_size, None, &norm)? {
        let pred = model.predict(&batch)?;
        for bi in 0..batch.size {
            let mut pair_preds: Vec<(f64, f64)> = Vec::new();
            for t in 0..batch.nt {
                if batch.mask_t.data()[bi * batch.nt + t] == 0.0 {
                    continue;
                }
                for c in 0..o {
                    let idx = (bi * batch.nt + t) * o + c;
                    preds.push(pred[idx] * norm.y_t_std[c] + norm.y_t_mean[c]);
                    targets.push(batch.y_t.data()[idx] * norm.y_t_std[c] + norm.y_t_mean[c]);
                }
                if o == 2 {
                    let idx = (bi * batch.nt + t) * o;
                    pair_preds.push((
                        pred[idx] * norm.y_t_std[0] + norm.y_t_mean[0],
                        pred[idx + 1] * norm.y_t_std[1] + norm.y_t_mean[1],
                    ));
                }
            }
            if o == 2 && dataset.dims.i == 2 {
                let pair = &dataset.pairs[batch.pair_indices[bi]];
                let ctx: Vec<(f64, f64)> = pair.y_c.iter().map(|r| (r[0], r[1])).collect();
                hull_total += pair_preds.len();
                hull_inside += (hull_inside_fraction(&ctx, &pair_preds) * pair_preds.len() as f64)
                    .round() as usize;
            }
        }
    }
    let n = preds.len() / o;
    let mut report = compute_metrics(&preds, &targets, n, o);
    if hull_total > 0 {
        report.hull_inside_fraction = Some(hull_inside as f64 / hull_total as f64);
    }
    Ok(report)
}

/// Train `model` in place. Per-epoch records carry the running training MSE
/// and an end-of-epoch validation MSE, both in original units.
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let norm = effective_norm(train_set, cfg.standardize);
    let mut adam = Adam::new(
        &model.params,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stopped_early = false;
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        let shuffle = Rng::new(cfg.seed).derive(epoch as u64).next_u64();
        let batches = make_batches(train_set, cfg.batch_size, Some(shuffle), &norm)?;
        let mut sq_sum = 0.0;
        let mut sq_count = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let tape = Tape::new();
            let (pred, bound) = model.forward(&tape, batch)?;
            let loss = mse_loss(&pred.y_hat, &batch.y_t, &batch.mask_t)?;
            if !loss.item().is_finite() {
                return Err(Error::NumericAbort { epoch, batch: bi });
            }
            let (s, c) = batch_sq_error(pred.y_hat.data(), batch, &norm);
            sq_sum += s;
            sq_count += c;
            tape.backward(&loss)?;
            let mut grads = bound.grads();
            if let Some(clip) = cfg.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            adam.step(&mut model.params, &grads)?;
        }
        let train_mse = sq_sum / sq_count.max(1) as f64;
        let val_mse = eval_mse(model, val_set, cfg.batch_size, cfg.standardize)?;
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            wall_s: started.elapsed().as_secs_f64(),
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
        }
        if cfg.target_val_mse.is_some_and(|t| val_mse < t) {
            stopped_early = true;
            break;
        }
    }
    let final_val = history.last().map(|r| r.val_mse).unwrap_or(f64::INFINITY);
    Ok(TrainResult {
        history,
        final_val_mse: final_val,
        best_val_mse: best_val,
        best_epoch,
        stopped_early,
    })
}

/// Epoch history as CSV text (epoch, train_mse, val_mse, wall_s).
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse,wall_s\n");
    for r in history {
        out.push_str(&format!("{},{},{},{:.3}\n", r.epoch, r.train_mse, r.val_mse, r.wall_s));
    }
    out
}
