//! Bottleneck diagnostics: the information-retrieval grid, gradient
//! attribution under an injected error, and error-correction step counting.

use std::fmt::Write as _;

use crate::autodiff::{Tape, Tensor};
use crate::data::{gen_random_retrieval, gen_sine_retrieval, Batch, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, Tier};
use crate::rng::Rng;
use crate::training::{self, mse_loss, TrainConfig};

/// A retrieval experiment is satisfied below this validation MSE.
pub const RETRIEVAL_PASS_MSE: f64 = 0.01;
/// Bottlenecked models on the random task stay above this.
pub const RETRIEVAL_FAIL_MSE: f64 = 0.05;

/// Which dataset a retrieval cell trains on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RetrievalTask {
    Sine(f64),
    Random,
}

impl std::fmt::Display for RetrievalTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RetrievalTask::Sine(freq) => write!(f, "f={freq}"),
            RetrievalTask::Random => write!(f, "random"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetrievalBudget {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub set_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker threads for independent grid cells.
    pub parallelism: usize,
}

impl Default for RetrievalBudget {
    fn default() -> Self {
        RetrievalBudget {
            train_pairs: 10_000,
            val_pairs: 1_000,
            set_size: 64,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            parallelism: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RetrievalResult {
    pub model: ModelKind,
    pub tier: Tier,
    pub task: String,
    pub val_mse: f64,
    pub pass: bool,
}

pub fn retrieval_dataset(task: RetrievalTask, n_pairs: usize, set_size: usize, seed: u64) -> Dataset {
    match task {
        RetrievalTask::Sine(f) => gen_sine_retrieval(f, n_pairs, set_size, seed),
        RetrievalTask::Random => gen_random_retrieval(n_pairs, set_size, seed),
    }
}

/// Position bounding box of a dataset, for latent-grid placement.
pub fn position_bounds(ds: &Dataset) -> [(f64, f64); 2] {
    let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for pair in &ds.pairs {
        for row in pair.x_c.iter().chain(pair.x_t.iter()) {
            for d in 0..2 {
                b[d].0 = b[d].0.min(row[d]);
                b[d].1 = b[d].1.max(row[d]);
            }
        }
    }
    b
}

/// Train one (model, task) cell to budget and record its final val MSE.
/// Training divergence is recorded as a NaN sentinel that fails the cell.
pub fn run_retrieval_cell(
    kind: ModelKind,
    tier: Tier,
    task: RetrievalTask,
    budget: &RetrievalBudget,
) -> RetrievalResult {
    let data_seed = budget.seed ^ 0x5EED;
    let train_set = retrieval_dataset(task, budget.train_pairs, budget.set_size, data_seed);
    let val_set = retrieval_dataset(
        task,
        budget.val_pairs,
        budget.set_size,
        data_seed + crate::data::VAL_SEED_OFFSET,
    );
    let val_mse = match train_retrieval_model(kind, tier, &train_set, &val_set, budget) {
        Ok((_, mse)) => mse,
        Err(_) => f64::NAN,
    };
    RetrievalResult {
        model: kind,
        tier,
        task: task.to_string(),
        val_mse,
        pass: val_mse < RETRIEVAL_PASS_MSE,
    }
}

/// Build a tier preset adapted to the dataset and train it with early stop
/// just under the pass threshold. Returns the model and final val MSE.
pub fn train_retrieval_model(
    kind: ModelKind,
    tier: Tier,
    train_set: &Dataset,
    val_set: &Dataset,
    budget: &RetrievalBudget,
) -> Result<(Model, f64)> {
    let mut model = Model::preset(kind, tier, train_set.dims, budget.seed)?;
    if kind == ModelKind::Gen {
        model.config.grid_bounds = Some(position_bounds(train_set));
        model = Model::new(model.config)?;
    }
    let cfg = TrainConfig {
        epochs: budget.epochs,
        batch_size: budget.batch_size,
        learning_rate: TrainConfig::default_lr(kind),
        seed: budget.seed,
        standardize: false,
        target_val_mse: Some(RETRIEVAL_PASS_MSE * 0.7),
        ..TrainConfig::default()
    };
    let result = training::train(&mut model, train_set, val_set, &cfg)?;
    Ok((model, result.final_val_mse))
}

/// The full grid, with independent cells running on worker threads.
pub fn run_retrieval_suite(
    models: &[(ModelKind, Tier)],
    f_values: &[f64],
    include_random: bool,
    budget: &RetrievalBudget,
) -> Vec<RetrievalResult> {
    let mut tasks: Vec<RetrievalTask> = f_values.iter().map(|&f| RetrievalTask::Sine(f)).collect();
    if include_random {
        tasks.push(RetrievalTask::Random);
    }
    let cells: Vec<(ModelKind, Tier, RetrievalTask)> = models
        .iter()
        .flat_map(|&(m, t)| tasks.iter().map(move |&task| (m, t, task)))
        .collect();
    let workers = budget.parallelism.max(1).min(cells.len().max(1));
    let mut results: Vec<Option<RetrievalResult>> = vec![None; cells.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_mutex = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let (kind, tier, task) = cells[i];
                let r = run_retrieval_cell(kind, tier, task, budget);
                results_mutex.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

pub fn retrieval_csv(results: &[RetrievalResult]) -> String {
    let mut out = String::from("model,tier,dataset,val_mse,pass\n");
    for r in results {
        let _ = writeln!(out, "{},{},{},{},{}", r.model, r.tier, r.task, r.val_mse, r.pass);
    }
    out
}

/// Plot-data companion: x = dataset, series = model, y = MSE.
pub fn retrieval_plot_csv(results: &[RetrievalResult]) -> String {
    let mut out = String::from("x,series,y\n");
    for r in results {
        let _ = writeln!(out, "{},{},{}", r.task, r.model, r.val_mse);
    }
    out
}

#[derive(Clone, Debug)]
pub struct AttributionResult {
    /// L2 gradient norm per latent of the inspected sample.
    pub norms: Vec<f64>,
    pub perturbed_target: usize,
    /// Latents with norm above `threshold_ratio * max_norm`.
    pub dominant: usize,
    pub max_norm: f64,
}

pub const ATTRIBUTION_THRESHOLD_RATIO: f64 = 1e-8;

/// Take the model's own output on `batch` as the target, add `epsilon` to
/// output channel 0 of one target of sample 0, backpropagate, and collect
/// per-latent gradient norms at the encoder output.
pub fn gradient_attribution(
    model: &Model,
    batch: &Batch,
    epsilon: f64,
    target_index: usize,
) -> Result<AttributionResult> {
    let tape = Tape::new();
    let (pred, _bound) = model.forward(&tape, batch)?;
    let latents = pred.latents.as_ref().ok_or_else(|| Error::UnsupportedKind {
        kind: model.kind().to_string(),
        what: "per-latent gradient attribution",
    })?;
    assert!(target_index < batch.nt, "target index out of range");

    let mut delta = vec![0.0; pred.y_hat.numel()];
    delta[target_index * batch.dims.o] = epsilon;
    let target = pred.y_hat.detach().add(&Tensor::new(delta, pred.y_hat.shape()));
    let loss = mse_loss(&pred.y_hat, &target, &batch.mask_t)?;
    tape.backward(&loss)?;

    let grads = latents.grad_or_zeros();
    let shape = latents.shape();
    let (n_latents, e) = (shape[1], shape[2]);
    let mut norms = Vec::with_capacity(n_latents);
    for l in 0..n_latents {
        let row = &grads[(l * e)..(l + 1) * e];
        norms.push(row.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let max_norm = norms.iter().cloned().fold(0.0, f64::max);
    let dominant = norms
        .iter()
        .filter(|&&n| max_norm > 0.0 && n > ATTRIBUTION_THRESHOLD_RATIO * max_norm)
        .count();
    Ok(AttributionResult {
        norms,
        perturbed_target: target_index,
        dominant,
        max_norm,
    })
}

pub fn attribution_csv(label: &str, result: &AttributionResult) -> String {
    let mut out = String::from("series,latent,grad_norm\n");
    for (i, n) in result.norms.iter().enumerate() {
        let _ = writeln!(out, "{label},{i},{n}");
    }
    out
}

#[derive(Clone, Debug)]
pub struct CorrectionResult {
    pub label: String,
    pub steps: usize,
    pub capped: bool,
    /// Percent increase in steps relative to a reference count.
    pub pct_vs_reference: Option<f64>,
}

/// Count full-batch plain gradient-descent updates until the model restores
/// its own (per-target perturbed) output to `tol` MSE on the batch.
pub fn error_correction_steps(
    model: &mut Model,
    batch: &Batch,
    epsilon: f64,
    lr: f64,
    tol: f64,
    cap: usize,
) -> Result<CorrectionResult> {
    let base = model.predict(batch)?;
    let mut delta = vec![0.0; base.len()];
    delta[0] = epsilon; // channel 0 of target 0, sample 0
    let target_values: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
    let target = Tensor::new(target_values, &[batch.size, batch.nt, batch.dims.o]);

    let mut steps = 0usize;
    loop {
        let tape = Tape::new();
        let (pred, bound) = model.forward(&tape, batch)?;
        let loss = mse_loss(&pred.y_hat, &target, &batch.mask_t)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NumericAbort { epoch: 0, batch: steps });
        }
        if value < tol {
            return Ok(CorrectionResult {
                label: String::new(),
                steps,
                capped: false,
                pct_vs_reference: None,
            });
        }
        if steps >= cap {
            return Ok(CorrectionResult {
                label: String::new(),
                steps,
                capped: true,
                pct_vs_reference: None,
            });
        }
        tape.backward(&loss)?;
        let grads = bound.grads();
        for (i, g) in grads.iter().enumerate() {
            let w = model.params.values_mut(i);
            for (wj, gj) in w.iter_mut().zip(g) {
                *wj -= lr * gj;
            }
        }
        steps += 1;
    }
}

pub fn correction_csv(results: &[CorrectionResult]) -> String {
    let mut out = String::from("model,steps,capped,pct_vs_msa\n");
    for r in results {
        let pct = r.pct_vs_reference.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.label, r.steps, r.capped, pct);
    }
    out
}

/// A deterministic validation batch for the perturbation experiments.
pub fn fixed_validation_batch(val_set: &Dataset, batch_size: usize, seed: u64) -> Result<Batch> {
    let norm = Normalization::identity(val_set.dims);
    let mut order: Vec<usize> = (0..val_set.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    order.truncate(batch_size.min(val_set.len()));
    crate::data::Batch::from_pairs(val_set, &order, &norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dims;
    use crate::data::make_batches;
    use crate::models::ModelConfig;

    fn tiny_batch(kind: ModelKind) -> (Model, Batch) {
        let dims = Dims { x: 2, i: 1, o: 1 };
        let ds = gen_sine_retrieval(1.0, 4, 6, 3);
        let model = Model::new(ModelConfig::tiny(kind, dims)).unwrap();
        let norm = Normalization::identity(dims);
        let batch = make_batches(&ds, 4, None, &norm).unwrap().remove(0);
        (model, batch)
    }

    #[test]
    fn zero_epsilon_attribution_is_silent() {
        let (model, batch) = tiny_batch(ModelKind::Msa);
        let r = gradient_attribution(&model, &batch, 0.0, 1).unwrap();
        assert!(r.norms.iter().all(|&n| n < 1e-10), "{:?}", r.norms);
    }

    #[test]
    fn msa_attribution_hits_exactly_one_latent() {
        let (model, batch) = tiny_batch(ModelKind::Msa);
        let r = gradient_attribution(&model, &batch, 10.0, 1).unwrap();
        assert_eq!(r.dominant, 1, "norms {:?}", r.norms);
        // the dominant latent is the perturbed target's token
        let argmax = r
            .norms
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, batch.nc + 1);
    }

    #[test]
    fn gen_attribution_spreads_over_nodes() {
        let (model, batch) = tiny_batch(ModelKind::Gen);
        let r = gradient_attribution(&model, &batch, 10.0, 1).unwrap();
        assert!(r.dominant >= 2, "norms {:?}", r.norms);
    }

    #[test]
    fn cnp_attribution_unsupported() {
        let (model, batch) = tiny_batch(ModelKind::Cnp);
        assert!(matches!(
            gradient_attribution(&model, &batch, 10.0, 1),
            Err(Error::UnsupportedKind { .. })
        ));
    }

    #[test]
    fn zero_epsilon_correction_takes_zero_steps() {
        let (mut model, batch) = tiny_batch(ModelKind::Msa);
        let r = error_correction_steps(&mut model, &batch, 0.0, 0.05, 1e-6, 100).unwrap();
        assert_eq!(r.steps, 0);
        assert!(!r.capped);
    }

    #[test]
    fn correction_cap_flags_result() {
        let (mut model, batch) = tiny_batch(ModelKind::Cnp);
        // lr 0 cannot make progress; the cap must trigger
        let r = error_correction_steps(&mut model, &batch, 5.0, 0.0, 1e-6, 3).unwrap();
        assert!(r.capped);
        assert_eq!(r.steps, 3);
    }

    #[test]
    fn fixed_batch_is_deterministic() {
        let ds = gen_sine_retrieval(1.0, 10, 6, 3);
        let a = fixed_validation_batch(&ds, 4, 9).unwrap();
        let b = fixed_validation_batch(&ds, 4, 9).unwrap();
        assert_eq!(a.pair_indices, b.pair_indices);
    }
}

/// Budget for pretraining a model on the smooth duplication task until its
/// validation MSE crosses a target.
#[derive(Clone, Debug)]
pub struct PretrainBudget {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub set_size: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
    pub epochs_cap: usize,
    pub target_val_mse: f64,
    pub seed: u64,
}

impl Default for PretrainBudget {
    fn default() -> Self {
        PretrainBudget {
            train_pairs: 2_000,
            val_pairs: 250,
            set_size: 64,
            batch_size: 64,
            learning_rate: None,
            epochs_cap: 400,
            target_val_mse: 1e-4,
            seed: 0,
        }
    }
}

/// Pretrain a model (tier preset, optional GEN grid override) on the f=1
/// duplication task. Returns the trained model and its final val MSE.
pub fn pretrain_sine_model(
    kind: ModelKind,
    tier: Tier,
    grid: Option<(usize, usize)>,
    f: f64,
    budget: &PretrainBudget,
) -> Result<(Model, f64)> {
    let data_seed = budget.seed ^ 0x9A7E;
    let train_set = gen_sine_retrieval(f, budget.train_pairs, budget.set_size, data_seed);
    let val_set = gen_sine_retrieval(
        f,
        budget.val_pairs,
        budget.set_size,
        data_seed + crate::data::VAL_SEED_OFFSET,
    );
    let mut model = Model::preset(kind, tier, train_set.dims, budget.seed)?;
    if let Some(g) = grid {
        model.config.grid = g;
    }
    if kind == ModelKind::Gen {
        model.config.grid_bounds = Some(position_bounds(&train_set));
    }
    let mut model = Model::new(model.config)?;
    let cfg = TrainConfig {
        epochs: budget.epochs_cap,
        batch_size: budget.batch_size,
        learning_rate: budget
            .learning_rate
            .unwrap_or_else(|| TrainConfig::default_lr(kind)),
        grad_clip: Some(1.0),
        seed: budget.seed,
        standardize: false,
        target_val_mse: Some(budget.target_val_mse),
        ..TrainConfig::default()
    };
    let result = training::train(&mut model, &train_set, &val_set, &cfg)?;
    Ok((model, result.final_val_mse))
}

/// The validation set matching [`pretrain_sine_model`]'s split layout.
pub fn pretrain_val_set(f: f64, budget: &PretrainBudget) -> Dataset {
    gen_sine_retrieval(
        f,
        budget.val_pairs,
        budget.set_size,
        (budget.seed ^ 0x9A7E) + crate::data::VAL_SEED_OFFSET,
    )
}
