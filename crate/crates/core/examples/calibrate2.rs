// lr/budget sweep for the retrieval task
use scatterfield::data::*;
use scatterfield::models::*;
use scatterfield::training::*;
use scatterfield::diagnostics::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind: ModelKind = args[1].parse().unwrap();
    let act = std::env::var("CAL_ACT").unwrap_or_default();
    let task = match args[2].as_str() {
        "random" => RetrievalTask::Random,
        s => RetrievalTask::Sine(s.trim_start_matches('f').parse().unwrap()),
    };
    let pairs: usize = args[3].parse().unwrap();
    let epochs: usize = args[4].parse().unwrap();
    let lr: f64 = args[5].parse().unwrap();
    let batch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(32);

    let train_set = retrieval_dataset(task, pairs, 64, 42);
    let val_set = retrieval_dataset(task, 250, 64, 42 + VAL_SEED_OFFSET);
    let mut model = Model::preset(kind, Tier::T20k, train_set.dims, 0).unwrap();
    if kind == ModelKind::Gen {
        model.config.grid_bounds = Some(position_bounds(&train_set));
    }
    if act == "gelu" {
        model.config.activation = scatterfield::layers::Activation::Gelu;
    }
    model = Model::new(model.config).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        seed: 0,
        standardize: false,
        target_val_mse: Some(0.007),
        grad_clip: Some(1.0),
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let res = train(&mut model, &train_set, &val_set, &cfg).unwrap();
    for r in res.history.iter().step_by(2).chain(res.history.last()) {
        eprintln!("  epoch {:3}  train {:.5}  val {:.5}  {:.0}s", r.epoch, r.train_mse, r.val_mse, r.wall_s);
    }
    eprintln!("{kind} {task:?} lr={lr} -> final val {:.5} in {:.0}s ({} epochs)", res.final_val_mse, t0.elapsed().as_secs_f64(), res.history.len());
}
