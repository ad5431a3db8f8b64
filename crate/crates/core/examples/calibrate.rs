// scratch: throughput + convergence probe for budget calibration
use std::time::Instant;
use scatterfield::data::*;
use scatterfield::models::*;
use scatterfield::training::*;
use scatterfield::diagnostics::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind: ModelKind = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(ModelKind::Msa);
    let task = args.get(2).cloned().unwrap_or("f1".into());
    let pairs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1500);
    let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10);

    let t = match task.as_str() {
        "random" => RetrievalTask::Random,
        s => RetrievalTask::Sine(s.trim_start_matches('f').parse().unwrap()),
    };
    let train_set = retrieval_dataset(t, pairs, 64, 42);
    let val_set = retrieval_dataset(t, pairs / 5, 64, 42 + VAL_SEED_OFFSET);

    let mut model = Model::preset(kind, Tier::T20k, train_set.dims, 0).unwrap();
    if kind == ModelKind::Gen {
        model.config.grid_bounds = Some(position_bounds(&train_set));
        model = Model::new(model.config).unwrap();
    }
    eprintln!("{kind} params: {}", model.n_params());
    let cfg = TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: TrainConfig::default_lr(kind),
        seed: 0,
        standardize: false,
        target_val_mse: Some(0.007),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let res = train(&mut model, &train_set, &val_set, &cfg).unwrap();
    for r in &res.history {
        eprintln!("epoch {:3}  train {:.5}  val {:.5}  t={:.1}s", r.epoch, r.train_mse, r.val_mse, r.wall_s);
    }
    eprintln!("total {:.1}s  final val {:.5}", start.elapsed().as_secs_f64(), res.final_val_mse);
}
