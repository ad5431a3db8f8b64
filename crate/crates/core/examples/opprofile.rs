use scatterfield::autodiff::{tape_profile_report, tape_profile_start, Tape};
use scatterfield::data::*;
use scatterfield::models::*;
use scatterfield::training::*;

fn main() {
    let train_set = gen_sine_retrieval(1.0, 64, 64, 42);
    let norm = Normalization::identity(train_set.dims);
    let batch = &make_batches(&train_set, 32, None, &norm).unwrap()[0];
    let model = Model::preset(ModelKind::Msa, Tier::T20k, train_set.dims, 0).unwrap();
    // warm up
    let tape = Tape::new();
    let _ = model.forward(&tape, batch).unwrap();
    tape_profile_start();
    for _ in 0..5 {
        let tape = Tape::new();
        let (pred, bound) = model.forward(&tape, batch).unwrap();
        let loss = mse_loss(&pred.y_hat, &batch.y_t, &batch.mask_t).unwrap();
        tape.backward(&loss).unwrap();
        std::hint::black_box(bound.grads().len());
    }
    eprintln!("{}", tape_profile_report());
}
