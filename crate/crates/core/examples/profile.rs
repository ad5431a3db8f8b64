use std::time::Instant;
use scatterfield::autodiff::{Tape, Tensor};
use scatterfield::data::*;
use scatterfield::models::*;
use scatterfield::training::*;
use scatterfield::rng::Rng;

fn main() {
    let train_set = gen_sine_retrieval(1.0, 64, 64, 42);
    let norm = Normalization::identity(train_set.dims);
    let batch = &make_batches(&train_set, 32, None, &norm).unwrap()[0];
    let model = Model::preset(ModelKind::Msa, Tier::T20k, train_set.dims, 0).unwrap();

    // forward only
    let t0 = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        let tape = Tape::new();
        let (pred, _) = model.forward(&tape, batch).unwrap();
        std::hint::black_box(pred.y_hat.data()[0]);
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;

    // forward + loss + backward
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let (pred, bound) = model.forward(&tape, batch).unwrap();
        let loss = mse_loss(&pred.y_hat, &batch.y_t, &batch.mask_t).unwrap();
        tape.backward(&loss).unwrap();
        std::hint::black_box(bound.grads().len());
    }
    let full = t0.elapsed().as_secs_f64() / reps as f64;
    eprintln!("forward {:.1} ms   fwd+bwd {:.1} ms   (per batch of 32)", fwd * 1e3, full * 1e3);

    // raw exp throughput for context
    let mut rng = Rng::new(1);
    let xs: Vec<f64> = (0..2_000_000).map(|_| rng.normal()).collect();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += x.exp(); }
    std::hint::black_box(acc);
    eprintln!("2M exp: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);

    // raw tanh throughput (gelu uses tanh)
    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += x.tanh(); }
    std::hint::black_box(acc);
    eprintln!("2M tanh: {:.1} ms", t0.elapsed().as_secs_f64() * 1e3);

    // mm throughput: [4096x28]@[28x28]
    let a: Vec<f64> = (0..4096*28).map(|i| (i as f64 * 0.01).sin()).collect();
    let b: Vec<f64> = (0..28*28).map(|i| (i as f64 * 0.02).cos()).collect();
    let mut out = vec![0.0; 4096*28];
    let t0 = Instant::now();
    for _ in 0..50 {
        out.iter_mut().for_each(|v| *v = 0.0);
        scatterfield::autodiff::kernels::mm(&a, &b, &mut out, 4096, 28, 28, false, false);
    }
    let el = t0.elapsed().as_secs_f64() / 50.0;
    let gf = (4096.0*28.0*28.0*2.0) / el / 1e9;
    eprintln!("mm 4096x28x28: {:.2} ms  ({:.1} GFLOP/s)", el*1e3, gf);
}
