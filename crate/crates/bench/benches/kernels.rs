use criterion::{criterion_group, criterion_main, Criterion};

use scatterfield::autodiff::kernels::mm;
use scatterfield::autodiff::Tensor;

fn bench_mm(c: &mut Criterion) {
    let a: Vec<f64> = (0..4096 * 28).map(|i| (i as f64 * 0.01).sin()).collect();
    let b: Vec<f64> = (0..28 * 28).map(|i| (i as f64 * 0.02).cos()).collect();
    let mut out = vec![0.0; 4096 * 28];
    c.bench_function("mm 4096x28x28", |bench| {
        bench.iter(|| {
            out.iter_mut().for_each(|v| *v = 0.0);
            mm(&a, &b, &mut out, 4096, 28, 28, false, false);
            std::hint::black_box(out[0])
        })
    });

    let q: Vec<f64> = (0..128 * 7).map(|i| (i as f64 * 0.03).sin()).collect();
    let mut scores = vec![0.0; 128 * 128];
    c.bench_function("mm scores 128x7x128 nt", |bench| {
        bench.iter(|| {
            scores.iter_mut().for_each(|v| *v = 0.0);
            mm(&q, &q, &mut scores, 128, 7, 128, false, true);
            std::hint::black_box(scores[0])
        })
    });
}

fn bench_softmax(c: &mut Criterion) {
    let x = Tensor::new(
        (0..32 * 128 * 128).map(|i| (i as f64 * 0.001).sin()).collect(),
        &[32, 128, 128],
    );
    c.bench_function("softmax [32,128,128]", |bench| {
        bench.iter(|| std::hint::black_box(x.softmax(2).data()[0]))
    });
}

fn bench_gelu(c: &mut Criterion) {
    let x = Tensor::new(
        (0..32 * 128 * 56).map(|i| (i as f64 * 0.001).sin()).collect(),
        &[32, 128, 56],
    );
    c.bench_function("gelu [32,128,56]", |bench| {
        bench.iter(|| std::hint::black_box(x.gelu().data()[0]))
    });
}

criterion_group!(benches, bench_mm, bench_softmax, bench_gelu);
criterion_main!(benches);
