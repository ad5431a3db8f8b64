use criterion::{criterion_group, criterion_main, Criterion};

use scatterfield::data::{gen_sine_retrieval, make_batches, Normalization};
use scatterfield::data::poisson::{solve_poisson, Source};
use scatterfield::models::{Model, ModelKind, Tier};

fn bench_model_forwards(c: &mut Criterion) {
    let ds = gen_sine_retrieval(1.0, 32, 64, 42);
    let norm = Normalization::identity(ds.dims);
    let batch = &make_batches(&ds, 32, None, &norm).unwrap()[0];
    for kind in [ModelKind::Msa, ModelKind::Tfs, ModelKind::Gen, ModelKind::Cnp, ModelKind::Gka] {
        let mut model = Model::preset(kind, Tier::T20k, ds.dims, 0).unwrap();
        if kind == ModelKind::Gen {
            model.config.grid_bounds = Some([(-4.0, 4.0), (-4.0, 4.0)]);
            model = Model::new(model.config).unwrap();
        }
        c.bench_function(&format!("{kind} forward b32"), |bench| {
            bench.iter(|| std::hint::black_box(model.predict(batch).unwrap()[0]))
        });
    }
}

fn bench_poisson(c: &mut Criterion) {
    let sources = vec![
        Source { ix: 20, iy: 30, value: 2000.0 },
        Source { ix: 44, iy: 12, value: -1500.0 },
    ];
    c.bench_function("poisson solve 64x64", |bench| {
        bench.iter(|| {
            let sol = solve_poisson(64, &sources, 0.3, 1e-8).unwrap();
            std::hint::black_box(sol.values[100])
        })
    });
}

criterion_group!(benches, bench_model_forwards, bench_poisson);
criterion_main!(benches);
