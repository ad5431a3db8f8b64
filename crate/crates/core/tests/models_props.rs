//! Cross-cutting model properties: permutation symmetry, padding
//! transparency and the kernel baseline's hull confinement.

use scatterfield::data::{
    make_batches, Batch, ContextTargetPair, Dataset, Dims, Normalization,
};
use scatterfield::metrics::hull_inside_fraction;
use scatterfield::models::{Model, ModelConfig, ModelKind};
use scatterfield::rng::Rng;

fn random_pair(rng: &mut Rng, dims: Dims, nc: usize, nt: usize) -> ContextTargetPair {
    ContextTargetPair {
        x_c: (0..nc).map(|_| (0..dims.x).map(|_| rng.normal()).collect()).collect(),
        y_c: (0..nc).map(|_| (0..dims.i).map(|_| rng.normal()).collect()).collect(),
        x_t: (0..nt).map(|_| (0..dims.x).map(|_| rng.normal()).collect()).collect(),
        y_t: (0..nt).map(|_| (0..dims.o).map(|_| rng.normal()).collect()).collect(),
    }
}

fn batch_of(pairs: Vec<ContextTargetPair>, dims: Dims, size: usize) -> Batch {
    let ds = Dataset::new(dims, pairs);
    let norm = Normalization::identity(dims);
    make_batches(&ds, size, None, &norm).unwrap().remove(0)
}

fn tiny_model(kind: ModelKind, dims: Dims) -> Model {
    let mut cfg = ModelConfig::tiny(kind, dims);
    cfg.grid_bounds = Some([(-3.0, 3.0), (-3.0, 3.0)]);
    Model::new(cfg).unwrap()
}

fn permute_rows(rows: &[Vec<f64>], perm: &[usize]) -> Vec<Vec<f64>> {
    perm.iter().map(|&i| rows[i].clone()).collect()
}

#[test]
fn context_permutation_leaves_predictions_unchanged() {
    let dims = Dims { x: 2, i: 1, o: 1 };
    let mut rng = Rng::new(3);
    let pair = random_pair(&mut rng, dims, 6, 4);
    let perm = [5usize, 2, 0, 4, 1, 3];
    let mut permuted = pair.clone();
    permuted.x_c = permute_rows(&pair.x_c, &perm);
    permuted.y_c = permute_rows(&pair.y_c, &perm);

    for kind in ModelKind::all() {
        let model = tiny_model(kind, dims);
        let a = model.predict(&batch_of(vec![pair.clone()], dims, 1)).unwrap();
        let b = model.predict(&batch_of(vec![permuted.clone()], dims, 1)).unwrap();
        let tol = if kind == ModelKind::Cnp { 1e-12 } else { 1e-8 };
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= tol, "{kind}: {x} vs {y}");
        }
    }
}

#[test]
fn target_permutation_permutes_predictions() {
    let dims = Dims { x: 2, i: 1, o: 1 };
    let mut rng = Rng::new(4);
    let pair = random_pair(&mut rng, dims, 5, 6);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let mut permuted = pair.clone();
    permuted.x_t = permute_rows(&pair.x_t, &perm);
    permuted.y_t = permute_rows(&pair.y_t, &perm);

    for kind in ModelKind::all() {
        let model = tiny_model(kind, dims);
        let a = model.predict(&batch_of(vec![pair.clone()], dims, 1)).unwrap();
        let b = model.predict(&batch_of(vec![permuted.clone()], dims, 1)).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!(
                (b[new] - a[old]).abs() <= 1e-8,
                "{kind}: slot {new} expected {} got {}",
                a[old],
                b[new]
            );
        }
    }
}

#[test]
fn padding_never_changes_predictions() {
    // dual-run oracle: a padded batch of variable-length pairs must agree
    // with per-sample runs
    let dims = Dims { x: 2, i: 1, o: 1 };
    let mut rng = Rng::new(5);
    let pairs = vec![
        random_pair(&mut rng, dims, 6, 5),
        random_pair(&mut rng, dims, 3, 2),
        random_pair(&mut rng, dims, 5, 7),
    ];
    for kind in ModelKind::all() {
        let model = tiny_model(kind, dims);
        let batched = batch_of(pairs.clone(), dims, 3);
        let joint = model.predict(&batched).unwrap();
        for (bi, pair) in pairs.iter().enumerate() {
            let single = model.predict(&batch_of(vec![pair.clone()], dims, 1)).unwrap();
            let nt = pair.n_targets();
            for t in 0..nt {
                let a = joint[(bi * batched.nt + t) * dims.o];
                let b = single[t * dims.o];
                assert!(
                    (a - b).abs() <= 1e-8,
                    "{kind}: pair {bi} target {t}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn gka_predictions_confined_to_context_value_hull() {
    let dims = Dims { x: 3, i: 2, o: 2 };
    let mut rng = Rng::new(6);
    let model = tiny_model(ModelKind::Gka, dims);
    for trial in 0..20 {
        let pair = random_pair(&mut rng, dims, 8, 12);
        let batch = batch_of(vec![pair.clone()], dims, 1);
        let pred = model.predict(&batch).unwrap();
        let ctx: Vec<(f64, f64)> = pair.y_c.iter().map(|r| (r[0], r[1])).collect();
        let preds: Vec<(f64, f64)> = pred.chunks(2).map(|p| (p[0], p[1])).collect();
        assert_eq!(
            hull_inside_fraction(&ctx, &preds),
            1.0,
            "trial {trial}: kernel average escaped the hull"
        );
    }
}

#[test]
fn distance_conditioned_tfs_differs_from_cross_attention() {
    let dims = Dims { x: 2, i: 1, o: 1 };
    let mut rng = Rng::new(7);
    let pair = random_pair(&mut rng, dims, 5, 4);
    let batch = batch_of(vec![pair], dims, 1);

    let cross = tiny_model(ModelKind::Tfs, dims);
    let mut cfg = ModelConfig::tiny(ModelKind::Tfs, dims);
    cfg.conditioning = scatterfield::models::Conditioning::DistanceBased;
    let dist = Model::new(cfg).unwrap();
    let a = cross.predict(&batch).unwrap();
    let b = dist.predict(&batch).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
}
