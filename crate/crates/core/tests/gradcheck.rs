//! Finite-difference gradient checks for every differentiable operation,
//! layer and model. Central differences with h = 1e-4 against reverse-mode
//! gradients, relative tolerance 1e-4 (absolute below unit magnitude).

use scatterfield::autodiff::check::gradcheck;
use scatterfield::autodiff::{concat, Tape, Tensor};
use scatterfield::data::{make_batches, Batch, ContextTargetPair, Dataset, Dims, Normalization};
use scatterfield::encoding::{EncodingScheme, SchemeVariant};
use scatterfield::layers::{
    Activation, AttentionSpec, MessagePassing, Mlp, MlpSpec, MultiHeadAttention, NormPlacement,
    PerceiverBlock, TransformerDecoder, TransformerEncoder,
};
use scatterfield::models::{Conditioning, Model, ModelConfig, ModelKind};
use scatterfield::params::ParamSet;
use scatterfield::rng::Rng;
use scatterfield::training::mse_loss;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Inputs kept away from relu's kink.
fn randn_offset(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.normal();
            if v.abs() < 0.05 {
                v + 0.2
            } else {
                v
            }
        })
        .collect()
}

#[test]
fn elementwise_ops() {
    let mut rng = Rng::new(1);
    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 6);
    let err = gradcheck(
        |_t, l| l[0].mul(&l[1]).add(&l[0].sub(&l[1])).sum_all(),
        &[(vec![2, 3], a.clone()), (vec![2, 3], b)],
        H,
    );
    assert!(err < TOL, "add/sub/mul err {err}");

    let bias = randn(&mut rng, 3);
    let err = gradcheck(
        |_t, l| l[0].add(&l[1]).mul(&l[0]).sum_all(),
        &[(vec![2, 3], a.clone()), (vec![3], bias)],
        H,
    );
    assert!(err < TOL, "broadcast err {err}");

    let err = gradcheck(
        |_t, l| l[0].relu().sum_all(),
        &[(vec![6], randn_offset(&mut rng, 6))],
        H,
    );
    assert!(err < TOL, "relu err {err}");

    let err = gradcheck(|_t, l| l[0].gelu().mul(&l[0]).sum_all(), &[(vec![6], a)], H);
    assert!(err < TOL, "gelu err {err}");
}

#[test]
fn matmul_all_orientations() {
    let mut rng = Rng::new(2);
    // weighted sums so the scalar depends on every entry
    let w1 = randn(&mut rng, 15);
    let wt = Tensor::new(w1, &[3, 5]);
    let a = randn(&mut rng, 12);
    let b = randn(&mut rng, 20);
    let err = gradcheck(
        |_t, l| l[0].matmul(&l[1]).mul(&wt).sum_all(),
        &[(vec![3, 4], a.clone()), (vec![4, 5], b.clone())],
        H,
    );
    assert!(err < TOL, "nn err {err}");

    let err = gradcheck(
        |_t, l| l[0].matmul_nt(&l[1]).sum_all(),
        &[(vec![3, 4], a.clone()), (vec![5, 4], b.clone())],
        H,
    );
    assert!(err < TOL, "nt err {err}");

    let err = gradcheck(
        |_t, l| l[0].matmul_tn(&l[1]).sum_all(),
        &[(vec![4, 3], a.clone()), (vec![4, 5], b.clone())],
        H,
    );
    assert!(err < TOL, "tn err {err}");

    // batched with broadcast weight
    let batched = randn(&mut rng, 2 * 3 * 4);
    let weight = randn(&mut rng, 4 * 2);
    let err = gradcheck(
        |_t, l| l[0].matmul(&l[1]).sum_all(),
        &[(vec![2, 3, 4], batched), (vec![4, 2], weight)],
        H,
    );
    assert!(err < TOL, "batched err {err}");

    // backward of matmul against finite differences on 3x4 * 4x2
    let a34 = randn(&mut rng, 12);
    let b42 = randn(&mut rng, 8);
    let err = gradcheck(
        |_t, l| l[0].matmul(&l[1]).mul(&l[0].matmul(&l[1])).sum_all(),
        &[(vec![3, 4], a34), (vec![4, 2], b42)],
        H,
    );
    assert!(err < 1e-6, "3x4*4x2 err {err}");
}

#[test]
fn softmax_reduce_layernorm() {
    let mut rng = Rng::new(3);
    let x = randn(&mut rng, 12);
    let w = Tensor::new(randn(&mut rng, 12), &[3, 4]);
    let err = gradcheck(
        |_t, l| l[0].softmax(1).mul(&w).sum_all(),
        &[(vec![3, 4], x.clone())],
        H,
    );
    assert!(err < TOL, "softmax err {err}");

    let mask = Tensor::new(vec![1.0, 1.0, 0.0, 1.0], &[4]);
    let w2 = Tensor::new(randn(&mut rng, 12), &[3, 4]);
    let err = gradcheck(
        |_t, l| l[0].masked_softmax(1, &mask).unwrap().mul(&w2).sum_all(),
        &[(vec![3, 4], x.clone())],
        H,
    );
    assert!(err < TOL, "masked softmax err {err}");

    let err = gradcheck(
        |_t, l| l[0].mean_axis(0).mul(&l[0].sum_axis(1).mean_axis(0).reshape(&[1])).sum_all(),
        &[(vec![3, 4], x.clone())],
        H,
    );
    assert!(err < TOL, "reduce err {err}");

    let m2 = Tensor::new(vec![1.0, 0.0, 1.0], &[3, 1]);
    let err = gradcheck(
        |_t, l| l[0].masked_mean_axis(0, &m2).unwrap().sum_all(),
        &[(vec![3, 4], x.clone())],
        H,
    );
    assert!(err < TOL, "masked mean err {err}");

    let g = randn(&mut rng, 4);
    let b = randn(&mut rng, 4);
    let w3 = Tensor::new(randn(&mut rng, 8), &[2, 4]);
    let err = gradcheck(
        |_t, l| l[0].layer_norm(&l[1], &l[2], 1e-8).mul(&w3).sum_all(),
        &[(vec![2, 4], randn(&mut rng, 8)), (vec![4], g), (vec![4], b)],
        H,
    );
    assert!(err < TOL, "layer_norm err {err}");
}

#[test]
fn shaping_and_gather_ops() {
    let mut rng = Rng::new(4);
    let a = randn(&mut rng, 12);
    let b = randn(&mut rng, 8);
    let err = gradcheck(
        |_t, l| {
            let joined = concat(&[&l[0], &l[1]], 1);
            joined.narrow(1, 2, 3).mul(&joined.narrow(1, 0, 3)).sum_all()
        },
        &[(vec![2, 3, 2], a.clone()), (vec![2, 2, 2], b)],
        H,
    );
    assert!(err < TOL, "concat/narrow err {err}");

    let err = gradcheck(
        |_t, l| l[0].reshape(&[4, 3]).index_select(&[0, 2, 2]).sum_all(),
        &[(vec![2, 6], a.clone())],
        H,
    );
    assert!(err < TOL, "index_select err {err}");

    let err = gradcheck(
        |_t, l| l[0].segment_mean(&[0, 0, 2, 1], 3).mul(&l[0].narrow(0, 0, 3)).sum_all(),
        &[(vec![4, 3], randn(&mut rng, 12))],
        H,
    );
    assert!(err < TOL, "segment_mean err {err}");

    let pts_a = randn(&mut rng, 8);
    let pts_b = randn(&mut rng, 6);
    let err = gradcheck(
        |_t, l| l[0].pairwise_dist(&l[1], true).sum_all(),
        &[(vec![4, 2], pts_a.clone()), (vec![3, 2], pts_b.clone())],
        H,
    );
    assert!(err < TOL, "pairwise sqdist err {err}");
    let err = gradcheck(
        |_t, l| l[0].pairwise_dist(&l[1], false).sum_all(),
        &[(vec![4, 2], pts_a), (vec![3, 2], pts_b)],
        H,
    );
    assert!(err < TOL, "pairwise dist err {err}");
}

/// Gradcheck an entire parameter set against a scalar loss closure.
fn params_gradcheck<F>(ps: &mut ParamSet, f: F) -> f64
where
    F: Fn(&scatterfield::params::BoundParams) -> Tensor,
{
    let tape = Tape::new();
    let bound = ps.bind(&tape);
    let loss = f(&bound);
    tape.backward(&loss).unwrap();
    let analytic = bound.grads();

    let mut worst = 0.0f64;
    for i in 0..ps.len() {
        for j in 0..ps.entry(i).value.len() {
            let orig = ps.entry(i).value[j];
            ps.values_mut(i)[j] = orig + H;
            let plus = {
                let tape = Tape::new();
                f(&ps.bind(&tape)).item()
            };
            ps.values_mut(i)[j] = orig - H;
            let minus = {
                let tape = Tape::new();
                f(&ps.bind(&tape)).item()
            };
            ps.values_mut(i)[j] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn mlp_and_attention_layers() {
    let mut rng = Rng::new(5);
    let mut ps = ParamSet::new();
    let mlp = Mlp::new(
        &mut ps,
        "m",
        MlpSpec { in_dim: 3, hidden_dim: 4, out_dim: 2 },
        Activation::Gelu,
        &mut rng,
    );
    let x = Tensor::new(randn(&mut rng, 6), &[2, 3]);
    let err = params_gradcheck(&mut ps, |p| mlp.forward(p, &x).mul(&mlp.forward(p, &x)).sum_all());
    assert!(err < TOL, "mlp err {err}");

    let mut ps = ParamSet::new();
    let attn = MultiHeadAttention::new(
        &mut ps,
        "a",
        AttentionSpec { model_dim: 6, num_heads: 2 },
        &mut rng,
    );
    let q = Tensor::new(randn(&mut rng, 2 * 2 * 6), &[2, 2, 6]);
    let kv = Tensor::new(randn(&mut rng, 2 * 3 * 6), &[2, 3, 6]);
    let mask = Tensor::new(vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0], &[2, 3]);
    let err = params_gradcheck(&mut ps, |p| {
        attn.forward(p, &q, &kv, Some(&mask)).unwrap().sum_all()
    });
    assert!(err < TOL, "attention err {err}");
}

#[test]
fn encoder_decoder_perceiver_mp() {
    let mut rng = Rng::new(6);
    let spec = AttentionSpec { model_dim: 6, num_heads: 2 };

    let mut ps = ParamSet::new();
    let enc = TransformerEncoder::new(&mut ps, "e", spec, 8, 1, Activation::Gelu, NormPlacement::Pre, &mut rng);
    let x = Tensor::new(randn(&mut rng, 3 * 6), &[1, 3, 6]);
    let err = params_gradcheck(&mut ps, |p| enc.forward(p, &x, None).unwrap().sum_all());
    assert!(err < TOL, "encoder err {err}");

    let mut ps = ParamSet::new();
    let dec = TransformerDecoder::new(&mut ps, "d", spec, 8, 1, Activation::Gelu, NormPlacement::Pre, &mut rng);
    let tgt = Tensor::new(randn(&mut rng, 2 * 6), &[1, 2, 6]);
    let mem = Tensor::new(randn(&mut rng, 3 * 6), &[1, 3, 6]);
    let err = params_gradcheck(&mut ps, |p| dec.forward(p, &tgt, &mem, None, None).unwrap().sum_all());
    assert!(err < TOL, "decoder err {err}");

    let mut ps = ParamSet::new();
    let blk = PerceiverBlock::new(&mut ps, "p", spec, 8, 2, Activation::Gelu, &mut rng);
    let err = params_gradcheck(&mut ps, |p| blk.forward(p, &x, None).unwrap().sum_all());
    assert!(err < TOL, "perceiver err {err}");

    // 3-node path graph, two rounds
    let mut ps = ParamSet::new();
    let mp = MessagePassing::new(&mut ps, "mp", 4, Activation::Gelu, &mut rng);
    let nodes = Tensor::new(randn(&mut rng, 12), &[3, 4]);
    let edges = [(0usize, 1usize), (1, 0), (1, 2), (2, 1)];
    let err = params_gradcheck(&mut ps, |p| {
        let out = mp.forward(p, &nodes, &edges, 2);
        out.mul(&out).sum_all()
    });
    assert!(err < TOL, "message passing err {err}");
}

#[test]
fn encoding_schemes() {
    let mut rng = Rng::new(7);
    let x_c = Tensor::new(randn(&mut rng, 2 * 3 * 2), &[2, 3, 2]);
    let y_c = Tensor::new(randn(&mut rng, 2 * 3 * 1), &[2, 3, 1]);
    let x_t = Tensor::new(randn(&mut rng, 2 * 2 * 2), &[2, 2, 2]);
    for variant in [SchemeVariant::Default, SchemeVariant::SharedPosition] {
        let mut ps = ParamSet::new();
        let scheme = EncodingScheme::new(&mut ps, "enc", variant, 2, 1, 5, Activation::Gelu, &mut rng);
        let err = params_gradcheck(&mut ps, |p| {
            scheme
                .encode_context(p, &x_c, &y_c)
                .sum_all()
                .add(&scheme.encode_targets(p, &x_t).mul(&scheme.encode_targets(p, &x_t)).sum_all())
        });
        assert!(err < TOL, "{variant:?} err {err}");
    }
}

fn tiny_variable_batch() -> (Dims, Batch) {
    let dims = Dims { x: 2, i: 1, o: 1 };
    let mut rng = Rng::new(11);
    let mut pair = |nc: usize, nt: usize| ContextTargetPair {
        x_c: (0..nc).map(|_| vec![rng.normal(), rng.normal()]).collect(),
        y_c: (0..nc).map(|_| vec![rng.normal()]).collect(),
        x_t: (0..nt).map(|_| vec![rng.normal(), rng.normal()]).collect(),
        y_t: (0..nt).map(|_| vec![rng.normal()]).collect(),
    };
    let ds = Dataset::new(dims, vec![pair(4, 3), pair(3, 2)]);
    let norm = Normalization::identity(dims);
    (dims, make_batches(&ds, 2, None, &norm).unwrap().remove(0))
}

/// End-to-end: the masked MSE of each model against random targets.
#[test]
fn every_model_end_to_end() {
    let (dims, batch) = tiny_variable_batch();
    for kind in ModelKind::all() {
        let mut cfg = ModelConfig::tiny(kind, dims);
        cfg.embed_dim = 6;
        cfg.num_heads = 2;
        cfg.grid_bounds = Some([(-3.0, 3.0), (-3.0, 3.0)]);
        let mut model = Model::new(cfg).unwrap();
        let err = model_gradcheck(&mut model, &batch);
        assert!(err < TOL, "{kind} end-to-end err {err}");
    }
}

/// The distance-conditioned variants of TFS and CNP, and the cross-attention
/// variant of CNP.
#[test]
fn conditioning_variants() {
    let (dims, batch) = tiny_variable_batch();
    for (kind, conditioning) in [
        (ModelKind::Tfs, Conditioning::DistanceBased),
        (ModelKind::Cnp, Conditioning::CrossAttention),
    ] {
        let mut cfg = ModelConfig::tiny(kind, dims);
        cfg.embed_dim = 6;
        cfg.num_heads = 2;
        cfg.conditioning = conditioning;
        let mut model = Model::new(cfg).unwrap();
        let err = model_gradcheck(&mut model, &batch);
        assert!(err < TOL, "{kind} {conditioning:?} err {err}");
    }
}

fn model_gradcheck(model: &mut Model, batch: &Batch) -> f64 {
    let loss_of = |model: &Model| -> f64 {
        let tape = Tape::new();
        let (pred, _) = model.forward(&tape, batch).unwrap();
        mse_loss(&pred.y_hat, &batch.y_t, &batch.mask_t).unwrap().item()
    };
    let tape = Tape::new();
    let (pred, bound) = model.forward(&tape, batch).unwrap();
    let loss = mse_loss(&pred.y_hat, &batch.y_t, &batch.mask_t).unwrap();
    tape.backward(&loss).unwrap();
    let analytic = bound.grads();

    let mut worst = 0.0f64;
    for i in 0..model.params.len() {
        for j in 0..model.params.entry(i).value.len() {
            let orig = model.params.entry(i).value[j];
            model.params.values_mut(i)[j] = orig + H;
            let plus = loss_of(model);
            model.params.values_mut(i)[j] = orig - H;
            let minus = loss_of(model);
            model.params.values_mut(i)[j] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
