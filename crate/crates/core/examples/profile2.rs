use std::time::Instant;
use scatterfield::autodiff::{Tape, Tensor};
use scatterfield::encoding::*;
use scatterfield::layers::*;
use scatterfield::params::ParamSet;
use scatterfield::rng::Rng;

fn time<F: FnMut()>(label: &str, mut f: F) {
    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps { f(); }
    eprintln!("{label}: {:.2} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

fn main() {
    let mut rng = Rng::new(1);
    let e = 28;
    let b = 32;
    let t = 128;
    let mut ps = ParamSet::new();
    let scheme = EncodingScheme::new(&mut ps, "enc", SchemeVariant::SharedPosition, 2, 1, e, Activation::Gelu, &mut rng);
    let block = EncoderBlock::new(&mut ps, "blk", AttentionSpec{model_dim: e, num_heads: 4}, 2*e, Activation::Gelu, NormPlacement::Pre, &mut rng);
    let mlp = Mlp::new(&mut ps, "m", MlpSpec{in_dim: e, hidden_dim: e, out_dim: 1}, Activation::Gelu, &mut rng);

    let x_c = Tensor::new((0..b*64*2).map(|i| (i as f64*0.1).sin()).collect(), &[b, 64, 2]);
    let y_c = Tensor::new((0..b*64*1).map(|i| (i as f64*0.2).sin()).collect(), &[b, 64, 1]);
    let tokens = Tensor::new((0..b*t*e).map(|i| (i as f64*0.01).sin()).collect(), &[b, t, e]);
    let mask = Tensor::new(vec![1.0; b*t], &[b, t]);

    // constants only: forward math without tape recording
    time("encode_context (const)", || {
        let tape = Tape::new();
        let p = ps.bind(&tape);
        std::hint::black_box(scheme.encode_context(&p, &x_c, &y_c).data()[0]);
    });
    time("encoder block (const)", || {
        let tape = Tape::new();
        let p = ps.bind(&tape);
        std::hint::black_box(block.forward(&p, &tokens, Some(&mask)).unwrap().data()[0]);
    });
    time("encoder block fwd+bwd", || {
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let out = block.forward(&p, &tokens, Some(&mask)).unwrap().sum_all();
        tape.backward(&out).unwrap();
        std::hint::black_box(out.item());
    });
    time("readout mlp (const)", || {
        let tape = Tape::new();
        let p = ps.bind(&tape);
        std::hint::black_box(mlp.forward(&p, &tokens).data()[0]);
    });

    // raw gelu pass over the same volume as one FFN activation
    let xs: Vec<f64> = (0..b*t*2*e).map(|i| (i as f64 * 0.001).sin()).collect();
    time("raw gelu 229k", || {
        let v: Vec<f64> = xs.iter().map(|&x| scatterfield::autodiff::kernels::gelu(x)).collect();
        std::hint::black_box(v[0]);
    });
    // one full [B,T,T] softmax
    let scores = Tensor::new((0..b*t*t).map(|i| (i as f64*0.001).sin()).collect(), &[b, t, t]);
    let m3 = Tensor::new(vec![1.0; b*t], &[b, t]).reshape(&[b,1,t]);
    time("masked softmax BTT", || {
        std::hint::black_box(scores.masked_softmax(2, &m3).unwrap().data()[0]);
    });
    time("plain matmul qk", || {
        let q = Tensor::new(vec![0.5; b*t*7], &[b, t, 7]);
        std::hint::black_box(q.matmul_nt(&q).data()[0]);
    });
}
