// can phi -> eta -> gamma (the CNP target path) fit sin(pi x)cos(pi y)?
use scatterfield::autodiff::{Tape, Tensor};
use scatterfield::layers::*;
use scatterfield::params::*;
use scatterfield::rng::Rng;
use scatterfield::training::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let e: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(48);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let act = match args.get(3).map(|s| s.as_str()).unwrap_or("gelu") {
        "relu" => Activation::Relu,
        _ => Activation::Gelu,
    };
    let mut rng = Rng::new(7);
    let mut ps = ParamSet::new();
    let phi = Mlp::new(&mut ps, "phi", MlpSpec { in_dim: 2, hidden_dim: e, out_dim: e }, act, &mut rng);
    let eta = Linear::new(&mut ps, "eta", 2 * e, e, &mut rng);
    let gamma = Mlp::new(&mut ps, "gamma", MlpSpec { in_dim: e, hidden_dim: e, out_dim: 1 }, act, &mut rng);
    eprintln!("params: {}", ps.total());

    let mut adam = Adam::new(&ps, lr, 0.9, 0.999, 1e-8);
    let mut data_rng = Rng::new(1);
    let n = 2048;
    let f = std::f64::consts::PI;
    let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3000);
    for step in 0..steps {
        let xs: Vec<f64> = (0..n * 2).map(|_| data_rng.normal()).collect();
        let ys: Vec<f64> = xs.chunks(2).map(|p| (f * p[0]).sin() * (f * p[1]).cos()).collect();
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x = Tensor::new(xs, &[n, 2]);
        let e_t = phi.forward(&p, &x);
        // emulate the cnp conditioning with a zero context summary
        let zeros = Tensor::zeros(&[n, e]);
        let cat = scatterfield::autodiff::concat(&[&zeros, &e_t], 1);
        let h = eta.forward(&p, &cat);
        let pred = gamma.forward(&p, &h);
        let target = Tensor::new(ys, &[n, 1]);
        let diff = pred.sub(&target);
        let loss = diff.mul(&diff).mean_all();
        if step % 1000 == 0 || step + 1 == steps {
            eprintln!("step {step}: mse {:.5}", loss.item());
        }
        tape.backward(&loss).unwrap();
        let mut grads = p.grads();
        clip_global_norm(&mut grads, 1.0);
        adam.step(&mut ps, &grads).unwrap();
    }
}
