//! Context/target encoding schemes.
//!
//! Two ways of lifting raw measurements into E-dimensional tokens. The
//! default keeps separate encoders: context position and value are
//! concatenated and jointly encoded, target positions go through their own
//! MLP. The shared-position scheme reuses one position encoder for both
//! sides and adds a separate value embedding on the context path, so the
//! spatial mapping is learned once.

use crate::autodiff::{concat, Tensor};
use crate::layers::{Activation, Mlp, MlpSpec};
use crate::params::{BoundParams, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SchemeVariant {
    /// e_c from (x_c ‖ y_c) jointly, e_t from its own position encoder.
    Default,
    /// e_c = phi(x_c) + nu(y_c), e_t = phi(x_t) with phi shared.
    SharedPosition,
}

impl std::str::FromStr for SchemeVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(SchemeVariant::Default),
            "shared" => Ok(SchemeVariant::SharedPosition),
            other => Err(format!("unknown encoding scheme `{other}` (default|shared)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncodingScheme {
    pub variant: SchemeVariant,
    pub x_dim: usize,
    pub i_dim: usize,
    pub e_dim: usize,
    /// Default: joint context encoder. Shared: position encoder phi.
    enc_a: Mlp,
    /// Default: target position encoder psi. Shared: value encoder nu.
    enc_b: Mlp,
}

impl EncodingScheme {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        variant: SchemeVariant,
        x_dim: usize,
        i_dim: usize,
        e_dim: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> EncodingScheme {
        let (enc_a, enc_b) = match variant {
            SchemeVariant::Default => (
                Mlp::new(
                    ps,
                    &format!("{name}.varphi"),
                    MlpSpec { in_dim: x_dim + i_dim, hidden_dim: e_dim, out_dim: e_dim },
                    act,
                    rng,
                ),
                Mlp::new(
                    ps,
                    &format!("{name}.psi"),
                    MlpSpec { in_dim: x_dim, hidden_dim: e_dim, out_dim: e_dim },
                    act,
                    rng,
                ),
            ),
            SchemeVariant::SharedPosition => (
                Mlp::new(
                    ps,
                    &format!("{name}.phi"),
                    MlpSpec { in_dim: x_dim, hidden_dim: e_dim, out_dim: e_dim },
                    act,
                    rng,
                ),
                Mlp::new(
                    ps,
                    &format!("{name}.nu"),
                    MlpSpec { in_dim: i_dim, hidden_dim: e_dim, out_dim: e_dim },
                    act,
                    rng,
                ),
            ),
        };
        EncodingScheme {
            variant,
            x_dim,
            i_dim,
            e_dim,
            enc_a,
            enc_b,
        }
    }

    /// `x_c`: `[.., Nc, X]`, `y_c`: `[.., Nc, I]` -> `[.., Nc, E]`.
    pub fn encode_context(&self, p: &BoundParams, x_c: &Tensor, y_c: &Tensor) -> Tensor {
        assert_eq!(*x_c.shape().last().unwrap(), self.x_dim, "context position dim");
        assert_eq!(*y_c.shape().last().unwrap(), self.i_dim, "context value dim");
        match self.variant {
            SchemeVariant::Default => {
                let joint = concat(&[x_c, y_c], x_c.shape().len() - 1);
                self.enc_a.forward(p, &joint)
            }
            SchemeVariant::SharedPosition => self
                .enc_a
                .forward(p, x_c)
                .add(&self.enc_b.forward(p, y_c)),
        }
    }

    /// `x_t`: `[.., Nt, X]` -> `[.., Nt, E]`, positions only.
    pub fn encode_targets(&self, p: &BoundParams, x_t: &Tensor) -> Tensor {
        assert_eq!(*x_t.shape().last().unwrap(), self.x_dim, "target position dim");
        match self.variant {
            SchemeVariant::Default => self.enc_b.forward(p, x_t),
            SchemeVariant::SharedPosition => self.enc_a.forward(p, x_t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn build(variant: SchemeVariant) -> (ParamSet, EncodingScheme) {
        let mut rng = Rng::new(5);
        let mut ps = ParamSet::new();
        let scheme = EncodingScheme::new(&mut ps, "enc", variant, 2, 1, 6, Activation::Gelu, &mut rng);
        (ps, scheme)
    }

    #[test]
    fn shared_with_zero_value_encoder_matches_target_path() {
        let (mut ps, scheme) = build(SchemeVariant::SharedPosition);
        // zero out nu entirely: indices 6.. are nu's params
        for i in 0..ps.len() {
            if ps.entry(i).name.contains(".nu.") {
                ps.values_mut(i).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x = Tensor::new(vec![0.3, -0.2, 1.0, 0.5], &[1, 2, 2]);
        let y = Tensor::new(vec![7.0, -3.0], &[1, 2, 1]);
        let ec = scheme.encode_context(&p, &x, &y).to_vec();
        let et = scheme.encode_targets(&p, &x).to_vec();
        for (a, b) in ec.iter().zip(et) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn default_scheme_output_depends_on_values() {
        let (ps, scheme) = build(SchemeVariant::Default);
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x = Tensor::new(vec![0.3, -0.2], &[1, 1, 2]);
        let y1 = Tensor::new(vec![1.0], &[1, 1, 1]);
        let y2 = Tensor::new(vec![-1.0], &[1, 1, 1]);
        let e1 = scheme.encode_context(&p, &x, &y1).to_vec();
        let e2 = scheme.encode_context(&p, &x, &y2).to_vec();
        assert!(e1.iter().zip(&e2).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn identical_positions_encode_identically() {
        let (ps, scheme) = build(SchemeVariant::SharedPosition);
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x = Tensor::new(vec![0.4, 0.9, 0.4, 0.9], &[1, 2, 2]);
        let e = scheme.encode_targets(&p, &x).to_vec();
        for c in 0..6 {
            assert_eq!(e[c], e[6 + c]);
        }
    }

    #[test]
    fn distinct_positions_encode_distinctly() {
        let (ps, scheme) = build(SchemeVariant::SharedPosition);
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let a = [rng.normal(), rng.normal()];
            let b = [rng.normal(), rng.normal()];
            let x = Tensor::new(vec![a[0], a[1], b[0], b[1]], &[1, 2, 2]);
            let e = scheme.encode_targets(&p, &x).to_vec();
            let diff: f64 = (0..6).map(|c| (e[c] - e[6 + c]).abs()).sum();
            assert!(diff > 1e-9, "collision for {a:?} vs {b:?}");
        }
    }

    #[test]
    fn encoding_is_per_element() {
        // perturbing element i leaves other embeddings bit-identical
        let (ps, scheme) = build(SchemeVariant::Default);
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x1 = Tensor::new(vec![0.1, 0.2, 0.3, 0.4], &[1, 2, 2]);
        let y1 = Tensor::new(vec![1.0, 2.0], &[1, 2, 1]);
        let y2 = Tensor::new(vec![1.0, -5.0], &[1, 2, 1]);
        let e1 = scheme.encode_context(&p, &x1, &y1).to_vec();
        let e2 = scheme.encode_context(&p, &x1, &y2).to_vec();
        assert_eq!(&e1[0..6], &e2[0..6]);
        assert_ne!(&e1[6..12], &e2[6..12]);
    }

    #[test]
    fn shared_position_gradient_sums_both_paths() {
        // d(loss)/d(phi) under weight sharing must equal the sum of the two
        // gradients from an untied two-copy run with identical values.
        let mut rng = Rng::new(17);
        let mut ps = ParamSet::new();
        let shared = EncodingScheme::new(
            &mut ps,
            "s",
            SchemeVariant::SharedPosition,
            2,
            1,
            4,
            Activation::Gelu,
            &mut rng,
        );
        let phi_indices: Vec<usize> = (0..ps.len())
            .filter(|&i| ps.entry(i).name.contains(".phi."))
            .collect();

        // untied copy: two phi clones with the same values
        let mut rng2 = Rng::new(17);
        let mut ps2 = ParamSet::new();
        let phi_c = Mlp::new(
            &mut ps2,
            "phi_c",
            MlpSpec { in_dim: 2, hidden_dim: 4, out_dim: 4 },
            Activation::Gelu,
            &mut rng2,
        );
        let mut rng3 = Rng::new(17);
        let phi_t = Mlp::new(
            &mut ps2,
            "phi_t",
            MlpSpec { in_dim: 2, hidden_dim: 4, out_dim: 4 },
            Activation::Gelu,
            &mut rng3,
        );
        let mut rng4 = Rng::new(17);
        // nu with the same stream position as in the shared set
        let mut scratch = ParamSet::new();
        let _phi_again = Mlp::new(
            &mut scratch,
            "x",
            MlpSpec { in_dim: 2, hidden_dim: 4, out_dim: 4 },
            Activation::Gelu,
            &mut rng4,
        );
        let nu = Mlp::new(
            &mut ps2,
            "nu",
            MlpSpec { in_dim: 1, hidden_dim: 4, out_dim: 4 },
            Activation::Gelu,
            &mut rng4,
        );

        let x_c = Tensor::new(vec![0.2, -0.4, 0.9, 0.1], &[1, 2, 2]);
        let y_c = Tensor::new(vec![0.7, -0.3], &[1, 2, 1]);
        let x_t = Tensor::new(vec![0.5, 0.5], &[1, 1, 2]);

        let tape = Tape::new();
        let p = ps.bind(&tape);
        let loss = shared
            .encode_context(&p, &x_c, &y_c)
            .sum_all()
            .add(&shared.encode_targets(&p, &x_t).sum_all());
        tape.backward(&loss).unwrap();
        let shared_grads: Vec<Vec<f64>> = phi_indices.iter().map(|&i| p.get(i).grad_or_zeros()).collect();

        let tape2 = Tape::new();
        let p2 = ps2.bind(&tape2);
        let e_c = phi_c.forward(&p2, &x_c).add(&nu.forward(&p2, &y_c));
        let e_t = phi_t.forward(&p2, &x_t);
        let loss2 = e_c.sum_all().add(&e_t.sum_all());
        tape2.backward(&loss2).unwrap();

        for (k, g_shared) in shared_grads.iter().enumerate() {
            let g_c = p2.get(k).grad_or_zeros(); // phi_c params come first
            let g_t = p2.get(6 + k).grad_or_zeros(); // then phi_t's six entries
            for ((s, c), t) in g_shared.iter().zip(&g_c).zip(&g_t) {
                assert!((s - (c + t)).abs() < 1e-10, "tied grad != sum of untied");
            }
        }
    }
}
