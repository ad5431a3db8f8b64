//! Parameter-count tiers.
//!
//! One preset per (model, tier) chosen so the total parameter count lands
//! within ten percent of the nominal tier on the 2-d retrieval dims
//! (X=2, I=1, O=1); dataset dims shift the count by a few dozen values at
//! most. GKA carries only per-axis length scales and has no tiers.

use crate::data::Dims;
use crate::encoding::SchemeVariant;
use crate::layers::{Activation, NormPlacement};
use crate::models::{Conditioning, ModelConfig, ModelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Tier {
    T5k,
    T20k,
    T100k,
}

impl Tier {
    pub fn nominal(&self) -> usize {
        match self {
            Tier::T5k => 5_000,
            Tier::T20k => 20_000,
            Tier::T100k => 100_000,
        }
    }

    pub fn all() -> [Tier; 3] {
        [Tier::T5k, Tier::T20k, Tier::T100k]
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Tier::T5k => "5k",
            Tier::T20k => "20k",
            Tier::T100k => "100k",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Tier {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "5k" => Ok(Tier::T5k),
            "20k" => Ok(Tier::T20k),
            "100k" => Ok(Tier::T100k),
            other => Err(format!("unknown tier `{other}` (5k|20k|100k)")),
        }
    }
}

/// (embed_dim, heads, depth, dec_depth) per model and tier.
fn shape_for(kind: ModelKind, tier: Tier) -> (usize, usize, usize, usize) {
    use ModelKind::*;
    use Tier::*;
    match (kind, tier) {
        (Msa, T5k) => (18, 3, 1, 0),
        (Msa, T20k) => (28, 4, 2, 0),
        (Msa, T100k) => (64, 8, 2, 0),
        (Tfs, T5k) => (13, 1, 1, 1),
        (Tfs, T20k) => (26, 2, 1, 1),
        (Tfs, T100k) => (64, 8, 1, 1),
        (Per, T5k) => (14, 2, 1, 0),
        (Per, T20k) => (22, 2, 2, 0),
        (Per, T100k) => (52, 4, 2, 0),
        (Gen, T5k) | (Gng, T5k) => (18, 1, 0, 0),
        (Gen, T20k) | (Gng, T20k) => (37, 1, 0, 0),
        (Gen, T100k) | (Gng, T100k) => (84, 1, 0, 0),
        (Cnp, T5k) => (24, 1, 0, 0),
        (Cnp, T20k) => (48, 1, 0, 0),
        (Cnp, T100k) => (112, 1, 0, 0),
        (Gka, _) => (1, 1, 0, 0),
    }
}

pub(crate) fn preset_config(kind: ModelKind, tier: Tier, dims: Dims, seed: u64) -> ModelConfig {
    let (embed_dim, num_heads, depth, dec_depth) = shape_for(kind, tier);
    ModelConfig {
        kind,
        dims,
        scheme: SchemeVariant::SharedPosition,
        activation: Activation::Relu,
        norm: NormPlacement::Pre,
        embed_dim,
        num_heads,
        depth,
        dec_depth,
        ff_mult: 2,
        n_latents: 8,
        grid: (4, 4),
        grid_bounds: Some([(-4.0, 4.0), (-4.0, 4.0)]),
        mp_steps: 2,
        knn: 4,
        trainable_positions: false,
        conditioning: match kind {
            ModelKind::Cnp => Conditioning::DistanceBased,
            _ => Conditioning::CrossAttention,
        },
        init_seed: seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Model;

    #[test]
    fn tiered_presets_within_ten_percent() {
        let dims = Dims { x: 2, i: 1, o: 1 };
        for kind in [
            ModelKind::Msa,
            ModelKind::Tfs,
            ModelKind::Per,
            ModelKind::Gen,
            ModelKind::Gng,
            ModelKind::Cnp,
        ] {
            for tier in Tier::all() {
                let model = Model::preset(kind, tier, dims, 0).unwrap();
                let n = model.n_params() as f64;
                let target = tier.nominal() as f64;
                let ratio = n / target;
                assert!(
                    (0.9..=1.1).contains(&ratio),
                    "{kind} {tier}: {n} params vs tier {target} (ratio {ratio:.3})"
                );
            }
        }
    }
}
