//! The seven forecasters behind one interface: (context set, target
//! positions) -> target predictions.

mod attention;
mod checkpoint;
mod graph_models;
mod presets;
mod simple;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use presets::Tier;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{Batch, Dims};
use crate::encoding::{EncodingScheme, SchemeVariant};
use crate::error::{Error, Result};
use crate::layers::{
    Activation, AttentionSpec, LatentGraph, Linear, MessagePassing, Mlp, MlpSpec,
    MultiHeadAttention, NormPlacement, PerceiverBlock, TransformerDecoder, TransformerEncoder,
};
use crate::params::{BoundParams, Init, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Msa,
    Tfs,
    Gen,
    Cnp,
    Gng,
    Per,
    Gka,
}

impl ModelKind {
    pub fn all() -> [ModelKind; 7] {
        [
            ModelKind::Msa,
            ModelKind::Tfs,
            ModelKind::Gen,
            ModelKind::Cnp,
            ModelKind::Gng,
            ModelKind::Per,
            ModelKind::Gka,
        ]
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Msa => "msa",
            ModelKind::Tfs => "tfs",
            ModelKind::Gen => "gen",
            ModelKind::Cnp => "cnp",
            ModelKind::Gng => "gng",
            ModelKind::Per => "per",
            ModelKind::Gka => "gka",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "msa" => Ok(ModelKind::Msa),
            "tfs" => Ok(ModelKind::Tfs),
            "gen" => Ok(ModelKind::Gen),
            "cnp" => Ok(ModelKind::Cnp),
            "gng" => Ok(ModelKind::Gng),
            "per" => Ok(ModelKind::Per),
            "gka" => Ok(ModelKind::Gka),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

/// How an encoder-decoder style model conditions targets on the encoded
/// context: cross-attention or distance-weighted averaging of latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    CrossAttention,
    DistanceBased,
}

/// Full architectural description of a model instance. Serialized into
/// checkpoints so a saved model rebuilds itself exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub dims: Dims,
    pub scheme: SchemeVariant,
    pub activation: Activation,
    pub norm: NormPlacement,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub depth: usize,
    pub dec_depth: usize,
    pub ff_mult: usize,
    /// PER: number of learned latent vectors per block.
    pub n_latents: usize,
    /// GEN: regular latent grid (nx, ny).
    pub grid: (usize, usize),
    /// GEN: grid bounding box per position axis; None spans the data.
    pub grid_bounds: Option<[(f64, f64); 2]>,
    /// GEN/GNG: message-passing rounds.
    pub mp_steps: usize,
    /// GNG: neighbours per node.
    pub knn: usize,
    /// GEN: learn node positions by gradient descent.
    pub trainable_positions: bool,
    /// TFS/CNP conditioning function.
    pub conditioning: Conditioning,
    /// Parameter-init seed.
    pub init_seed: u64,
}

impl ModelConfig {
    /// A tiny configuration for gradient checks and unit tests.
    pub fn tiny(kind: ModelKind, dims: Dims) -> ModelConfig {
        ModelConfig {
            kind,
            dims,
            scheme: SchemeVariant::SharedPosition,
            activation: Activation::Gelu,
            norm: NormPlacement::Pre,
            embed_dim: 8,
            num_heads: 2,
            depth: 1,
            dec_depth: 1,
            ff_mult: 2,
            n_latents: 3,
            grid: (2, 2),
            grid_bounds: Some([(-2.0, 2.0), (-2.0, 2.0)]),
            mp_steps: 2,
            knn: 2,
            trainable_positions: false,
            conditioning: Conditioning::CrossAttention,
            init_seed: 1,
        }
    }
}

/// Target predictions plus optional diagnostics hooks.
pub struct Prediction {
    /// `[B, Nt, O]`, in the value units of the batch it was computed from.
    pub y_hat: Tensor,
    /// Per-token (or per-node) latent states at the encoder output; the
    /// tensor whose gradient the attribution experiment inspects.
    pub latents: Option<Tensor>,
}

#[derive(Clone)]
enum Arch {
    Msa {
        scheme: EncodingScheme,
        encoder: TransformerEncoder,
        readout: Mlp,
    },
    Tfs {
        scheme: EncodingScheme,
        encoder: TransformerEncoder,
        decoder: TransformerDecoder,
        /// Distance-based conditioning replaces the decoder.
        beta: Option<usize>,
        eta: Option<Linear>,
        readout: Mlp,
    },
    Gen {
        scheme: EncodingScheme,
        graph: LatentGraph,
        beta: usize,
        positions: Option<usize>,
        mp: MessagePassing,
        readout: Mlp,
    },
    Cnp {
        scheme: EncodingScheme,
        eta: Option<Linear>,
        cross: Option<MultiHeadAttention>,
        readout: Mlp,
    },
    Gng {
        scheme: EncodingScheme,
        beta: usize,
        mp: MessagePassing,
        readout: Mlp,
    },
    Per {
        scheme: EncodingScheme,
        blocks: Vec<PerceiverBlock>,
        final_ln: crate::layers::LayerNorm,
        readout: Mlp,
    },
    Gka {
        inv_scale: usize,
    },
}

/// A parameterized forecaster: forward evaluation, stable parameter
/// enumeration, gradient extraction via the bound parameter view.
#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    arch: Arch,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model> {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(config.init_seed).derive(0xC0FFEE);
        let dims = config.dims;
        let e = config.embed_dim;
        let act = config.activation;
        let spec = AttentionSpec {
            model_dim: e,
            num_heads: config.num_heads,
        };
        let ff_hidden = config.ff_mult * e;
        let scheme = |ps: &mut ParamSet, rng: &mut Rng| {
            EncodingScheme::new(ps, "enc", config.scheme, dims.x, dims.i, e, act, rng)
        };
        let readout = |ps: &mut ParamSet, rng: &mut Rng| {
            Mlp::new(
                ps,
                "readout",
                MlpSpec { in_dim: e, hidden_dim: e, out_dim: dims.o },
                act,
                rng,
            )
        };
        let arch = match config.kind {
            ModelKind::Msa => Arch::Msa {
                scheme: scheme(&mut ps, &mut rng),
                encoder: TransformerEncoder::new(
                    &mut ps,
                    "backbone",
                    spec,
                    ff_hidden,
                    config.depth,
                    act,
                    config.norm,
                    &mut rng,
                ),
                readout: readout(&mut ps, &mut rng),
            },
            ModelKind::Tfs => {
                let sch = scheme(&mut ps, &mut rng);
                let encoder = TransformerEncoder::new(
                    &mut ps,
                    "encoder",
                    spec,
                    ff_hidden,
                    config.depth,
                    act,
                    config.norm,
                    &mut rng,
                );
                let (decoder, beta, eta) = match config.conditioning {
                    Conditioning::CrossAttention => (
                        TransformerDecoder::new(
                            &mut ps,
                            "decoder",
                            spec,
                            ff_hidden,
                            config.dec_depth,
                            act,
                            config.norm,
                            &mut rng,
                        ),
                        None,
                        None,
                    ),
                    Conditioning::DistanceBased => (
                        TransformerDecoder::new(
                            &mut ps,
                            "decoder",
                            spec,
                            ff_hidden,
                            0,
                            act,
                            config.norm,
                            &mut rng,
                        ),
                        Some(ps.add("cond.beta_log", &[1], Init::Const(0.0), &mut rng)),
                        Some(Linear::new(&mut ps, "cond.eta", 2 * e, e, &mut rng)),
                    ),
                };
                Arch::Tfs {
                    scheme: sch,
                    encoder,
                    decoder,
                    beta,
                    eta,
                    readout: readout(&mut ps, &mut rng),
                }
            }
            ModelKind::Gen => {
                let sch = scheme(&mut ps, &mut rng);
                let bounds = config.grid_bounds.unwrap_or([(-1.0, 1.0), (-1.0, 1.0)]);
                if dims.x != 2 {
                    return Err(Error::Config(format!(
                        "gen needs 2-d positions for its latent grid, dataset has {}",
                        dims.x
                    )));
                }
                let graph = LatentGraph::regular_grid(config.grid.0, config.grid.1, &bounds);
                let beta = ps.add("graph.beta_log", &[1], Init::Const(0.0), &mut rng);
                let positions = config.trainable_positions.then(|| {
                    let idx = ps.add(
                        "graph.positions",
                        &[graph.n_nodes, graph.x_dim],
                        Init::Zeros,
                        &mut rng,
                    );
                    idx
                });
                if let Some(idx) = positions {
                    *ps.values_mut(idx) = graph.positions.clone();
                }
                Arch::Gen {
                    scheme: sch,
                    graph,
                    beta,
                    positions,
                    mp: MessagePassing::new(&mut ps, "mp", e, act, &mut rng),
                    readout: readout(&mut ps, &mut rng),
                }
            }
            ModelKind::Cnp => {
                let sch = scheme(&mut ps, &mut rng);
                let (eta, cross) = match config.conditioning {
                    Conditioning::CrossAttention => (
                        None,
                        Some(MultiHeadAttention::new(&mut ps, "cond.cross", spec, &mut rng)),
                    ),
                    Conditioning::DistanceBased => {
                        (Some(Linear::new(&mut ps, "eta", 2 * e, e, &mut rng)), None)
                    }
                };
                Arch::Cnp {
                    scheme: sch,
                    eta,
                    cross,
                    readout: readout(&mut ps, &mut rng),
                }
            }
            ModelKind::Gng => Arch::Gng {
                scheme: scheme(&mut ps, &mut rng),
                beta: ps.add("gather.beta_log", &[1], Init::Const(0.0), &mut rng),
                mp: MessagePassing::new(&mut ps, "mp", e, act, &mut rng),
                readout: readout(&mut ps, &mut rng),
            },
            ModelKind::Per => {
                let sch = scheme(&mut ps, &mut rng);
                let blocks = (0..config.depth)
                    .map(|i| {
                        PerceiverBlock::new(
                            &mut ps,
                            &format!("backbone.block{i}"),
                            spec,
                            ff_hidden,
                            config.n_latents,
                            act,
                            &mut rng,
                        )
                    })
                    .collect();
                let final_ln =
                    crate::layers::LayerNorm::new(&mut ps, "backbone.ln_out", e, &mut rng);
                Arch::Per {
                    scheme: sch,
                    blocks,
                    final_ln,
                    readout: readout(&mut ps, &mut rng),
                }
            }
            ModelKind::Gka => {
                if dims.i != dims.o {
                    return Err(Error::Config(format!(
                        "gka predicts convex combinations of context values; needs I == O, got I={} O={}",
                        dims.i, dims.o
                    )));
                }
                Arch::Gka {
                    inv_scale: ps.add("kernel.inv_scale", &[dims.x], Init::Ones, &mut rng),
                }
            }
        };
        Ok(Model {
            config,
            params: ps,
            arch,
        })
    }

    /// Preset configuration for a parameter tier, then construction.
    pub fn preset(kind: ModelKind, tier: Tier, dims: Dims, seed: u64) -> Result<Model> {
        Model::new(presets::preset_config(kind, tier, dims, seed))
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn n_params(&self) -> usize {
        self.params.total()
    }

    /// Forward pass on `tape`; returns the prediction and the bound
    /// parameter view for gradient extraction.
    pub fn forward(&self, tape: &Tape, batch: &Batch) -> Result<(Prediction, BoundParams)> {
        self.validate_batch(batch)?;
        let p = self.params.bind(tape);
        let pred = self.forward_with(&p, batch)?;
        Ok((pred, p))
    }

    /// Forward pass with already-bound parameters.
    pub fn forward_with(&self, p: &BoundParams, batch: &Batch) -> Result<Prediction> {
        batch.require_nonempty()?;
        match &self.arch {
            Arch::Msa { scheme, encoder, readout } => {
                attention::msa_forward(scheme, encoder, readout, p, batch)
            }
            Arch::Tfs { scheme, encoder, decoder, beta, eta, readout } => attention::tfs_forward(
                scheme,
                encoder,
                decoder,
                beta.as_ref().copied(),
                eta.as_ref(),
                readout,
                p,
                batch,
            ),
            Arch::Per { scheme, blocks, final_ln, readout } => {
                attention::per_forward(scheme, blocks, final_ln, readout, p, batch)
            }
            Arch::Gen { scheme, graph, beta, positions, mp, readout } => graph_models::gen_forward(
                scheme,
                graph,
                *beta,
                positions.as_ref().copied(),
                mp,
                readout,
                self.config.mp_steps,
                p,
                batch,
            ),
            Arch::Gng { scheme, beta, mp, readout } => graph_models::gng_forward(
                scheme,
                *beta,
                mp,
                readout,
                self.config.mp_steps,
                self.config.knn,
                p,
                batch,
            ),
            Arch::Cnp { scheme, eta, cross, readout } => {
                simple::cnp_forward(scheme, eta.as_ref(), cross.as_ref(), readout, p, batch)
            }
            Arch::Gka { inv_scale } => simple::gka_forward(*inv_scale, p, batch),
        }
    }

    /// Convenience: predictions as raw values (fresh throwaway tape).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let (pred, _) = self.forward(&tape, batch)?;
        Ok(pred.y_hat.to_vec())
    }

    fn validate_batch(&self, batch: &Batch) -> Result<()> {
        let d = self.config.dims;
        if batch.dims != d {
            return Err(Error::Config(format!(
                "batch dims {:?} do not match model dims {:?}",
                batch.dims, d
            )));
        }
        Ok(())
    }

    /// The latent grid of a GEN model, if any.
    pub fn latent_graph(&self) -> Option<&LatentGraph> {
        match &self.arch {
            Arch::Gen { graph, .. } => Some(graph),
            _ => None,
        }
    }

    #[cfg(test)]
    pub(crate) fn gen_parts_for_test(&self) -> (&EncodingScheme, &Mlp) {
        match &self.arch {
            Arch::Gen { scheme, readout, .. } => (scheme, readout),
            _ => panic!("helper is for GEN models"),
        }
    }
}
