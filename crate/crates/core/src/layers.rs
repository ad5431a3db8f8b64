//! Neural building blocks: MLPs, multi-head attention, transformer
//! encoder/decoder stacks, perceiver blocks and latent-graph message passing.

use std::collections::BTreeSet;

use crate::autodiff::{concat, Tensor};
use crate::error::Result;
use crate::params::{BoundParams, Init, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormPlacement {
    Pre,
    Post,
}

pub const LN_EPS: f64 = 1e-8;

/// Two-hidden-layer MLP dimensions.
#[derive(Clone, Copy, Debug)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl MlpSpec {
    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.in_dim, self.hidden_dim, self.out_dim);
        i * h + h + h * h + h + h * o + o
    }
}

/// Two hidden layers with activation, then a linear readout.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    act: Activation,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl Mlp {
    pub fn new(ps: &mut ParamSet, name: &str, spec: MlpSpec, act: Activation, rng: &mut Rng) -> Mlp {
        let (i, h, o) = (spec.in_dim, spec.hidden_dim, spec.out_dim);
        Mlp {
            spec,
            act,
            w1: ps.add(format!("{name}.w1"), &[i, h], Init::Xavier(i, h), rng),
            b1: ps.add(format!("{name}.b1"), &[h], Init::Zeros, rng),
            w2: ps.add(format!("{name}.w2"), &[h, h], Init::Xavier(h, h), rng),
            b2: ps.add(format!("{name}.b2"), &[h], Init::Zeros, rng),
            w3: ps.add(format!("{name}.w3"), &[h, o], Init::Xavier(h, o), rng),
            b3: ps.add(format!("{name}.b3"), &[o], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, x: &Tensor) -> Tensor {
        assert_eq!(
            *x.shape().last().expect("mlp input"),
            self.spec.in_dim,
            "mlp: input dim {:?} does not match spec {}",
            x.shape(),
            self.spec.in_dim
        );
        let h1 = self.act.apply(&x.linear(p.get(self.w1), p.get(self.b1)));
        let h2 = self.act.apply(&h1.linear(p.get(self.w2), p.get(self.b2)));
        h2.linear(p.get(self.w3), p.get(self.b3))
    }
}

/// Single linear projection.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Linear {
        Linear {
            in_dim,
            out_dim,
            w: ps.add(format!("{name}.w"), &[in_dim, out_dim], Init::Xavier(in_dim, out_dim), rng),
            b: ps.add(format!("{name}.b"), &[out_dim], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, x: &Tensor) -> Tensor {
        x.linear(p.get(self.w), p.get(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    g: usize,
    b: usize,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, rng: &mut Rng) -> LayerNorm {
        LayerNorm {
            g: ps.add(format!("{name}.g"), &[dim], Init::Ones, rng),
            b: ps.add(format!("{name}.b"), &[dim], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, x: &Tensor) -> Tensor {
        x.layer_norm(p.get(self.g), p.get(self.b), LN_EPS)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionSpec {
    pub model_dim: usize,
    pub num_heads: usize,
}

impl AttentionSpec {
    pub fn head_dim(&self) -> usize {
        assert_eq!(
            self.model_dim % self.num_heads,
            0,
            "attention: {} heads must divide model dim {}",
            self.num_heads,
            self.model_dim
        );
        self.model_dim / self.num_heads
    }
}

/// Multi-head scaled dot-product attention with an output projection.
/// Heads are contiguous slices of the projected feature axis. No causal
/// masking anywhere; an optional key-validity mask gives excluded keys
/// exactly zero weight.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub spec: AttentionSpec,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamSet, name: &str, spec: AttentionSpec, rng: &mut Rng) -> MultiHeadAttention {
        let e = spec.model_dim;
        spec.head_dim();
        let lin = |ps: &mut ParamSet, suffix: &str, rng: &mut Rng| {
            (
                ps.add(format!("{name}.{suffix}.w"), &[e, e], Init::Xavier(e, e), rng),
                ps.add(format!("{name}.{suffix}.b"), &[e], Init::Zeros, rng),
            )
        };
        let (wq, bq) = lin(ps, "q", rng);
        let (wk, bk) = lin(ps, "k", rng);
        let (wv, bv) = lin(ps, "v", rng);
        let (wo, bo) = lin(ps, "o", rng);
        MultiHeadAttention {
            spec,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    /// `q`: `[B, Tq, E]` (or `[Tq, E]`, broadcast over the batch),
    /// `kv`: `[B, Tk, E]`, `key_mask`: `[B, Tk]`.
    pub fn forward(
        &self,
        p: &BoundParams,
        q: &Tensor,
        kv: &Tensor,
        key_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let e = self.spec.model_dim;
        let h = self.spec.num_heads;
        self.spec.head_dim();
        assert_eq!(*q.shape().last().unwrap(), e, "attention: query dim");
        assert_eq!(*kv.shape().last().unwrap(), e, "attention: key dim");
        assert_eq!(kv.shape().len(), 3, "attention: kv must be [B, Tk, E]");

        let qp = q.linear(p.get(self.wq), p.get(self.bq));
        let qp = if qp.shape().len() == 2 {
            // shared queries (learned latents): replicate across the batch
            let bsz = kv.shape()[0];
            let tq = qp.shape()[0];
            qp.add(&Tensor::zeros(&[bsz, tq, e]))
        } else {
            qp
        };
        let kp = kv.linear(p.get(self.wk), p.get(self.bk));
        let vp = kv.linear(p.get(self.wv), p.get(self.bv));

        // An all-ones mask admits every key; the unmasked path is cheaper.
        let mask = key_mask.filter(|m| m.data().iter().any(|&v| v == 0.0));
        let merged = qp.multi_head_attention(&kp, &vp, h, mask)?;
        Ok(merged.linear(p.get(self.wo), p.get(self.bo)))
    }
}

/// Position-wise feed-forward: linear, activation, linear.
#[derive(Clone, Debug)]
pub struct FeedForward {
    l1: Linear,
    l2: Linear,
    act: Activation,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, hidden: usize, act: Activation, rng: &mut Rng) -> FeedForward {
        FeedForward {
            l1: Linear::new(ps, &format!("{name}.l1"), dim, hidden, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), hidden, dim, rng),
            act,
        }
    }

    pub fn forward(&self, p: &BoundParams, x: &Tensor) -> Tensor {
        self.l2.forward(p, &self.act.apply(&self.l1.forward(p, x)))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    ln1: LayerNorm,
    ln2: LayerNorm,
    attn: MultiHeadAttention,
    ff: FeedForward,
    norm: NormPlacement,
}

impl EncoderBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        spec: AttentionSpec,
        ff_hidden: usize,
        act: Activation,
        norm: NormPlacement,
        rng: &mut Rng,
    ) -> EncoderBlock {
        EncoderBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), spec.model_dim, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), spec.model_dim, rng),
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), spec, rng),
            ff: FeedForward::new(ps, &format!("{name}.ff"), spec.model_dim, ff_hidden, act, rng),
            norm,
        }
    }

    pub fn forward(&self, p: &BoundParams, x: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        match self.norm {
            NormPlacement::Pre => {
                let n = self.ln1.forward(p, x);
                let x = x.add(&self.attn.forward(p, &n, &n, key_mask)?);
                let n = self.ln2.forward(p, &x);
                Ok(x.add(&self.ff.forward(p, &n)))
            }
            NormPlacement::Post => {
                let x = self
                    .ln1
                    .forward(p, &x.add(&self.attn.forward(p, x, x, key_mask)?));
                Ok(self.ln2.forward(p, &x.add(&self.ff.forward(p, &x))))
            }
        }
    }
}

/// Stack of self-attention blocks; depth 0 is the identity.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    blocks: Vec<EncoderBlock>,
    final_ln: Option<LayerNorm>,
}

impl TransformerEncoder {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        spec: AttentionSpec,
        ff_hidden: usize,
        depth: usize,
        act: Activation,
        norm: NormPlacement,
        rng: &mut Rng,
    ) -> TransformerEncoder {
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(ps, &format!("{name}.block{i}"), spec, ff_hidden, act, norm, rng))
            .collect();
        let final_ln = (depth > 0 && norm == NormPlacement::Pre)
            .then(|| LayerNorm::new(ps, &format!("{name}.ln_out"), spec.model_dim, rng));
        TransformerEncoder { blocks, final_ln }
    }

    pub fn forward(&self, p: &BoundParams, x: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(p, &h, key_mask)?;
        }
        if let Some(ln) = &self.final_ln {
            h = ln.forward(p, &h);
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    ln1: LayerNorm,
    ln2: LayerNorm,
    ln3: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    ff: FeedForward,
    norm: NormPlacement,
}

impl DecoderBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        spec: AttentionSpec,
        ff_hidden: usize,
        act: Activation,
        norm: NormPlacement,
        rng: &mut Rng,
    ) -> DecoderBlock {
        DecoderBlock {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), spec.model_dim, rng),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), spec.model_dim, rng),
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), spec.model_dim, rng),
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self"), spec, rng),
            cross_attn: MultiHeadAttention::new(ps, &format!("{name}.cross"), spec, rng),
            ff: FeedForward::new(ps, &format!("{name}.ff"), spec.model_dim, ff_hidden, act, rng),
            norm,
        }
    }

    /// Non-causal self-attention over targets, then cross-attention into
    /// `memory`, then feed-forward; residuals throughout.
    pub fn forward(
        &self,
        p: &BoundParams,
        tgt: &Tensor,
        memory: &Tensor,
        tgt_mask: Option<&Tensor>,
        mem_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        match self.norm {
            NormPlacement::Pre => {
                let n = self.ln1.forward(p, tgt);
                let x = tgt.add(&self.self_attn.forward(p, &n, &n, tgt_mask)?);
                let n = self.ln2.forward(p, &x);
                let x = x.add(&self.cross_attn.forward(p, &n, memory, mem_mask)?);
                let n = self.ln3.forward(p, &x);
                Ok(x.add(&self.ff.forward(p, &n)))
            }
            NormPlacement::Post => {
                let x = self
                    .ln1
                    .forward(p, &tgt.add(&self.self_attn.forward(p, tgt, tgt, tgt_mask)?));
                let x = self
                    .ln2
                    .forward(p, &x.add(&self.cross_attn.forward(p, &x, memory, mem_mask)?));
                Ok(self.ln3.forward(p, &x.add(&self.ff.forward(p, &x))))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TransformerDecoder {
    blocks: Vec<DecoderBlock>,
    final_ln: Option<LayerNorm>,
}

impl TransformerDecoder {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        spec: AttentionSpec,
        ff_hidden: usize,
        depth: usize,
        act: Activation,
        norm: NormPlacement,
        rng: &mut Rng,
    ) -> TransformerDecoder {
        let blocks = (0..depth)
            .map(|i| DecoderBlock::new(ps, &format!("{name}.block{i}"), spec, ff_hidden, act, norm, rng))
            .collect();
        let final_ln = (depth > 0 && norm == NormPlacement::Pre)
            .then(|| LayerNorm::new(ps, &format!("{name}.ln_out"), spec.model_dim, rng));
        TransformerDecoder { blocks, final_ln }
    }

    pub fn forward(
        &self,
        p: &BoundParams,
        tgt: &Tensor,
        memory: &Tensor,
        tgt_mask: Option<&Tensor>,
        mem_mask: Option<&Tensor>,
    ) -> Result<Tensor> {
        let mut h = tgt.clone();
        for block in &self.blocks {
            h = block.forward(p, &h, memory, tgt_mask, mem_mask)?;
        }
        if let Some(ln) = &self.final_ln {
            h = ln.forward(p, &h);
        }
        Ok(h)
    }
}

/// Perceiver-style block: tokens exchange information only through `P`
/// learned latent vectors, the deliberate bottleneck.
#[derive(Clone, Debug)]
pub struct PerceiverBlock {
    latents: usize,
    n_latents: usize,
    ln_q_in: LayerNorm,
    ln_kv_in: LayerNorm,
    ln_lat_ff: LayerNorm,
    ln_q_out: LayerNorm,
    ln_kv_out: LayerNorm,
    ln_tok_ff: LayerNorm,
    attn_in: MultiHeadAttention,
    attn_out: MultiHeadAttention,
    ff_lat: FeedForward,
    ff_tok: FeedForward,
}

impl PerceiverBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        spec: AttentionSpec,
        ff_hidden: usize,
        n_latents: usize,
        act: Activation,
        rng: &mut Rng,
    ) -> PerceiverBlock {
        assert!(n_latents >= 1, "perceiver needs at least one latent");
        let e = spec.model_dim;
        PerceiverBlock {
            // pre-norm runs directly on the latents; keep them well away
            // from the degenerate near-zero rows layer norm amplifies
            latents: ps.add(format!("{name}.latents"), &[n_latents, e], Init::Normal(0.5), rng),
            n_latents,
            ln_q_in: LayerNorm::new(ps, &format!("{name}.ln_q_in"), e, rng),
            ln_kv_in: LayerNorm::new(ps, &format!("{name}.ln_kv_in"), e, rng),
            ln_lat_ff: LayerNorm::new(ps, &format!("{name}.ln_lat_ff"), e, rng),
            ln_q_out: LayerNorm::new(ps, &format!("{name}.ln_q_out"), e, rng),
            ln_kv_out: LayerNorm::new(ps, &format!("{name}.ln_kv_out"), e, rng),
            ln_tok_ff: LayerNorm::new(ps, &format!("{name}.ln_tok_ff"), e, rng),
            attn_in: MultiHeadAttention::new(ps, &format!("{name}.attn_in"), spec, rng),
            attn_out: MultiHeadAttention::new(ps, &format!("{name}.attn_out"), spec, rng),
            ff_lat: FeedForward::new(ps, &format!("{name}.ff_lat"), e, ff_hidden, act, rng),
            ff_tok: FeedForward::new(ps, &format!("{name}.ff_tok"), e, ff_hidden, act, rng),
        }
    }

    pub fn n_latents(&self) -> usize {
        self.n_latents
    }

    /// Cross-attend latents <- tokens, process latents, cross-attend
    /// tokens <- latents.
    pub fn forward(&self, p: &BoundParams, x: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let lat0 = p.get(self.latents);
        let lat = lat0.add(&self.attn_in.forward(
            p,
            &self.ln_q_in.forward(p, lat0),
            &self.ln_kv_in.forward(p, x),
            key_mask,
        )?);
        let lat = lat.add(&self.ff_lat.forward(p, &self.ln_lat_ff.forward(p, &lat)));
        // Latents are all valid: no mask on the way out.
        let x = x.add(&self.attn_out.forward(
            p,
            &self.ln_q_out.forward(p, x),
            &self.ln_kv_out.forward(p, &lat),
            None,
        )?);
        Ok(x.add(&self.ff_tok.forward(p, &self.ln_tok_ff.forward(p, &x))))
    }
}

/// Latent graph: node positions plus an undirected, duplicate-free edge set.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LatentGraph {
    pub positions: Vec<f64>,
    pub n_nodes: usize,
    pub x_dim: usize,
    pub edges: Vec<(usize, usize)>,
}

impl LatentGraph {
    pub fn new(positions: Vec<f64>, n_nodes: usize, x_dim: usize, edges: Vec<(usize, usize)>) -> LatentGraph {
        assert_eq!(positions.len(), n_nodes * x_dim);
        let mut seen = BTreeSet::new();
        for &(u, v) in &edges {
            assert!(u < n_nodes && v < n_nodes, "edge ({u},{v}) out of range");
            let key = (u.min(v), u.max(v));
            assert!(seen.insert(key), "duplicate edge ({u},{v})");
        }
        LatentGraph {
            positions,
            n_nodes,
            x_dim,
            edges,
        }
    }

    /// Regular nx-by-ny grid spanning `bounds` (per-axis min/max), with
    /// 4-neighbour adjacency. 2-D positions.
    pub fn regular_grid(nx: usize, ny: usize, bounds: &[(f64, f64); 2]) -> LatentGraph {
        assert!(nx >= 1 && ny >= 1);
        let mut positions = Vec::with_capacity(nx * ny * 2);
        for iy in 0..ny {
            for ix in 0..nx {
                let fx = if nx == 1 { 0.5 } else { ix as f64 / (nx - 1) as f64 };
                let fy = if ny == 1 { 0.5 } else { iy as f64 / (ny - 1) as f64 };
                positions.push(bounds[0].0 + fx * (bounds[0].1 - bounds[0].0));
                positions.push(bounds[1].0 + fy * (bounds[1].1 - bounds[1].0));
            }
        }
        let mut edges = Vec::new();
        let id = |ix: usize, iy: usize| iy * nx + ix;
        for iy in 0..ny {
            for ix in 0..nx {
                if ix + 1 < nx {
                    edges.push((id(ix, iy), id(ix + 1, iy)));
                }
                if iy + 1 < ny {
                    edges.push((id(ix, iy), id(ix, iy + 1)));
                }
            }
        }
        LatentGraph::new(positions, nx * ny, 2, edges)
    }

    /// One node per point with k-nearest-neighbour edges; deterministic
    /// tie-break by index. `k` is clamped to `n-1`.
    pub fn knn(positions: &[f64], n: usize, x_dim: usize, k: usize) -> LatentGraph {
        let mut edge_set = BTreeSet::new();
        let k = k.min(n.saturating_sub(1));
        for i in 0..n {
            let mut near: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = (0..x_dim)
                        .map(|d| {
                            let diff = positions[i * x_dim + d] - positions[j * x_dim + d];
                            diff * diff
                        })
                        .sum();
                    (d2, j)
                })
                .collect();
            near.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in near.iter().take(k) {
                edge_set.insert((i.min(j), i.max(j)));
            }
        }
        LatentGraph::new(positions.to_vec(), n, x_dim, edge_set.into_iter().collect())
    }

    /// Directed edge list (both directions of every undirected edge).
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for &(u, v) in &self.edges {
            out.push((u, v));
            out.push((v, u));
        }
        out
    }
}

/// Shared-weight message passing: per round, every node aggregates messages
/// from its in-neighbours (an MLP of sender and receiver states, mean
/// aggregated) and updates through an MLP with a residual connection.
#[derive(Clone, Debug)]
pub struct MessagePassing {
    msg: Mlp,
    upd: Mlp,
    dim: usize,
}

impl MessagePassing {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, act: Activation, rng: &mut Rng) -> MessagePassing {
        MessagePassing {
            msg: Mlp::new(
                ps,
                &format!("{name}.msg"),
                MlpSpec { in_dim: 2 * dim, hidden_dim: dim, out_dim: dim },
                act,
                rng,
            ),
            upd: Mlp::new(
                ps,
                &format!("{name}.upd"),
                MlpSpec { in_dim: 2 * dim, hidden_dim: dim, out_dim: dim },
                act,
                rng,
            ),
            dim,
        }
    }

    /// `nodes`: `[R, E]` stacked node states (any number of disjoint graphs);
    /// `edges`: directed (src, dst) pairs indexing rows. `steps` rounds.
    pub fn forward(&self, p: &BoundParams, nodes: &Tensor, edges: &[(usize, usize)], steps: usize) -> Tensor {
        assert_eq!(nodes.shape().len(), 2, "message passing expects [R, E]");
        assert_eq!(nodes.shape()[1], self.dim);
        let rows = nodes.shape()[0];
        let src: Vec<usize> = edges.iter().map(|&(s, _)| s).collect();
        let dst: Vec<usize> = edges.iter().map(|&(_, d)| d).collect();
        let mut h = nodes.clone();
        for _ in 0..steps {
            let agg = if edges.is_empty() {
                Tensor::zeros(&[rows, self.dim])
            } else {
                let senders = h.index_select(&src);
                let receivers = h.index_select(&dst);
                let messages = self.msg.forward(p, &concat(&[&senders, &receivers], 1));
                messages.segment_mean(&dst, rows)
            };
            let update = self.upd.forward(p, &concat(&[&h, &agg], 1));
            h = h.add(&update);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::error::Error;

    fn rng() -> Rng {
        Rng::new(42)
    }

    #[test]
    fn mlp_param_count_matches_spec() {
        let spec = MlpSpec { in_dim: 3, hidden_dim: 8, out_dim: 2 };
        let mut ps = ParamSet::new();
        let _ = Mlp::new(&mut ps, "m", spec, Activation::Gelu, &mut rng());
        assert_eq!(ps.total(), spec.param_count());
        assert_eq!(spec.param_count(), 3 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn mlp_zero_params_give_zero_output() {
        let spec = MlpSpec { in_dim: 2, hidden_dim: 4, out_dim: 3 };
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(&mut ps, "m", spec, Activation::Relu, &mut rng());
        for i in 0..ps.len() {
            ps.values_mut(i).iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x = Tensor::new(vec![1.0, -2.0, 0.5, 3.0], &[2, 2]);
        assert!(mlp.forward(&p, &x).to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_constructed_identity_reproduces_linear_map() {
        // 1-d MLP arranged so hidden units pass x through relu(x), relu(-x)
        // and the readout recombines them into y = 2x.
        let spec = MlpSpec { in_dim: 1, hidden_dim: 2, out_dim: 1 };
        let mut ps = ParamSet::new();
        let mlp = Mlp::new(&mut ps, "m", spec, Activation::Relu, &mut rng());
        *ps.values_mut(0) = vec![1.0, -1.0]; // w1
        *ps.values_mut(1) = vec![0.0, 0.0]; // b1
        *ps.values_mut(2) = vec![1.0, 0.0, 0.0, 1.0]; // w2 identity
        *ps.values_mut(3) = vec![0.0, 0.0]; // b2
        *ps.values_mut(4) = vec![2.0, -2.0]; // w3
        *ps.values_mut(5) = vec![0.0]; // b3
        let tape = Tape::new();
        let p = ps.bind(&tape);
        for probe in [-1.5, -0.2, 0.0, 0.3, 2.0] {
            let x = Tensor::new(vec![probe], &[1, 1]);
            let y = mlp.forward(&p, &x).item();
            assert!((y - 2.0 * probe).abs() < 1e-12, "probe {probe} -> {y}");
        }
    }

    #[test]
    fn attention_single_key_ignores_scores() {
        let spec = AttentionSpec { model_dim: 8, num_heads: 2 };
        let mut ps = ParamSet::new();
        let attn = MultiHeadAttention::new(&mut ps, "a", spec, &mut rng());
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let kv = Tensor::new((0..8).map(|i| i as f64 * 0.1).collect(), &[1, 1, 8]);
        let q1 = Tensor::new(vec![1.0; 8], &[1, 1, 8]);
        let q2 = Tensor::new(vec![-3.0; 8], &[1, 1, 8]);
        let o1 = attn.forward(&p, &q1, &kv, None).unwrap();
        let o2 = attn.forward(&p, &q2, &kv, None).unwrap();
        for (a, b) in o1.to_vec().iter().zip(o2.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_key_permutation_invariance() {
        let spec = AttentionSpec { model_dim: 6, num_heads: 3 };
        let mut ps = ParamSet::new();
        let attn = MultiHeadAttention::new(&mut ps, "a", spec, &mut rng());
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let mut r = rng();
        let kv: Vec<f64> = (0..4 * 6).map(|_| r.normal()).collect();
        let q = Tensor::new((0..2 * 6).map(|_| r.normal()).collect(), &[1, 2, 6]);
        let kv_t = Tensor::new(kv.clone(), &[1, 4, 6]);
        // permute keys 0..4 -> 2,0,3,1
        let perm = [2usize, 0, 3, 1];
        let mut kv_p = vec![0.0; kv.len()];
        for (new, &old) in perm.iter().enumerate() {
            kv_p[new * 6..(new + 1) * 6].copy_from_slice(&kv[old * 6..(old + 1) * 6]);
        }
        let kv_pt = Tensor::new(kv_p, &[1, 4, 6]);
        let o1 = attn.forward(&p, &q, &kv_t, None).unwrap();
        let o2 = attn.forward(&p, &q, &kv_pt, None).unwrap();
        for (a, b) in o1.to_vec().iter().zip(o2.to_vec()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn attention_all_masked_query_errors() {
        let spec = AttentionSpec { model_dim: 4, num_heads: 1 };
        let mut ps = ParamSet::new();
        let attn = MultiHeadAttention::new(&mut ps, "a", spec, &mut rng());
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let q = Tensor::new(vec![0.1; 4], &[1, 1, 4]);
        let kv = Tensor::new(vec![0.2; 8], &[1, 2, 4]);
        let mask = Tensor::new(vec![0.0, 0.0], &[1, 2]);
        assert!(matches!(
            attn.forward(&p, &q, &kv, Some(&mask)),
            Err(Error::EmptyKeySet)
        ));
    }

    #[test]
    fn encoder_depth_zero_is_identity() {
        let spec = AttentionSpec { model_dim: 4, num_heads: 2 };
        let mut ps = ParamSet::new();
        let enc = TransformerEncoder::new(
            &mut ps,
            "e",
            spec,
            8,
            0,
            Activation::Gelu,
            NormPlacement::Pre,
            &mut rng(),
        );
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let x = Tensor::new((0..12).map(|i| i as f64).collect(), &[1, 3, 4]);
        assert_eq!(enc.forward(&p, &x, None).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn encoder_token_permutation_equivariance() {
        let spec = AttentionSpec { model_dim: 6, num_heads: 2 };
        let mut ps = ParamSet::new();
        let enc = TransformerEncoder::new(
            &mut ps,
            "e",
            spec,
            12,
            2,
            Activation::Gelu,
            NormPlacement::Pre,
            &mut rng(),
        );
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let mut r = rng();
        let x: Vec<f64> = (0..5 * 6).map(|_| r.normal()).collect();
        let perm = [4usize, 2, 0, 1, 3];
        let mut xp = vec![0.0; x.len()];
        for (new, &old) in perm.iter().enumerate() {
            xp[new * 6..(new + 1) * 6].copy_from_slice(&x[old * 6..(old + 1) * 6]);
        }
        let o = enc
            .forward(&p, &Tensor::new(x, &[1, 5, 6]), None)
            .unwrap()
            .to_vec();
        let op = enc
            .forward(&p, &Tensor::new(xp, &[1, 5, 6]), None)
            .unwrap()
            .to_vec();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..6 {
                assert!((op[new * 6 + c] - o[old * 6 + c]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn decoder_depth_zero_is_identity_and_memory_permutation_invariant() {
        let spec = AttentionSpec { model_dim: 4, num_heads: 1 };
        let mut ps = ParamSet::new();
        let dec0 = TransformerDecoder::new(
            &mut ps,
            "d0",
            spec,
            8,
            0,
            Activation::Gelu,
            NormPlacement::Pre,
            &mut rng(),
        );
        let dec = TransformerDecoder::new(
            &mut ps,
            "d",
            spec,
            8,
            1,
            Activation::Gelu,
            NormPlacement::Pre,
            &mut rng(),
        );
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let tgt = Tensor::new((0..8).map(|i| i as f64 * 0.3).collect(), &[1, 2, 4]);
        let mut r = rng();
        let mem: Vec<f64> = (0..3 * 4).map(|_| r.normal()).collect();
        let mem_t = Tensor::new(mem.clone(), &[1, 3, 4]);
        assert_eq!(
            dec0.forward(&p, &tgt, &mem_t, None, None).unwrap().to_vec(),
            tgt.to_vec()
        );
        let perm = [1usize, 2, 0];
        let mut mp = vec![0.0; mem.len()];
        for (new, &old) in perm.iter().enumerate() {
            mp[new * 4..(new + 1) * 4].copy_from_slice(&mem[old * 4..(old + 1) * 4]);
        }
        let o1 = dec.forward(&p, &tgt, &mem_t, None, None).unwrap().to_vec();
        let o2 = dec
            .forward(&p, &tgt, &Tensor::new(mp, &[1, 3, 4]), None, None)
            .unwrap()
            .to_vec();
        for (a, b) in o1.iter().zip(o2) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn message_passing_zero_steps_is_identity() {
        let mut ps = ParamSet::new();
        let mp = MessagePassing::new(&mut ps, "mp", 4, Activation::Gelu, &mut rng());
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let nodes = Tensor::new((0..12).map(|i| i as f64).collect(), &[3, 4]);
        let out = mp.forward(&p, &nodes, &[(0, 1), (1, 0)], 0);
        assert_eq!(out.to_vec(), nodes.to_vec());
    }

    #[test]
    fn message_passing_edgeless_is_local() {
        let mut ps = ParamSet::new();
        let mp = MessagePassing::new(&mut ps, "mp", 3, Activation::Gelu, &mut rng());
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let base = Tensor::new(vec![0.1, 0.2, 0.3, 1.0, 1.1, 1.2], &[2, 3]);
        let out1 = mp.forward(&p, &base, &[], 2).to_vec();
        // perturb node 1 only; node 0's output must not move
        let pert = Tensor::new(vec![0.1, 0.2, 0.3, 9.0, -4.0, 2.5], &[2, 3]);
        let out2 = mp.forward(&p, &pert, &[], 2).to_vec();
        for c in 0..3 {
            assert_eq!(out1[c], out2[c], "cross-node flow without edges");
        }
        assert!(out1[3..] != out2[3..]);
    }

    #[test]
    fn grid_graph_shape() {
        let g = LatentGraph::regular_grid(3, 3, &[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(g.n_nodes, 9);
        assert_eq!(g.edges.len(), 12); // 2 * 3 * (3-1)
        assert_eq!(&g.positions[0..2], &[0.0, 0.0]);
        assert_eq!(&g.positions[16..18], &[1.0, 1.0]);
    }

    #[test]
    fn knn_graph_is_undirected_without_duplicates() {
        let pos = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0];
        let g = LatentGraph::knn(&pos, 4, 2, 2);
        let mut seen = std::collections::BTreeSet::new();
        for &(u, v) in &g.edges {
            assert!(u < v, "normalized order expected");
            assert!(seen.insert((u, v)));
        }
    }
}
