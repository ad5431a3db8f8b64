//! Attention-based forecasters: MSA, TFS and the perceiver hybrid PER.

use crate::autodiff::concat;
use crate::data::Batch;
use crate::encoding::EncodingScheme;
use crate::error::Result;
use crate::layers::{LayerNorm, Linear, Mlp, PerceiverBlock, TransformerDecoder, TransformerEncoder};
use crate::models::Prediction;
use crate::params::BoundParams;

/// Context and target tokens in one sequence through a shared encoder
/// stack; readout applies to the target slots only.
pub(crate) fn msa_forward(
    scheme: &EncodingScheme,
    encoder: &TransformerEncoder,
    readout: &Mlp,
    p: &BoundParams,
    batch: &Batch,
) -> Result<Prediction> {
    let e_c = scheme.encode_context(p, &batch.x_c, &batch.y_c);
    let e_t = scheme.encode_targets(p, &batch.x_t);
    let tokens = concat(&[&e_c, &e_t], 1);
    let key_mask = concat(&[&batch.mask_c, &batch.mask_t], 1);
    let h = encoder.forward(p, &tokens, Some(&key_mask))?;
    let l_t = h.narrow(1, batch.nc, batch.nt);
    let y_hat = readout.forward(p, &l_t);
    Ok(Prediction {
        y_hat,
        latents: Some(h),
    })
}

/// Encoder over context tokens, decoder over target tokens with non-causal
/// self-attention and cross-attention into the encoder memory. With
/// distance-based conditioning the cross-attention is replaced by a
/// softmax(-beta * distance) average of the memory.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tfs_forward(
    scheme: &EncodingScheme,
    encoder: &TransformerEncoder,
    decoder: &TransformerDecoder,
    beta: Option<usize>,
    eta: Option<&Linear>,
    readout: &Mlp,
    p: &BoundParams,
    batch: &Batch,
) -> Result<Prediction> {
    let e_c = scheme.encode_context(p, &batch.x_c, &batch.y_c);
    let e_t = scheme.encode_targets(p, &batch.x_t);
    let memory = encoder.forward(p, &e_c, Some(&batch.mask_c))?;
    let l_t = match (beta, eta) {
        (Some(beta), Some(eta)) => {
            let d = batch.x_t.pairwise_dist(&batch.x_c, false);
            let scores = d.mul(&p.get(beta).exp()).neg();
            let mask3 = batch.mask_c.reshape(&[batch.size, 1, batch.nc]);
            let weights = scores.masked_softmax(2, &mask3)?;
            let z = weights.matmul(&memory);
            eta.forward(p, &concat(&[&z, &e_t], 2))
        }
        _ => decoder.forward(
            p,
            &e_t,
            &memory,
            Some(&batch.mask_t),
            Some(&batch.mask_c),
        )?,
    };
    let y_hat = readout.forward(p, &l_t);
    Ok(Prediction {
        y_hat,
        latents: Some(l_t),
    })
}

/// MSA layout with each block's self-attention replaced by a perceiver
/// layer squeezing token interaction through P learned latent vectors.
pub(crate) fn per_forward(
    scheme: &EncodingScheme,
    blocks: &[PerceiverBlock],
    final_ln: &LayerNorm,
    readout: &Mlp,
    p: &BoundParams,
    batch: &Batch,
) -> Result<Prediction> {
    let e_c = scheme.encode_context(p, &batch.x_c, &batch.y_c);
    let e_t = scheme.encode_targets(p, &batch.x_t);
    let mut h = concat(&[&e_c, &e_t], 1);
    let key_mask = concat(&[&batch.mask_c, &batch.mask_t], 1);
    for block in blocks {
        h = block.forward(p, &h, Some(&key_mask))?;
    }
    h = final_ln.forward(p, &h);
    let l_t = h.narrow(1, batch.nc, batch.nt);
    let y_hat = readout.forward(p, &l_t);
    Ok(Prediction {
        y_hat,
        latents: Some(h),
    })
}
