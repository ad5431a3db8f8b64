//! CNP (single-vector context summary) and the GKA kernel baseline.

use crate::autodiff::{concat, Tensor};
use crate::data::Batch;
use crate::encoding::EncodingScheme;
use crate::error::{Error, Result};
use crate::layers::{Linear, Mlp, MultiHeadAttention};
use crate::models::Prediction;
use crate::params::BoundParams;

/// Masked mean of encoded context into one latent vector, combined with
/// each target embedding by a linear projection (or cross-attention when
/// configured), then the readout.
pub(crate) fn cnp_forward(
    scheme: &EncodingScheme,
    eta: Option<&Linear>,
    cross: Option<&MultiHeadAttention>,
    readout: &Mlp,
    p: &BoundParams,
    batch: &Batch,
) -> Result<Prediction> {
    let e_c = scheme.encode_context(p, &batch.x_c, &batch.y_c);
    let e_t = scheme.encode_targets(p, &batch.x_t);
    let mask3 = batch.mask_c.reshape(&[batch.size, batch.nc, 1]);
    let l_c = e_c
        .masked_mean_axis(1, &mask3)
        .map_err(|_| Error::EmptyContext)?; // [B, E]

    let l_t = match (eta, cross) {
        (Some(eta), _) => {
            // broadcast the summary over target slots and concatenate
            let wide = l_c
                .reshape(&[batch.size, 1, scheme.e_dim])
                .add(&Tensor::zeros(&[batch.size, batch.nt, scheme.e_dim]));
            eta.forward(p, &concat(&[&wide, &e_t], 2))
        }
        (None, Some(cross)) => {
            let memory = l_c.reshape(&[batch.size, 1, scheme.e_dim]);
            e_t.add(&cross.forward(p, &e_t, &memory, None)?)
        }
        (None, None) => unreachable!("cnp needs a conditioning function"),
    };
    let y_hat = readout.forward(p, &l_t);
    Ok(Prediction {
        y_hat,
        latents: None,
    })
}

/// Gaussian kernel averaging: predictions are convex combinations of the
/// context values, weighted by softmax of negative squared distance under
/// learnable per-axis length scales. Always inside the context-value hull.
pub(crate) fn gka_forward(inv_scale: usize, p: &BoundParams, batch: &Batch) -> Result<Prediction> {
    let s = p.get(inv_scale); // [X]
    let xs_t = batch.x_t.mul(s);
    let xs_c = batch.x_c.mul(s);
    let d2 = xs_t.pairwise_dist(&xs_c, true);
    let mask3 = batch.mask_c.reshape(&[batch.size, 1, batch.nc]);
    let weights = d2.neg().masked_softmax(2, &mask3).map_err(|_| Error::EmptyContext)?;
    let y_hat = weights.matmul(&batch.y_c);
    Ok(Prediction {
        y_hat,
        latents: None,
    })
}
