//! Padded batches with validity masks.

use crate::autodiff::Tensor;
use crate::data::{Dataset, Dims, Normalization};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A fixed-size collection of padded context/target sets. Masked-out slots
/// are zero-filled; mask sums equal true set lengths. Values are stored in
/// standardized units when built with a non-identity normalization.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x_c: Tensor,
    pub y_c: Tensor,
    pub x_t: Tensor,
    pub y_t: Tensor,
    pub mask_c: Tensor,
    pub mask_t: Tensor,
    pub size: usize,
    pub nc: usize,
    pub nt: usize,
    pub dims: Dims,
    /// Dataset pair index per slot, in batch order.
    pub pair_indices: Vec<usize>,
}

impl Batch {
    /// Assemble a batch from dataset pairs, standardizing values with `norm`.
    pub fn from_pairs(
        dataset: &Dataset,
        indices: &[usize],
        norm: &Normalization,
    ) -> Result<Batch> {
        assert!(!indices.is_empty(), "empty batch");
        let dims = dataset.dims;
        let b = indices.len();
        let nc = indices
            .iter()
            .map(|&i| dataset.pairs[i].n_context())
            .max()
            .unwrap();
        let nt = indices
            .iter()
            .map(|&i| dataset.pairs[i].n_targets())
            .max()
            .unwrap();
        if nc == 0 {
            return Err(Error::EmptyContext);
        }
        if nt == 0 {
            return Err(Error::EmptyTargets);
        }
        let mut x_c = vec![0.0; b * nc * dims.x];
        let mut y_c = vec![0.0; b * nc * dims.i];
        let mut x_t = vec![0.0; b * nt * dims.x];
        let mut y_t = vec![0.0; b * nt * dims.o];
        let mut mask_c = vec![0.0; b * nc];
        let mut mask_t = vec![0.0; b * nt];
        for (bi, &pi) in indices.iter().enumerate() {
            let pair = &dataset.pairs[pi];
            for (r, row) in pair.x_c.iter().enumerate() {
                x_c[(bi * nc + r) * dims.x..(bi * nc + r + 1) * dims.x].copy_from_slice(row);
                mask_c[bi * nc + r] = 1.0;
            }
            for (r, row) in pair.y_c.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    y_c[(bi * nc + r) * dims.i + c] = (v - norm.y_c_mean[c]) / norm.y_c_std[c];
                }
            }
            for (r, row) in pair.x_t.iter().enumerate() {
                x_t[(bi * nt + r) * dims.x..(bi * nt + r + 1) * dims.x].copy_from_slice(row);
                mask_t[bi * nt + r] = 1.0;
            }
            for (r, row) in pair.y_t.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    y_t[(bi * nt + r) * dims.o + c] = (v - norm.y_t_mean[c]) / norm.y_t_std[c];
                }
            }
        }
        Ok(Batch {
            x_c: Tensor::new(x_c, &[b, nc, dims.x]),
            y_c: Tensor::new(y_c, &[b, nc, dims.i]),
            x_t: Tensor::new(x_t, &[b, nt, dims.x]),
            y_t: Tensor::new(y_t, &[b, nt, dims.o]),
            mask_c: Tensor::new(mask_c, &[b, nc]),
            mask_t: Tensor::new(mask_t, &[b, nt]),
            size: b,
            nc,
            nt,
            dims,
            pair_indices: indices.to_vec(),
        })
    }

    /// Context lengths per slot (mask row sums).
    pub fn context_lengths(&self) -> Vec<usize> {
        (0..self.size)
            .map(|bi| {
                self.mask_c.data()[bi * self.nc..(bi + 1) * self.nc]
                    .iter()
                    .map(|&v| v as usize)
                    .sum()
            })
            .collect()
    }

    pub fn target_lengths(&self) -> Vec<usize> {
        (0..self.size)
            .map(|bi| {
                self.mask_t.data()[bi * self.nt..(bi + 1) * self.nt]
                    .iter()
                    .map(|&v| v as usize)
                    .sum()
            })
            .collect()
    }

    /// Every slot must have at least one context point and one target.
    pub fn require_nonempty(&self) -> Result<()> {
        if self.context_lengths().iter().any(|&n| n == 0) {
            return Err(Error::EmptyContext);
        }
        if self.target_lengths().iter().any(|&n| n == 0) {
            return Err(Error::EmptyTargets);
        }
        Ok(())
    }
}

/// Deterministically shuffled batches of (at most) `batch_size` pairs.
/// Padding goes to each batch's own maximum lengths.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    norm: &Normalization,
) -> Result<Vec<Batch>> {
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        Rng::new(seed).shuffle(&mut order);
    }
    order
        .chunks(batch_size)
        .map(|chunk| Batch::from_pairs(dataset, chunk, norm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ContextTargetPair, Dims};

    fn variable_dataset() -> Dataset {
        let dims = Dims { x: 2, i: 1, o: 1 };
        let mk = |n: usize, m: usize| ContextTargetPair {
            x_c: (0..n).map(|i| vec![i as f64, 0.0]).collect(),
            y_c: (0..n).map(|i| vec![i as f64]).collect(),
            x_t: (0..m).map(|i| vec![0.0, i as f64]).collect(),
            y_t: (0..m).map(|i| vec![-(i as f64)]).collect(),
        };
        Dataset::new(dims, vec![mk(3, 2), mk(1, 4), mk(2, 1), mk(5, 5)])
    }

    #[test]
    fn mask_sums_equal_true_lengths() {
        let ds = variable_dataset();
        let norm = Normalization::identity(ds.dims);
        let batches = make_batches(&ds, 2, None, &norm).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].context_lengths(), vec![3, 1]);
        assert_eq!(batches[0].target_lengths(), vec![2, 4]);
        // masked-out slots stay zero-filled
        let yc = batches[0].y_c.data();
        assert_eq!(yc[(1 * batches[0].nc + 1) * 1], 0.0);
    }

    #[test]
    fn same_seed_same_order() {
        let ds = variable_dataset();
        let norm = Normalization::identity(ds.dims);
        let a = make_batches(&ds, 2, Some(9), &norm).unwrap();
        let b = make_batches(&ds, 2, Some(9), &norm).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pair_indices, y.pair_indices);
        }
        let c = make_batches(&ds, 2, Some(10), &norm).unwrap();
        assert_ne!(
            a.iter().flat_map(|b| b.pair_indices.clone()).collect::<Vec<_>>(),
            c.iter().flat_map(|b| b.pair_indices.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn standardization_applies_and_padding_stays_zero() {
        let ds = variable_dataset();
        let mut norm = Normalization::identity(ds.dims);
        norm.y_t_mean[0] = 1.0;
        norm.y_t_std[0] = 2.0;
        let batches = make_batches(&ds, 4, None, &norm).unwrap();
        let b = &batches[0];
        // first pair, first target value: (0 - 1) / 2
        assert_eq!(b.y_t.data()[0], -0.5);
    }
}
