//! Datasets: context/target pairs, generators, serialization, batching.

mod batch;
mod generators;
mod io;
pub mod poisson;

pub use batch::{make_batches, Batch};
pub use generators::{
    gen_poisson_dataset, gen_random_retrieval, gen_sine_retrieval, manifest_for,
    poisson_params_json, random_params_json, regenerate, sine_params_json, PoissonParams,
    VAL_SEED_OFFSET,
};
pub use io::{read_dataset, read_manifest, write_dataset, write_manifest};

use serde::{Deserialize, Serialize};

/// Position/value dimensions (X, I, O) of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub x: usize,
    pub i: usize,
    pub o: usize,
}

/// One sample: a context set and a target set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContextTargetPair {
    /// Context positions, Nc rows of X.
    pub x_c: Vec<Vec<f64>>,
    /// Context values, Nc rows of I.
    pub y_c: Vec<Vec<f64>>,
    /// Target positions, Nt rows of X.
    pub x_t: Vec<Vec<f64>>,
    /// Target values, Nt rows of O.
    pub y_t: Vec<Vec<f64>>,
}

impl ContextTargetPair {
    pub fn n_context(&self) -> usize {
        self.x_c.len()
    }

    pub fn n_targets(&self) -> usize {
        self.x_t.len()
    }

    /// Check inner dimensions and finiteness against `dims`.
    pub fn validate(&self, dims: Dims, index: usize) -> crate::Result<()> {
        let check = |rows: &[Vec<f64>], want: usize, what: &str| -> crate::Result<()> {
            for row in rows {
                if row.len() != want {
                    return Err(crate::Error::PairDim {
                        index,
                        msg: format!("{what} row has {} entries, expected {want}", row.len()),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(crate::Error::PairDim {
                        index,
                        msg: format!("{what} contains a non-finite value"),
                    });
                }
            }
            Ok(())
        };
        if self.x_c.is_empty() {
            return Err(crate::Error::PairDim {
                index,
                msg: "empty context set".into(),
            });
        }
        if self.x_t.is_empty() {
            return Err(crate::Error::PairDim {
                index,
                msg: "empty target set".into(),
            });
        }
        if self.x_c.len() != self.y_c.len() || self.x_t.len() != self.y_t.len() {
            return Err(crate::Error::PairDim {
                index,
                msg: "position/value counts disagree".into(),
            });
        }
        check(&self.x_c, dims.x, "x_c")?;
        check(&self.y_c, dims.i, "y_c")?;
        check(&self.x_t, dims.x, "x_t")?;
        check(&self.y_t, dims.o, "y_t")
    }
}

/// Per-channel affine standardization statistics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Normalization {
    pub y_c_mean: Vec<f64>,
    pub y_c_std: Vec<f64>,
    pub y_t_mean: Vec<f64>,
    pub y_t_std: Vec<f64>,
}

impl Normalization {
    /// Identity normalization for given dims.
    pub fn identity(dims: Dims) -> Normalization {
        Normalization {
            y_c_mean: vec![0.0; dims.i],
            y_c_std: vec![1.0; dims.i],
            y_t_mean: vec![0.0; dims.o],
            y_t_std: vec![1.0; dims.o],
        }
    }

    /// Estimate from the pairs of a training split. Degenerate channels get
    /// unit scale so standardization stays invertible.
    pub fn fit(pairs: &[ContextTargetPair], dims: Dims) -> Normalization {
        let fit_rows = |select: &dyn Fn(&ContextTargetPair) -> &Vec<Vec<f64>>, ch: usize| {
            let mut mean = vec![0.0; ch];
            let mut count = 0usize;
            for p in pairs {
                for row in select(p) {
                    for (c, v) in row.iter().enumerate() {
                        mean[c] += v;
                    }
                    count += 1;
                }
            }
            let count = count.max(1);
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0; ch];
            for p in pairs {
                for row in select(p) {
                    for (c, v) in row.iter().enumerate() {
                        let d = v - mean[c];
                        var[c] += d * d;
                    }
                }
            }
            let std: Vec<f64> = var
                .iter()
                .map(|v| {
                    let s = (v / count as f64).sqrt();
                    if s > 1e-12 {
                        s
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, std)
        };
        let (y_c_mean, y_c_std) = fit_rows(&|p| &p.y_c, dims.i);
        let (y_t_mean, y_t_std) = fit_rows(&|p| &p.y_t, dims.o);
        Normalization {
            y_c_mean,
            y_c_std,
            y_t_mean,
            y_t_std,
        }
    }
}

/// Everything needed to regenerate and interpret a dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dims: Dims,
    pub n_train: usize,
    pub n_val: usize,
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub normalization: Normalization,
}

/// An in-memory dataset split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dims: Dims,
    pub pairs: Vec<ContextTargetPair>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(dims: Dims, pairs: Vec<ContextTargetPair>) -> Dataset {
        Dataset {
            dims,
            pairs,
            normalization: Normalization::identity(dims),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> ContextTargetPair {
        ContextTargetPair {
            x_c: vec![vec![0.0, 0.0]],
            y_c: vec![vec![1.0]],
            x_t: vec![vec![0.5, 0.5]],
            y_t: vec![vec![2.0]],
        }
    }

    #[test]
    fn validate_catches_bad_rows() {
        let dims = Dims { x: 2, i: 1, o: 1 };
        assert!(pair().validate(dims, 0).is_ok());
        let mut bad = pair();
        bad.y_c[0].push(9.0);
        assert!(matches!(
            bad.validate(dims, 3),
            Err(crate::Error::PairDim { index: 3, .. })
        ));
        let mut nan = pair();
        nan.y_t[0][0] = f64::NAN;
        assert!(nan.validate(dims, 0).is_err());
    }

    #[test]
    fn normalization_fit_is_invertible() {
        let dims = Dims { x: 2, i: 1, o: 1 };
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let mut p = pair();
                p.y_c[0][0] = i as f64;
                p.y_t[0][0] = 2.0 * i as f64 + 1.0;
                p
            })
            .collect();
        let norm = Normalization::fit(&pairs, dims);
        assert!((norm.y_c_mean[0] - 4.5).abs() < 1e-12);
        assert!(norm.y_c_std[0] > 0.0);
        let standardized = (7.0 - norm.y_t_mean[0]) / norm.y_t_std[0];
        let back = standardized * norm.y_t_std[0] + norm.y_t_mean[0];
        assert!((back - 7.0).abs() < 1e-12);
    }
}
