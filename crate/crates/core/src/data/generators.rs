//! Synthetic dataset generators.
//!
//! All generators are pure functions of their parameters and seed; pair `i`
//! draws from the stream derived as `seed + i`, so generation order (or
//! parallel evaluation, if anyone adds it) cannot change the output.

use serde_json::json;

use crate::data::poisson::{solve_poisson, Source};
use crate::data::{ContextTargetPair, Dataset, DatasetManifest, Dims, Normalization};
use crate::error::Result;
use crate::rng::Rng;

fn gaussian_positions(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| vec![rng.normal(), rng.normal()]).collect()
}

/// Duplication task on the smooth field sin(pi f x) cos(pi f y): targets
/// repeat the context exactly.
pub fn gen_sine_retrieval(f: f64, n_pairs: usize, set_size: usize, seed: u64) -> Dataset {
    assert!(f > 0.0, "frequency must be positive");
    let dims = Dims { x: 2, i: 1, o: 1 };
    let base = Rng::new(seed);
    let pairs = (0..n_pairs)
        .map(|i| {
            let mut rng = base.derive(i as u64);
            let x_c = gaussian_positions(&mut rng, set_size);
            let y_c: Vec<Vec<f64>> = x_c
                .iter()
                .map(|p| {
                    vec![(std::f64::consts::PI * f * p[0]).sin() * (std::f64::consts::PI * f * p[1]).cos()]
                })
                .collect();
            ContextTargetPair {
                x_t: x_c.clone(),
                y_t: y_c.clone(),
                x_c,
                y_c,
            }
        })
        .collect();
    Dataset::new(dims, pairs)
}

/// Duplication task with values independent of positions.
pub fn gen_random_retrieval(n_pairs: usize, set_size: usize, seed: u64) -> Dataset {
    let dims = Dims { x: 2, i: 1, o: 1 };
    let base = Rng::new(seed);
    let pairs = (0..n_pairs)
        .map(|i| {
            let mut rng = base.derive(i as u64);
            let x_c = gaussian_positions(&mut rng, set_size);
            let y_c: Vec<Vec<f64>> = (0..set_size).map(|_| vec![rng.normal()]).collect();
            ContextTargetPair {
                x_t: x_c.clone(),
                y_t: y_c.clone(),
                x_c,
                y_c,
            }
        })
        .collect();
    Dataset::new(dims, pairs)
}

#[derive(Clone, Debug)]
pub struct PoissonParams {
    pub grid_n: usize,
    pub n_sources_min: usize,
    pub n_sources_max: usize,
    pub samples_per_side: usize,
    pub n_targets: usize,
}

impl Default for PoissonParams {
    fn default() -> Self {
        PoissonParams {
            grid_n: 64,
            n_sources_min: 1,
            n_sources_max: 4,
            samples_per_side: 8,
            n_targets: 64,
        }
    }
}

/// Heat-diffusion pairs from the finite-difference oracle.
///
/// Context rows are sources `(x, y) -> (mu, 0, 0)` and boundary points
/// `(x, y) -> (0, omega, 1)`; targets are bilinear samples of the solution
/// at uniform-random interior points. Point sources enter the equation as
/// psi = mu / h^2 at one grid node (a unit-mass source smeared over one
/// cell), which keeps solution magnitudes O(mu).
pub fn gen_poisson_dataset(n_pairs: usize, params: &PoissonParams, seed: u64) -> Result<Dataset> {
    let dims = Dims { x: 2, i: 3, o: 1 };
    let n = params.grid_n;
    let h = 1.0 / (n - 1) as f64;
    let dirac = 1.0 / (h * h);
    let base = Rng::new(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mut rng = base.derive(i as u64);
        let n_sources = params.n_sources_min + rng.below(params.n_sources_max - params.n_sources_min + 1);
        let mut sources = Vec::with_capacity(n_sources);
        for _ in 0..n_sources {
            sources.push(Source {
                ix: 1 + rng.below(n - 2),
                iy: 1 + rng.below(n - 2),
                value: rng.uniform_in(-1.0, 1.0),
            });
        }
        let omega = rng.uniform_in(-1.0, 1.0);
        let scaled: Vec<Source> = sources
            .iter()
            .map(|s| Source { value: s.value * dirac, ..*s })
            .collect();
        let solution = solve_poisson(n, &scaled, omega, 1e-8)?;

        let mut x_c = Vec::new();
        let mut y_c = Vec::new();
        for s in &sources {
            x_c.push(vec![s.ix as f64 * h, s.iy as f64 * h]);
            y_c.push(vec![s.value, 0.0, 0.0]);
        }
        // 4 * samples_per_side equispaced boundary points, walked around the
        // perimeter without duplicating corners.
        let sps = params.samples_per_side;
        for k in 0..sps {
            let t = k as f64 / sps as f64;
            for (bx, by) in [(t, 0.0), (1.0, t), (1.0 - t, 1.0), (0.0, 1.0 - t)] {
                x_c.push(vec![bx, by]);
                y_c.push(vec![0.0, omega, 1.0]);
            }
        }

        let mut x_t = Vec::with_capacity(params.n_targets);
        let mut y_t = Vec::with_capacity(params.n_targets);
        for _ in 0..params.n_targets {
            let tx = rng.uniform();
            let ty = rng.uniform();
            x_t.push(vec![tx, ty]);
            y_t.push(vec![solution.interpolate(tx, ty)]);
        }
        pairs.push(ContextTargetPair { x_c, y_c, x_t, y_t });
    }
    Ok(Dataset::new(dims, pairs))
}

/// Manifest describing a generated train/val split.
pub fn manifest_for(
    generator: &str,
    params: serde_json::Value,
    seed: u64,
    dims: Dims,
    n_train: usize,
    n_val: usize,
    normalization: Normalization,
) -> DatasetManifest {
    DatasetManifest {
        dims,
        n_train,
        n_val,
        generator: generator.to_string(),
        params,
        seed,
        normalization,
    }
}

/// Regenerate a dataset split from its manifest.
/// Validation pairs use the stream `seed + 1_000_000_007` so the two splits
/// never overlap.
pub const VAL_SEED_OFFSET: u64 = 1_000_000_007;

pub fn regenerate(manifest: &DatasetManifest, split: &str) -> Result<Dataset> {
    let (n_pairs, seed) = match split {
        "train" => (manifest.n_train, manifest.seed),
        "val" => (manifest.n_val, manifest.seed + VAL_SEED_OFFSET),
        other => {
            return Err(crate::Error::Config(format!("unknown split `{other}`")));
        }
    };
    let mut ds = match manifest.generator.as_str() {
        "sine" => {
            let f = manifest.params["f"].as_f64().unwrap_or(1.0);
            let set_size = manifest.params["set_size"].as_u64().unwrap_or(64) as usize;
            gen_sine_retrieval(f, n_pairs, set_size, seed)
        }
        "random" => {
            let set_size = manifest.params["set_size"].as_u64().unwrap_or(64) as usize;
            gen_random_retrieval(n_pairs, set_size, seed)
        }
        "poisson" => {
            let p = PoissonParams {
                grid_n: manifest.params["grid_n"].as_u64().unwrap_or(64) as usize,
                n_sources_min: manifest.params["n_sources_min"].as_u64().unwrap_or(1) as usize,
                n_sources_max: manifest.params["n_sources_max"].as_u64().unwrap_or(4) as usize,
                samples_per_side: manifest.params["samples_per_side"].as_u64().unwrap_or(8) as usize,
                n_targets: manifest.params["n_targets"].as_u64().unwrap_or(64) as usize,
            };
            gen_poisson_dataset(n_pairs, &p, seed)?
        }
        other => {
            return Err(crate::Error::Config(format!("unknown generator `{other}`")));
        }
    };
    ds.normalization = manifest.normalization.clone();
    Ok(ds)
}

pub fn sine_params_json(f: f64, set_size: usize) -> serde_json::Value {
    json!({ "f": f, "set_size": set_size })
}

pub fn random_params_json(set_size: usize) -> serde_json::Value {
    json!({ "set_size": set_size })
}

pub fn poisson_params_json(p: &PoissonParams) -> serde_json::Value {
    json!({
        "grid_n": p.grid_n,
        "n_sources_min": p.n_sources_min,
        "n_sources_max": p.n_sources_max,
        "samples_per_side": p.samples_per_side,
        "n_targets": p.n_targets,
    })
}
