
use clap::Subcommand;

use scatterfield::data::{
    gen_poisson_dataset, gen_random_retrieval, gen_sine_retrieval, manifest_for,
    poisson_params_json, random_params_json, sine_params_json, write_dataset, write_manifest,
    Dataset, Normalization, PoissonParams, VAL_SEED_OFFSET,
};

use crate::util::prepare_out_dir;
use crate::{CliError, CliResult, Ctx};

#[derive(Subcommand)]
pub enum GenerateCmd {
    /// Duplication task on sin(pi f x) cos(pi f y).
    Sine {
        /// Frequency governing task difficulty.
        #[arg(long, default_value_t = 1.0)]
        f: f64,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 1_000)]
        val_pairs: usize,
        #[arg(long, default_value_t = 64)]
        set_size: usize,
    },
    /// Duplication task with values independent of positions.
    Random {
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 1_000)]
        val_pairs: usize,
        #[arg(long, default_value_t = 64)]
        set_size: usize,
    },
    /// Heat diffusion on the unit square from the finite-difference oracle.
    Poisson {
        #[arg(long, default_value_t = 512)]
        pairs: usize,
        #[arg(long, default_value_t = 128)]
        val_pairs: usize,
        /// Oracle grid resolution per side.
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long, default_value_t = 1)]
        sources_min: usize,
        #[arg(long, default_value_t = 4)]
        sources_max: usize,
        /// Boundary context points per side.
        #[arg(long, default_value_t = 8)]
        boundary_samples: usize,
        #[arg(long, default_value_t = 64)]
        targets: usize,
    },
}

pub fn run(ctx: &Ctx, cmd: GenerateCmd) -> CliResult<()> {
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| CliError::Config("generate needs --out <dir>".into()))?;
    prepare_out_dir(&out, ctx.force)?;
    let seed = ctx.seed;
    let val_seed = seed + VAL_SEED_OFFSET;

    let (name, params, mut train_set, val_set): (&str, serde_json::Value, Dataset, Dataset) =
        match &cmd {
            GenerateCmd::Sine { f, pairs, val_pairs, set_size } => (
                "sine",
                sine_params_json(*f, *set_size),
                gen_sine_retrieval(*f, *pairs, *set_size, seed),
                gen_sine_retrieval(*f, *val_pairs, *set_size, val_seed),
            ),
            GenerateCmd::Random { pairs, val_pairs, set_size } => (
                "random",
                random_params_json(*set_size),
                gen_random_retrieval(*pairs, *set_size, seed),
                gen_random_retrieval(*val_pairs, *set_size, val_seed),
            ),
            GenerateCmd::Poisson {
                pairs,
                val_pairs,
                grid,
                sources_min,
                sources_max,
                boundary_samples,
                targets,
            } => {
                let p = PoissonParams {
                    grid_n: *grid,
                    n_sources_min: *sources_min,
                    n_sources_max: *sources_max,
                    samples_per_side: *boundary_samples,
                    n_targets: *targets,
                };
                (
                    "poisson",
                    poisson_params_json(&p),
                    gen_poisson_dataset(*pairs, &p, seed)?,
                    gen_poisson_dataset(*val_pairs, &p, val_seed)?,
                )
            }
        };

    let norm = Normalization::fit(&train_set.pairs, train_set.dims);
    train_set.normalization = norm.clone();
    let manifest = manifest_for(
        name,
        params,
        seed,
        train_set.dims,
        train_set.len(),
        val_set.len(),
        norm,
    );
    write_dataset(&out.join("train.jsonl"), &train_set)?;
    write_dataset(&out.join("val.jsonl"), &val_set)?;
    write_manifest(&out.join("manifest.json"), &manifest)?;
    println!(
        "generated {name}: {} train / {} val pairs, dims (X={}, I={}, O={}), seed {seed} -> {}",
        train_set.len(),
        val_set.len(),
        manifest.dims.x,
        manifest.dims.i,
        manifest.dims.o,
        out.display()
    );
    Ok(())
}
