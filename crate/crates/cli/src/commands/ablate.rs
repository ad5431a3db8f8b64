use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use scatterfield::encoding::SchemeVariant;
use scatterfield::models::{Model, ModelKind, Tier};
use scatterfield::training::{train, TrainConfig};

use crate::util::prepare_out_dir;
use crate::{CliError, CliResult, Ctx};

#[derive(Args)]
pub struct AblateArgs {
    /// Comma-separated model list, e.g. msa,gen,cnp.
    #[arg(long, value_delimiter = ',', default_value = "msa")]
    pub models: Vec<ModelKind>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated tiers.
    #[arg(long, value_delimiter = ',', default_value = "20k")]
    pub tiers: Vec<Tier>,
    /// Independent seeds per cell.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    /// GEN latent grid.
    #[arg(long, default_value = "7x7")]
    pub grid: String,
    /// Worker threads over independent runs.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

/// Error ratio in percent; exactly 100 for identical errors.
pub fn ratio_pct(err_shared: f64, err_default: f64) -> f64 {
    100.0 * err_shared / err_default
}

pub fn run(ctx: &Ctx, args: AblateArgs) -> CliResult<()> {
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| CliError::Config("ablate-encoding needs --out <dir>".into()))?;
    prepare_out_dir(&out, ctx.force)?;
    let (_, train_set) = super::load_split(&args.data, "train")?;
    let (_, val_set) = super::load_split(&args.data, "val")?;
    let grid = super::train::parse_grid(&args.grid)?;

    // one cell per (model, tier, seed, scheme)
    struct Cell {
        model: ModelKind,
        tier: Tier,
        seed: u64,
        scheme: SchemeVariant,
    }
    let mut cells = Vec::new();
    for &model in &args.models {
        for &tier in &args.tiers {
            for s in 0..args.seeds {
                for scheme in [SchemeVariant::SharedPosition, SchemeVariant::Default] {
                    cells.push(Cell { model, tier, seed: ctx.seed + s, scheme });
                }
            }
        }
    }

    let run_cell = |cell: &Cell| -> Result<f64, scatterfield::Error> {
        let mut model = Model::preset(cell.model, cell.tier, train_set.dims, cell.seed)?;
        model.config.scheme = cell.scheme;
        model.config.grid = grid;
        if cell.model == ModelKind::Gen {
            model.config.grid_bounds = Some(super::train::data_bounds(&train_set));
        }
        let mut model = Model::new(model.config)?;
        let cfg = TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch_size,
            learning_rate: args.lr.unwrap_or_else(|| TrainConfig::default_lr(cell.model)),
            grad_clip: Some(1.0),
            seed: cell.seed,
            ..TrainConfig::default()
        };
        let result = train(&mut model, &train_set, &val_set, &cfg)?;
        Ok(result.best_val_mse)
    };

    let workers = args.workers.max(1).min(cells.len().max(1));
    let mut errors: Vec<Option<f64>> = vec![None; cells.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slot = std::sync::Mutex::new(&mut errors);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let val = run_cell(&cells[i]).unwrap_or(f64::NAN);
                slot.lock().unwrap()[i] = Some(val);
            });
        }
    });

    // aggregate: per (model, tier), mean over seeds per scheme
    let mut csv = String::from("model,tier,err_shared,err_default,ratio_pct\n");
    let mut summary = String::new();
    for &model in &args.models {
        let mut tier_shared = Vec::new();
        let mut tier_default = Vec::new();
        for &tier in &args.tiers {
            let collect = |scheme: SchemeVariant| -> f64 {
                let vals: Vec<f64> = cells
                    .iter()
                    .zip(errors.iter())
                    .filter(|(c, _)| c.model == model && c.tier == tier && c.scheme == scheme)
                    .map(|(_, e)| e.unwrap())
                    .collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            };
            let shared = collect(SchemeVariant::SharedPosition);
            let default = collect(SchemeVariant::Default);
            let _ = writeln!(
                csv,
                "{model},{tier},{shared},{default},{}",
                ratio_pct(shared, default)
            );
            tier_shared.push(shared);
            tier_default.push(default);
        }
        let mean_shared: f64 = tier_shared.iter().sum::<f64>() / tier_shared.len() as f64;
        let mean_default: f64 = tier_default.iter().sum::<f64>() / tier_default.len() as f64;
        let ratio = ratio_pct(mean_shared, mean_default);
        let _ = writeln!(csv, "{model},all,{mean_shared},{mean_default},{ratio}");
        let _ = writeln!(summary, "{model}: shared/default ratio {ratio:.1}%");
    }
    std::fs::write(out.join("encoding_ablation.csv"), &csv).map_err(scatterfield::Error::from)?;
    print!("{summary}");
    Ok(())
}
