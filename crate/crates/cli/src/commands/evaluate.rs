use std::path::PathBuf;

use clap::Args;

use scatterfield::metrics::MetricReport;
use scatterfield::models::load_checkpoint;
use scatterfield::training::evaluate;

use crate::{CliResult, Ctx};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// train | val
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Evaluate in raw units without standardizing inputs.
    #[arg(long)]
    pub no_standardize: bool,
}

pub fn run(ctx: &Ctx, args: EvaluateArgs) -> CliResult<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let (_, ds) = super::load_split(&args.data, &args.split)?;
    let batch = args
        .batch_size
        .unwrap_or(ctx.config.get_parse("eval.batch_size", 32usize)?);
    let report = evaluate(&model, &ds, batch, !args.no_standardize)?;
    let text = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row());
    print!("{text}");
    if let Some(out) = &ctx.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent).map_err(scatterfield::Error::from)?;
        }
        std::fs::write(out, text).map_err(scatterfield::Error::from)?;
    }
    Ok(())
}
