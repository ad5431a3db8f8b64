use std::fmt::Write as _;

use clap::{Args, Subcommand};

use scatterfield::diagnostics::{
    attribution_csv, correction_csv, error_correction_steps, fixed_validation_batch,
    gradient_attribution, pretrain_sine_model, pretrain_val_set, retrieval_csv,
    retrieval_plot_csv, run_retrieval_suite, CorrectionResult, PretrainBudget, RetrievalBudget,
};
use scatterfield::models::{ModelKind, Tier};

use crate::util::prepare_out_dir;
use crate::{CliError, CliResult, Ctx};

#[derive(Subcommand)]
pub enum DiagnoseCmd {
    /// Information-retrieval grid: train every model on every dataset.
    Retrieval(RetrievalArgs),
    /// Per-latent gradients after injecting an artificial error.
    Attribution(AttributionArgs),
    /// Gradient updates needed to undo an artificial error.
    Correction(CorrectionArgs),
}

#[derive(Args)]
pub struct RetrievalArgs {
    #[arg(long, value_delimiter = ',', default_value = "msa,tfs,gng,gen,cnp,per")]
    pub models: Vec<ModelKind>,
    /// Sine frequencies.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    pub f: Vec<f64>,
    /// Include the random-values dataset.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value = "20k")]
    pub tier: Tier,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1_000)]
    pub val_pairs: usize,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Worker threads over independent grid cells.
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

#[derive(Args)]
pub struct AttributionArgs {
    /// msa | tfs | gen | gng | per
    #[arg(long, default_value = "msa")]
    pub model: ModelKind,
    /// GEN latent grid.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value = "5k")]
    pub tier: Tier,
    /// Pretraining task frequency.
    #[arg(long, default_value_t = 1.0)]
    pub f: f64,
    #[arg(long, default_value_t = 10.0)]
    pub epsilon: f64,
    /// 0-based target slot receiving the perturbation.
    #[arg(long, default_value_t = 1)]
    pub target_index: usize,
    /// Random (batch, seed) draws to report.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 400)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub pretrain_target: f64,
}

#[derive(Args)]
pub struct CorrectionArgs {
    /// GEN grid sides, e.g. 1..8 or 2,4,8.
    #[arg(long, default_value = "1..8")]
    pub grids: String,
    #[arg(long, default_value = "5k")]
    pub tier: Tier,
    #[arg(long, default_value_t = 1.0)]
    pub f: f64,
    #[arg(long, default_value_t = 10.0)]
    pub epsilon: f64,
    /// Plain gradient-descent step size.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 50_000)]
    pub cap: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 400)]
    pub pretrain_epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub pretrain_target: f64,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
}

pub fn parse_grids(s: &str) -> Result<Vec<usize>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.parse().map_err(|_| format!("bad grid range `{s}`"))?;
        let hi: usize = b.parse().map_err(|_| format!("bad grid range `{s}`"))?;
        if lo < 1 || hi < lo {
            return Err(format!("bad grid range `{s}`"));
        }
        Ok((lo..=hi).collect())
    } else {
        s.split(',')
            .map(|p| p.parse().map_err(|_| format!("bad grid list `{s}`")))
            .collect()
    }
}

pub fn run(ctx: &Ctx, cmd: DiagnoseCmd) -> CliResult<()> {
    match cmd {
        DiagnoseCmd::Retrieval(args) => retrieval(ctx, args),
        DiagnoseCmd::Attribution(args) => attribution(ctx, args),
        DiagnoseCmd::Correction(args) => correction(ctx, args),
    }
}

fn out_dir(ctx: &Ctx) -> CliResult<std::path::PathBuf> {
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| CliError::Config("diagnose needs --out <dir>".into()))?;
    prepare_out_dir(&out, ctx.force)?;
    Ok(out)
}

fn retrieval(ctx: &Ctx, args: RetrievalArgs) -> CliResult<()> {
    let out = out_dir(ctx)?;
    let budget = RetrievalBudget {
        train_pairs: args.pairs,
        val_pairs: args.val_pairs,
        set_size: 64,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: ctx.seed,
        parallelism: args.workers,
    };
    let models: Vec<(ModelKind, Tier)> = args.models.iter().map(|&m| (m, args.tier)).collect();
    let results = run_retrieval_suite(&models, &args.f, args.random, &budget);
    std::fs::write(out.join("retrieval.csv"), retrieval_csv(&results))
        .map_err(scatterfield::Error::from)?;
    std::fs::write(out.join("retrieval_plot.csv"), retrieval_plot_csv(&results))
        .map_err(scatterfield::Error::from)?;
    for r in &results {
        println!(
            "{:<4} {:<5} {:<8} val_mse {:<10.5} {}",
            r.model.to_string(),
            r.tier.to_string(),
            r.task,
            r.val_mse,
            if r.pass { "PASS" } else { "fail" }
        );
    }
    Ok(())
}

fn attribution(ctx: &Ctx, args: AttributionArgs) -> CliResult<()> {
    let out = out_dir(ctx)?;
    let budget = PretrainBudget {
        epochs_cap: args.pretrain_epochs,
        target_val_mse: args.pretrain_target,
        seed: ctx.seed,
        ..PretrainBudget::default()
    };
    let grid = match &args.grid {
        Some(g) => Some(super::train::parse_grid(g)?),
        None => None,
    };
    let (model, val_mse) = pretrain_sine_model(args.model, args.tier, grid, args.f, &budget)?;
    println!("pretrained {} to val MSE {val_mse:.2e}", args.model);
    let val_set = pretrain_val_set(args.f, &budget);
    let mut csv = String::from("seed,latent,grad_norm\n");
    let mut summary = String::from("seed,dominant_latents,max_norm\n");
    for s in 0..args.seeds {
        let batch = fixed_validation_batch(&val_set, args.batch_size, ctx.seed ^ (0xA11 + s))?;
        let result = gradient_attribution(&model, &batch, args.epsilon, args.target_index)?;
        for (i, n) in result.norms.iter().enumerate() {
            let _ = writeln!(csv, "{s},{i},{n}");
        }
        let _ = writeln!(summary, "{s},{},{}", result.dominant, result.max_norm);
        if s == 0 {
            std::fs::write(
                out.join("attribution_plot.csv"),
                attribution_csv(&args.model.to_string(), &result),
            )
            .map_err(scatterfield::Error::from)?;
            println!(
                "seed 0: {} dominant latent(s) of {}, max norm {:.3e}",
                result.dominant,
                result.norms.len(),
                result.max_norm
            );
        }
    }
    std::fs::write(out.join("attribution.csv"), csv).map_err(scatterfield::Error::from)?;
    std::fs::write(out.join("attribution_summary.csv"), summary)
        .map_err(scatterfield::Error::from)?;
    Ok(())
}

fn correction(ctx: &Ctx, args: CorrectionArgs) -> CliResult<()> {
    let out = out_dir(ctx)?;
    let grids = parse_grids(&args.grids)?;
    let budget = PretrainBudget {
        epochs_cap: args.pretrain_epochs,
        target_val_mse: args.pretrain_target,
        seed: ctx.seed,
        ..PretrainBudget::default()
    };
    let val_set = pretrain_val_set(args.f, &budget);

    // model zoo: MSA reference plus one GEN per grid size
    let mut specs: Vec<(ModelKind, Option<(usize, usize)>, String)> =
        vec![(ModelKind::Msa, None, "msa".to_string())];
    for &g in &grids {
        specs.push((ModelKind::Gen, Some((g, g)), format!("gen{g}x{g}")));
    }

    let workers = args.workers.max(1).min(specs.len());
    let mut rows: Vec<Option<CorrectionResult>> = vec![None; specs.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slot = std::sync::Mutex::new(&mut rows);
    let run_one = |spec: &(ModelKind, Option<(usize, usize)>, String)| -> CliResult<CorrectionResult> {
        let (kind, grid, label) = spec;
        let (mut model, _) = pretrain_sine_model(*kind, args.tier, *grid, args.f, &budget)?;
        let batch = fixed_validation_batch(&val_set, args.batch_size, ctx.seed ^ 0xC0_44EC)?;
        let mut result = error_correction_steps(&mut model, &batch, args.epsilon, args.lr, args.tol, args.cap)?;
        result.label = label.clone();
        Ok(result)
    };
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= specs.len() {
                    break;
                }
                let r = run_one(&specs[i]).unwrap_or(CorrectionResult {
                    label: specs[i].2.clone(),
                    steps: usize::MAX,
                    capped: true,
                    pct_vs_reference: None,
                });
                slot.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let mut results: Vec<CorrectionResult> = rows.into_iter().map(|r| r.unwrap()).collect();
    let msa_steps = results[0].steps as f64;
    for r in results.iter_mut().skip(1) {
        r.pct_vs_reference = Some(100.0 * (r.steps as f64 - msa_steps) / msa_steps);
    }
    std::fs::write(out.join("correction.csv"), correction_csv(&results))
        .map_err(scatterfield::Error::from)?;
    let mut plot = String::from("x,series,y\n");
    for r in &results {
        let _ = writeln!(plot, "{},steps,{}", r.label, r.steps);
    }
    std::fs::write(out.join("correction_plot.csv"), plot).map_err(scatterfield::Error::from)?;
    for r in &results {
        println!(
            "{:<8} steps {:<8} {}",
            r.label,
            r.steps,
            r.pct_vs_reference
                .map(|p| format!("({p:+.0}% vs msa)"))
                .unwrap_or_default()
        );
    }
    Ok(())
}
