use std::path::PathBuf;

use clap::Args;

use scatterfield::layers::Activation;
use scatterfield::encoding::SchemeVariant;
use scatterfield::models::{save_checkpoint, Conditioning, Model, ModelKind, Tier};
use scatterfield::training::{history_csv, train, TrainConfig};

use crate::util::{file_sha256, prepare_out_dir};
use crate::{CliError, CliResult, Ctx};

#[derive(Args)]
pub struct TrainArgs {
    /// msa | tfs | gen | cnp | gng | per | gka
    #[arg(long)]
    pub model: ModelKind,
    /// 5k | 20k | 100k
    #[arg(long, default_value = "20k")]
    pub tier: Tier,
    /// shared | default
    #[arg(long, default_value = "shared")]
    pub scheme: SchemeVariant,
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// GEN latent grid, e.g. 7x7.
    #[arg(long)]
    pub grid: Option<String>,
    /// PER latent count.
    #[arg(long)]
    pub latents: Option<usize>,
    /// GNG neighbours per node.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Message-passing rounds.
    #[arg(long)]
    pub mp_steps: Option<usize>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip: Option<f64>,
    /// relu | gelu
    #[arg(long)]
    pub activation: Option<String>,
    /// Train on raw values instead of standardized ones.
    #[arg(long)]
    pub no_standardize: bool,
    /// Stop once validation MSE falls below this.
    #[arg(long)]
    pub target_val_mse: Option<f64>,
}

pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| format!("grid must look like 7x7, got `{s}`"))?;
    Ok((
        a.parse().map_err(|_| format!("bad grid `{s}`"))?,
        b.parse().map_err(|_| format!("bad grid `{s}`"))?,
    ))
}

/// Position bounding box over both splits, for latent-grid placement.
pub fn data_bounds(ds: &scatterfield::data::Dataset) -> [(f64, f64); 2] {
    let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for pair in &ds.pairs {
        for row in pair.x_c.iter().chain(pair.x_t.iter()) {
            for d in 0..2.min(row.len()) {
                b[d].0 = b[d].0.min(row[d]);
                b[d].1 = b[d].1.max(row[d]);
            }
        }
    }
    b
}

pub fn build_model(ctx: &Ctx, args: &TrainArgs, train_set: &scatterfield::data::Dataset) -> CliResult<Model> {
    let mut model = Model::preset(args.model, args.tier, train_set.dims, ctx.seed)?;
    model.config.scheme = args.scheme;
    if let Some(g) = &args.grid {
        model.config.grid = parse_grid(g)?;
    }
    if let Some(p) = args.latents {
        model.config.n_latents = p;
    }
    if let Some(k) = args.knn {
        model.config.knn = k;
    }
    if let Some(l) = args.mp_steps {
        model.config.mp_steps = l;
    }
    if let Some(act) = &args.activation {
        model.config.activation = match act.as_str() {
            "relu" => Activation::Relu,
            "gelu" => Activation::Gelu,
            other => return Err(CliError::Config(format!("unknown activation `{other}`"))),
        };
    }
    if let Some(c) = ctx.config.get("model.conditioning") {
        model.config.conditioning = match c {
            "cross-attention" => Conditioning::CrossAttention,
            "distance-based" => Conditioning::DistanceBased,
            other => return Err(CliError::Config(format!("unknown conditioning `{other}`"))),
        };
    }
    if args.model == ModelKind::Gen {
        model.config.grid_bounds = Some(data_bounds(train_set));
    }
    // config changes require rebuilding the parameter set
    Ok(Model::new(model.config)?)
}

pub fn train_config(ctx: &Ctx, args: &TrainArgs) -> CliResult<TrainConfig> {
    let defaults = TrainConfig::default();
    Ok(TrainConfig {
        epochs: args
            .epochs
            .unwrap_or(ctx.config.get_parse("train.epochs", 50usize)?),
        batch_size: args
            .batch_size
            .unwrap_or(ctx.config.get_parse("train.batch_size", 32usize)?),
        learning_rate: args
            .lr
            .unwrap_or(ctx.config.get_parse("train.lr", TrainConfig::default_lr(args.model))?),
        grad_clip: args.clip.or(match ctx.config.get("train.clip") {
            Some(v) => Some(v.parse().map_err(|_| format!("bad train.clip `{v}`"))?),
            None => None,
        }),
        seed: ctx.seed,
        standardize: !args.no_standardize,
        target_val_mse: args.target_val_mse,
        ..defaults
    })
}

pub fn run(ctx: &Ctx, args: TrainArgs) -> CliResult<()> {
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| CliError::Config("train needs --out <run dir>".into()))?;
    prepare_out_dir(&out, ctx.force)?;
    let (_, train_set) = super::load_split(&args.data, "train")?;
    let (_, val_set) = super::load_split(&args.data, "val")?;

    let mut model = build_model(ctx, &args, &train_set)?;
    let cfg = train_config(ctx, &args)?;

    // Self-describing run directory: effective config snapshot plus a
    // content-hashed reference to the dataset.
    let mut snapshot = ctx.config.clone();
    snapshot.insert("run.model", args.model);
    snapshot.insert("run.tier", args.tier);
    snapshot.insert("run.scheme", format!("{:?}", args.scheme));
    snapshot.insert("run.seed", ctx.seed);
    snapshot.insert("run.params", model.n_params());
    snapshot.insert("train.epochs", cfg.epochs);
    snapshot.insert("train.batch_size", cfg.batch_size);
    snapshot.insert("train.lr", cfg.learning_rate);
    snapshot.insert("train.standardize", cfg.standardize);
    if let Some(c) = cfg.grad_clip {
        snapshot.insert("train.clip", c);
    }
    std::fs::write(out.join("config.txt"), snapshot.render()).map_err(scatterfield::Error::from)?;
    let manifest_path = args.data.join("manifest.json");
    let dataset_ref = serde_json::json!({
        "dataset_dir": args.data.display().to_string(),
        "manifest_sha256": file_sha256(&manifest_path).map_err(scatterfield::Error::from)?,
        "train_sha256": file_sha256(&args.data.join("train.jsonl")).ok(),
        "val_sha256": file_sha256(&args.data.join("val.jsonl")).ok(),
    });
    std::fs::write(
        out.join("dataset.json"),
        serde_json::to_string_pretty(&dataset_ref).expect("json"),
    )
    .map_err(scatterfield::Error::from)?;

    let result = train(&mut model, &train_set, &val_set, &cfg)?;
    std::fs::write(out.join("epochs.csv"), history_csv(&result.history))
        .map_err(scatterfield::Error::from)?;
    save_checkpoint(&out.join("ckpt_final.bin"), &model)?;
    println!(
        "trained {} {} ({} params): final val MSE {:.6}, best {:.6} at epoch {}{}",
        args.model,
        args.tier,
        model.n_params(),
        result.final_val_mse,
        result.best_val_mse,
        result.best_epoch,
        if result.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}
