use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moef::config::{RunConfig, CONFIG_ENV};
use moef::harness::{
    evaluate, evaluate_scores, export_inspection, fit_signal_stats, grad_check, run_ablation, AblationData,
    TrainedModel,
};
use moef::mixture::ModelVariant;
use moef::signals::OccasionSignalSeries;
use moef::synthgen::{generate_world, read_dataset, DatasetPaths, Manifest, SampleRecord};
use moef::{MoefError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "moef",
    version,
    about = "Occasion-aware mixture-of-experts CTR models on synthetic occasion worlds",
    after_long_help = config_help()
)]
struct Cli {
    /// TOML run configuration; missing keys take defaults, unknown keys are rejected.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    /// Print the resolved configuration (file plus flags) as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags that take precedence over the configuration file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Model variant: full, one_expert, no_fft, no_lstm or transformer_encoder.
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<ModelVariant>,
    /// Number of experts K (ignored by one_expert, which always uses 1).
    #[arg(long, global = true)]
    num_experts: Option<usize>,
    /// Training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generator seed.
    #[arg(long, global = true)]
    world_seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory for checkpoints, traces and reports.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world: train/validation impressions, signals and manifest.
    Generate,
    /// Train a model on the dataset and write a checkpoint and loss trace.
    Train,
    /// Evaluate a checkpoint overall and per regime; prints the report as JSON.
    Eval {
        /// Checkpoint to evaluate (default: the run directory's model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the training split instead of validation.
        #[arg(long)]
        train_split: bool,
        /// Score file with one probability per record, used instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        scores: Option<PathBuf>,
    },
    /// Train every ablation variant for every seed and print a mean ± std AUC table.
    Ablate {
        /// Comma-separated variants, replacing `ablation.variants`.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<ModelVariant>>,
        /// Comma-separated seeds, replacing `ablation.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Export per-record gate weights and expert outputs as CSV.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory (default: the run directory's inspection/).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with finite differences on a tiny model.
    Gradcheck {
        /// Parameter groups to freeze; they are reported as skipped.
        #[arg(long, value_delimiter = ',')]
        freeze: Vec<String>,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn parse_variant(s: &str) -> std::result::Result<ModelVariant, String> {
    ModelVariant::parse(s).map_err(|e| e.to_string())
}

fn config_help() -> String {
    format!(
        "CONFIGURATION\n\nThe file named by --config (or ${CONFIG_ENV}) accepts these keys, shown with their \
         defaults. Flags override the file.\n\n{}",
        RunConfig::default().to_toml()
    )
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    if let Some(v) = o.variant {
        cfg.model.variant = v;
    }
    if let Some(k) = o.num_experts {
        cfg.model.num_experts = k;
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = o.world_seed {
        cfg.world.seed = s;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = o.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = o.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(d) = &o.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &o.run_dir {
        cfg.paths.run_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Dataset {
    manifest: Manifest,
    series: OccasionSignalSeries,
    train: Vec<SampleRecord>,
    validation: Vec<SampleRecord>,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let paths = DatasetPaths::new(&cfg.paths.data_dir);
    let manifest = Manifest::read(&paths.manifest())?;
    let schema = &cfg.model.schema;
    let read = |p: &Path| read_dataset(p, schema.profile_len(), schema.context_len());
    Ok(Dataset {
        series: OccasionSignalSeries::read(&paths.signals())?,
        train: read(&paths.train())?,
        validation: read(&paths.validation())?,
        manifest,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| MoefError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| MoefError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| MoefError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| MoefError::Data(format!("{} line {}: bad score {l:?}", path.display(), i + 1)))
        })
        .collect()
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let paths = DatasetPaths::new(&cfg.paths.data_dir);
    let summary = generate_world(&cfg.world, &paths)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    let m = &summary.manifest;
    println!("wrote {}", paths.dir.display());
    println!("train records      {}", m.counts.train);
    println!("validation records {}", m.counts.validation);
    for (name, c) in [("train", &m.ceilings.train), ("validation", &m.ceilings.validation)] {
        let f = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "ground-truth AUC ({name}): overall {} promotion {} normal {}",
            f(c.overall),
            f(c.promotion),
            f(c.normal)
        );
    }
    for (name, digest) in paths.digests()? {
        println!("sha256 {digest}  {name}");
    }
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let stats = fit_signal_stats(&data.series, &data.train)?;
    let mut trained = TrainedModel::init(&cfg.model, &cfg.train, stats)?;
    let report = trained.fit(&data.series, &data.train, |epoch, _| {
        eprintln!("epoch {} done", epoch + 1);
        Ok(None)
    })?;
    let ckpt = cfg.paths.checkpoint();
    write(&cfg.paths.loss_trace(), &report.trace_csv())?;
    std::fs::create_dir_all(&cfg.paths.run_dir).map_err(|e| MoefError::Io {
        path: cfg.paths.run_dir.clone(),
        source: e,
    })?;
    trained.save(&ckpt)?;
    println!("variant {} with {} expert(s)", cfg.model.variant, cfg.model.experts());
    if let (Some(a), Some(b)) = (report.initial_loss, report.final_loss) {
        println!("train logloss {a:.6} -> {b:.6}");
    }
    for e in &report.epochs {
        println!("epoch {} mean batch logloss {:.6}", e.epoch + 1, e.mean_loss);
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, train_split: bool, scores: Option<&Path>) -> Result<()> {
    let data = load_dataset(cfg)?;
    let (records, ceiling) = if train_split {
        (&data.train, &data.manifest.ceilings.train)
    } else {
        (&data.validation, &data.manifest.ceilings.validation)
    };
    let report = match scores {
        Some(path) => evaluate_scores(records, &read_scores(path)?, &data.manifest.schedule, Some(ceiling))?,
        None => {
            let path = checkpoint.map_or_else(|| cfg.paths.checkpoint(), Path::to_path_buf);
            let trained = TrainedModel::load(&path)?;
            evaluate(&trained, &data.series, records, &data.manifest.schedule, Some(ceiling))?
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let json = report.to_json();
    write(&cfg.paths.eval_report(), &json)?;
    println!("{json}");
    Ok(())
}

fn ablate(cfg: &RunConfig, variants: Option<&[ModelVariant]>, seeds: Option<&[u64]>) -> Result<()> {
    let data = load_dataset(cfg)?;
    let stats = fit_signal_stats(&data.series, &data.train)?;
    let ad = AblationData {
        series: &data.series,
        train: &data.train,
        validation: &data.validation,
        stats: &stats,
        schedule: &data.manifest.schedule,
        ceiling: Some(&data.manifest.ceilings.validation),
    };
    let variants = variants.unwrap_or(&cfg.ablation.variants);
    let seeds = seeds.unwrap_or(&cfg.ablation.seeds);
    let report = run_ablation(&cfg.model, &cfg.train, variants, seeds, &ad, |run| {
        let auc = run.report.overall.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        eprintln!("{} seed {}: validation AUC {auc}", run.variant, run.seed);
    })?;
    let table = report.to_markdown();
    write(&cfg.paths.ablation_report(), &table)?;
    print!("{table}");
    Ok(())
}

fn inspect(cfg: &RunConfig, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let data = load_dataset(cfg)?;
    let path = checkpoint.map_or_else(|| cfg.paths.checkpoint(), Path::to_path_buf);
    let trained = TrainedModel::load(&path)?;
    let out = out.map_or_else(|| cfg.paths.inspection_dir(), Path::to_path_buf);
    let files = export_inspection(&trained, &data.series, &data.validation, &data.manifest.schedule, &out)?;
    println!("{} rows", files.rows);
    println!("{}", files.alpha.display());
    println!("{}", files.experts.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, freeze: &[String], tolerance: f64) -> Result<()> {
    let frozen: Vec<&str> = freeze.iter().map(String::as_str).collect();
    let report = grad_check(cfg.model.variant, cfg.train.seed, &frozen)?;
    for g in &report.groups {
        if g.skipped {
            println!("{:<12} skipped (frozen)", g.group);
        } else {
            println!("{:<12} max rel. error {:.3e} over {} coordinates", g.group, g.max_rel_error, g.coordinates);
        }
    }
    if !report.passes(tolerance) {
        return Err(MoefError::Numeric(format!(
            "gradient check failed: max relative error {:.3e} >= {tolerance:e}",
            report.max_error()
        )));
    }
    println!("all groups below {tolerance:e}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::Generate => generate(&cfg),
        Command::Train => train(&cfg),
        Command::Eval {
            checkpoint,
            train_split,
            scores,
        } => eval(&cfg, checkpoint.as_deref(), *train_split, scores.as_deref()),
        Command::Ablate { variants, seeds } => ablate(&cfg, variants.as_deref(), seeds.as_deref()),
        Command::Inspect { checkpoint, out } => inspect(&cfg, checkpoint.as_deref(), out.as_deref()),
        Command::Gradcheck { freeze, tolerance } => gradcheck(&cfg, freeze, *tolerance),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
