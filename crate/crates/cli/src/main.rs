use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ctxseg_cli::config::{load_json, GenConfig, TrainConfig};
use ctxseg_cli::{ablate, checkpoint, evaluate, infer, plot, trainer, DtypeChoice};
use ctxseg_data::scene::{synthesize, write_split, SceneConfig};

#[derive(Parser)]
#[command(name = "ctxseg", about = "Context-aware semantic segmentation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed when given.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/val splits.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a variant and write metrics.csv + model.ckpt.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint on a split directory.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory (defaults to the config's val split).
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Train and evaluate all four variants with a shared seed.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a checkpoint on one image; writes overlay.ppm + heatmap.pgm.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Also write attention.csv (cross-attention variants).
        #[arg(long)]
        dump_attention: bool,
        /// Also write graph.json (graph variants).
        #[arg(long)]
        dump_graph: bool,
    },
    /// Render metrics.csv into SVG line charts.
    Plot {
        #[command(flatten)]
        common: CommonArgs,
        /// Metrics CSV produced by `train`.
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // single line, chain flattened
            let chain: Vec<String> = err.chain().map(|c| c.to_string()).collect();
            let line = chain.join(": ").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let mut cfg: GenConfig = load_json(&common.config)?;
            if let Some(seed) = common.seed {
                cfg.scene.seed = seed;
            }
            gen_data(&cfg, &common)
        }
        Command::Train { common } => {
            let cfg = train_config(&common)?;
            match cfg.dtype {
                DtypeChoice::F32 => run_train::<f32>(&cfg, &common),
                DtypeChoice::F64 => run_train::<f64>(&cfg, &common),
            }
        }
        Command::Eval { common, checkpoint: ckpt_path, split } => {
            let cfg = train_config(&common)?;
            let split_dir = split.unwrap_or_else(|| PathBuf::from(&cfg.dataset.val));
            match cfg.dtype {
                DtypeChoice::F32 => {
                    let ckpt = checkpoint::load::<f32>(&ckpt_path)?;
                    let report = evaluate::evaluate_checkpoint(&ckpt, &split_dir, &common.out)?;
                    println!("miou {:.6} map {:.6}", report.miou, report.map);
                }
                DtypeChoice::F64 => {
                    let ckpt = checkpoint::load::<f64>(&ckpt_path)?;
                    let report = evaluate::evaluate_checkpoint(&ckpt, &split_dir, &common.out)?;
                    println!("miou {:.6} map {:.6}", report.miou, report.map);
                }
            }
            Ok(())
        }
        Command::Ablate { common } => {
            let cfg = train_config(&common)?;
            let train_split = ctxseg_data::load_split(std::path::Path::new(&cfg.dataset.train))?;
            let val_split = ctxseg_data::load_split(std::path::Path::new(&cfg.dataset.val))?;
            let table = match cfg.dtype {
                DtypeChoice::F32 => {
                    ablate::run_ablation::<f32>(&cfg, &train_split, &val_split, &common.out)?
                }
                DtypeChoice::F64 => {
                    ablate::run_ablation::<f64>(&cfg, &train_split, &val_split, &common.out)?
                }
            };
            print!("{}", table.rendered());
            Ok(())
        }
        Command::Infer { common, checkpoint: ckpt_path, image, dump_attention, dump_graph } => {
            let cfg = train_config(&common)?;
            let opts = infer::InferOptions { dump_attention, dump_graph };
            match cfg.dtype {
                DtypeChoice::F32 => {
                    let ckpt = checkpoint::load::<f32>(&ckpt_path)?;
                    infer::infer_image(&ckpt, &image, &common.out, &opts)?;
                }
                DtypeChoice::F64 => {
                    let ckpt = checkpoint::load::<f64>(&ckpt_path)?;
                    infer::infer_image(&ckpt, &image, &common.out, &opts)?;
                }
            }
            Ok(())
        }
        Command::Plot { common, metrics } => {
            let text = std::fs::read_to_string(&metrics)
                .with_context(|| format!("reading metrics {}", metrics.display()))?;
            let table = plot::parse_metrics_csv(&text)?;
            let svg = plot::render_svg(&table)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("curves.svg");
            std::fs::write(&path, svg)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn train_config(common: &CommonArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = load_json(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(cfg: &GenConfig, common: &CommonArgs) -> Result<()> {
    let train_cfg = SceneConfig { ..cfg.scene.clone() };
    // independent seeds per split so val never repeats train scenes
    let val_cfg = SceneConfig { seed: cfg.scene.seed ^ 0x5EED_0FF5, ..cfg.scene.clone() };
    let train = synthesize(&train_cfg, cfg.train_count)?;
    let val = synthesize(&val_cfg, cfg.val_count)?;
    write_split(&common.out.join("train"), &train_cfg, &train)?;
    write_split(&common.out.join("val"), &val_cfg, &val)?;
    println!(
        "wrote {} train and {} val samples under {}",
        train.len(),
        val.len(),
        common.out.display()
    );
    Ok(())
}

fn run_train<F: ctxseg_core::Scalar>(cfg: &TrainConfig, common: &CommonArgs) -> Result<()> {
    let train_split = ctxseg_data::load_split(std::path::Path::new(&cfg.dataset.train))?;
    let val_split = ctxseg_data::load_split(std::path::Path::new(&cfg.dataset.val))?;
    let summary = trainer::train::<F>(cfg, &train_split, &val_split, &common.out)?;
    if let Some(last) = summary.rows.last() {
        println!(
            "epoch {} loss {:.6} val_miou {:.6} val_map {:.6}",
            last.epoch, last.loss, last.val_miou, last.val_map
        );
    } else {
        println!("0 epochs: wrote initialization checkpoint");
    }
    Ok(())
}

