use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// Weakly supervised lesion classification and localization.
#[derive(Debug, Parser)]
#[command(name = "lesion-mil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// key = value configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Windows {
    /// Tile and window side in pixels.
    #[arg(long)]
    tile_size: Option<usize>,
    /// Lattice step; defaults to half the tile.
    #[arg(long)]
    step: Option<usize>,
    /// Use the whole image instead of the segmented region.
    #[arg(long)]
    no_mask: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_pos: Option<usize>,
        #[arg(long)]
        n_neg: Option<usize>,
        /// Keep the boxes but do not draw the lesion motifs.
        #[arg(long)]
        no_spikes: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Write masks for manifest rows that lack one, plus an updated manifest.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a classifier; writes model.lmil and history.csv.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        windows: Windows,
        #[arg(long)]
        pos_per_bag: Option<usize>,
        #[arg(long)]
        neg_per_bag: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        /// Drop the box-derived tiles from training.
        #[arg(long)]
        no_reinforced: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint; writes report.json, roc.csv and predictions.csv.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        windows: Windows,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Render a probability heatmap for one image.
    Viz {
        #[arg(long)]
        image: PathBuf,
        /// Region mask; segmented from the image when omitted.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        windows: Windows,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn base_config(common: &Common) -> Result<RunConfig, lesion_mil::Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_windows(cfg: &mut RunConfig, w: &Windows) {
    if let Some(s) = w.tile_size {
        cfg.tile_size = s;
    }
    if w.step.is_some() {
        cfg.step = w.step;
    }
    if w.no_mask {
        cfg.use_mask = false;
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen {
            out,
            n_pos,
            n_neg,
            no_spikes,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(n) = n_pos {
                cfg.gen.n_pos = n;
            }
            if let Some(n) = n_neg {
                cfg.gen.n_neg = n;
            }
            if no_spikes {
                cfg.gen.render_spikes = false;
            }
            cfg.validate()?;
            commands::cmd_gen(&cfg, &out)?;
        }
        Command::Segment { manifest, out, common } => {
            let cfg = base_config(&common)?;
            cfg.validate()?;
            commands::cmd_segment(&cfg, &manifest, &out)?;
        }
        Command::Train {
            manifest,
            out,
            windows,
            pos_per_bag,
            neg_per_bag,
            epochs,
            batch,
            no_reinforced,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            apply_windows(&mut cfg, &windows);
            if let Some(k) = pos_per_bag {
                cfg.mil.selection.pos_per_bag = k;
            }
            if let Some(k) = neg_per_bag {
                cfg.mil.selection.neg_per_bag = k;
            }
            if let Some(e) = epochs {
                cfg.mil.train.epochs = e;
            }
            if let Some(b) = batch {
                cfg.mil.train.batch_size = b;
            }
            if no_reinforced {
                cfg.mil.use_reinforced = false;
            }
            cfg.validate()?;
            commands::cmd_train(&cfg, &manifest, &out)?;
        }
        Command::Eval {
            manifest,
            model,
            out,
            windows,
            threshold,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            apply_windows(&mut cfg, &windows);
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            cfg.validate()?;
            commands::cmd_eval(&cfg, &manifest, &model, &out)?;
        }
        Command::Viz {
            image,
            mask,
            model,
            out,
            windows,
            alpha,
            stride,
            common,
        } => {
            let mut cfg = base_config(&common)?;
            apply_windows(&mut cfg, &windows);
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if stride.is_some() {
                cfg.stride = stride;
            }
            cfg.validate()?;
            commands::cmd_viz(&cfg, &image, mask.as_deref(), &model, &out)?;
        }
    }
    Ok(())
}

/// Stable error category for the one-line failure report.
fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<lesion_mil::Error>())
        .map(|e| e.kind())
        .unwrap_or("Other")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error kind={} message={:?}", error_kind(&err), format!("{err:#}"));
            ExitCode::FAILURE
        }
    }
}
