use std::path::PathBuf;
use std::process::ExitCode;

use anglseg::{Error, ExperimentConfig, Result};
use anglseg_cli::{
    cmd_ablate, cmd_eval, cmd_features, cmd_generate, cmd_segment, cmd_train, format_class_counts, resolve_scenes,
    ViewSelection,
};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "anglseg", version, about = "Multiview material segmentation experiments")]
struct Cli {
    /// `section.key = value` experiment file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scene directories to read (glob, or a directory holding scenes).
    #[arg(long, global = true)]
    scenes: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// `all` or one view index.
    #[arg(long, global = true, default_value = "all")]
    views: ViewSelection,
    #[arg(long, global = true)]
    no_histogram: bool,
    #[arg(long, global = true)]
    no_stack2: bool,
    /// Vote across views.
    #[arg(long, global = true)]
    fuse: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic scenes.
    Generate,
    /// Compute superpixel histograms into feature caches.
    Features,
    Train,
    Eval,
    /// Baseline, +histogram and +stacking comparison.
    Ablate,
    /// Write color-mapped predictions.
    Segment {
        /// Also write image | ground truth | prediction panels.
        #[arg(long)]
        panel: bool,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ANGLSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("ANGLSEG_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if cli.no_histogram {
        cfg.network.use_histogram = false;
    }
    if cli.no_stack2 {
        cfg.network.use_stack2 = false;
    }
    cfg.validate()?;
    let scenes = || {
        let pattern = cli
            .scenes
            .clone()
            .unwrap_or_else(|| cfg.paths.scenes.display().to_string());
        resolve_scenes(&pattern)
    };
    let checkpoint = || {
        cli.checkpoint
            .clone()
            .ok_or_else(|| Error::InvalidArgument("this command needs --checkpoint PATH".into()))
    };
    let out_or = |default: &PathBuf| cli.out.clone().unwrap_or_else(|| default.clone());
    match cli.command {
        Command::Generate => {
            let generated = cmd_generate(&cfg, &out_or(&cfg.paths.scenes))?;
            print!("{}", format_class_counts(&generated));
        }
        Command::Features => {
            for f in cmd_features(&cfg, &scenes()?, &out_or(&cfg.paths.features))? {
                println!(
                    "{} superpixels={} target={} cache={}",
                    f.scene,
                    f.superpixels,
                    f.target,
                    f.cache.display()
                );
            }
        }
        Command::Train => {
            let report = cmd_train(&cfg, &scenes()?, &out_or(&cfg.paths.output))?;
            print!("{}", report.loss_csv());
        }
        Command::Eval => {
            let out = out_or(&cfg.paths.output);
            print!(
                "{}",
                cmd_eval(&cfg, &scenes()?, &checkpoint()?, cli.views, cli.fuse, &out)?
            );
        }
        Command::Ablate => print!("{}", cmd_ablate(&cfg, &scenes()?, &out_or(&cfg.paths.output))?),
        Command::Segment { panel } => {
            let written = cmd_segment(
                &cfg,
                &scenes()?,
                &checkpoint()?,
                cli.views,
                panel,
                &out_or(&cfg.paths.output),
            )?;
            println!("wrote {} images", written.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
