//! `xrdn`: command-line front end of the denoising workbench.

mod commands;
mod dataset;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xrdn_core::config::RunConfig;
use xrdn_core::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "xrdn", version, about = "Denoising workbench for X-ray diffraction frames")]
struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fresh output directory (must not exist or be empty).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra config entries, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate clean frames and noisy pairs with a manifest.
    Synth {
        /// pois, gauss, pois+g (alias exp) or gauss+g.
        #[arg(long)]
        noise: Option<String>,
    },
    /// Re-noise the clean frames of an existing dataset with another model.
    Noise {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        noise: Option<String>,
    },
    /// Train a denoiser on the train/val splits of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// vdsr or irunet; selects that topology's defaults.
        #[arg(long)]
        arch: Option<String>,
        /// Train once per entry of `ensemble_seeds`.
        #[arg(long)]
        ensemble: bool,
    },
    /// Denoise DFRM frames with a checkpoint.
    Denoise {
        /// Checkpoint file or train run directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Per-pair metrics, score summaries and Δ heatmaps.
    Eval {
        /// `LABEL=PATH` or `PATH`; repeatable for a cross-noise matrix.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        /// `LABEL=DIR` or `DIR`; repeatable.
        #[arg(long = "data", required = true)]
        data: Vec<String>,
        /// `MODEL:DATA` label pair; repeatable. Restricts and orders the summary rows.
        #[arg(long = "combo")]
        combos: Vec<String>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Number of Δ heatmaps written per model/data combination.
        #[arg(long, default_value_t = 4)]
        heatmaps: usize,
    },
    /// Peak fits on the configured scene and probability-density fits of frames.
    Fit {
        /// Checkpoints (or train run directories) whose averaged output is fitted.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// DFRM frames whose pixel distribution is fitted with every model.
        #[arg(long = "pdf")]
        pdf: Vec<PathBuf>,
    },
    /// Render SVG plots from a run directory.
    Report { run: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Noise { .. } => "noise",
            Command::Train { .. } => "train",
            Command::Denoise { .. } => "denoise",
            Command::Eval { .. } => "eval",
            Command::Fit { .. } => "fit",
            Command::Report { .. } => "report",
        }
    }
}

fn load_config(cli: &Cli) -> xrdn_core::Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

fn run(cli: Cli) -> xrdn_core::Result<()> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Synth { noise: Some(n) } | Command::Noise { noise: Some(n), .. } => config.set("noise", n)?,
        Command::Train { arch: Some(a), .. } => config.set("arch", a)?,
        _ => {}
    }
    config.validate()?;
    let split = match &cli.command {
        Command::Eval { split, .. } => Some(split.parse()?),
        _ => None,
    };
    let out = commands::fresh_dir(cli.out.clone().unwrap_or_else(|| commands::default_out(cli.command.name())))?;
    let result = dispatch(cli.command, &config, split, &out);
    if result.is_err() && std::fs::read_dir(&out).is_ok_and(|mut d| d.next().is_none()) {
        let _ = std::fs::remove_dir(&out);
    }
    result
}

fn dispatch(command: Command, config: &RunConfig, split: Option<xrdn_core::Split>, out: &std::path::Path) -> xrdn_core::Result<()> {
    match command {
        Command::Synth { .. } => commands::synth(config, out),
        Command::Noise { data, .. } => commands::noise(config, &data, out),
        Command::Train { data, ensemble, .. } => commands::train(config, &data, ensemble, out),
        Command::Denoise { model, inputs } => commands::denoise_files(config, &model, &inputs, out),
        Command::Eval { models, data, combos, heatmaps, .. } => {
            commands::eval(config, &models, &data, &combos, split.unwrap_or(xrdn_core::Split::Test), heatmaps, out)
        }
        Command::Fit { models, pdf } => commands::fit(config, &models, &pdf, out),
        Command::Report { run } => commands::report(&run, out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
