//! `nvf` — camera-space 3D hand pose estimation by dense voting over a
//! neural signed-distance/offset field, with holistic and dense-2D
//! regression baselines.
//!
//! Subcommands cover the full pipeline: `gen` (synthetic scenes), `train`,
//! `infer`, `eval`, `ablate` (parameter sweeps), and `render` (predicted
//! surface + vote-weight point clouds). All tunables live in a flat
//! `key = value` config file; `nvf --help` lists every key. Logging is
//! controlled by `NVF_LOG={error|info|debug}`.

mod commands;
mod config;
mod guard;

use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use nvf_core::nn::model::ModelKind;
use nvf_core::{Error, Result};

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "nvf",
    version,
    about = "Hand pose estimation via neural voting fields on synthetic scenes"
)]
struct Cli {
    /// Path to a key = value run configuration file (defaults apply if omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed override (config key: seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// camera_space or root_relative (config key: mode).
    #[arg(long, global = true, value_name = "MODE")]
    mode: Option<String>,
    /// Model selection: nvf, baseline=holistic, or baseline=dense2d.
    #[arg(long, global = true, value_name = "KIND")]
    model: Option<String>,
    /// Output directory for the command's artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Single-threaded, fixed-order execution for byte-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic articulated-hand scene dataset.
    Gen,
    /// Train the configured model on a scene dataset.
    Train {
        /// Dataset directory (default: the scenes_dir config key).
        #[arg(long, value_name = "DIR")]
        scenes: Option<PathBuf>,
    },
    /// Predict the joints of one scene.
    Infer {
        /// Trained checkpoint (.nvf).
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Scene directory to run on.
        #[arg(long, value_name = "DIR")]
        scene: PathBuf,
        /// Also write the predicted signed-distance lattice (sdf_grid.json).
        #[arg(long)]
        dump_sdf: bool,
        /// Lattice pitch for --dump-sdf, mm.
        #[arg(long, value_name = "MM", default_value_t = 8.0)]
        sdf_pitch: f64,
    },
    /// Evaluate a checkpoint over a dataset (per-scene CSV + summary row).
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        scenes: Option<PathBuf>,
    },
    /// Sweep delta, k, fraction, or step and evaluate each value.
    Ablate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        scenes: Option<PathBuf>,
        /// Swept parameter: delta, k, fraction, or step.
        #[arg(long, value_name = "NAME")]
        axis: String,
        /// Comma-separated values, e.g. 8,16,32.
        #[arg(long, value_name = "LIST")]
        values: String,
    },
    /// Extract the predicted surface (OBJ) and per-joint vote clouds (PLY).
    Render {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        scene: PathBuf,
        /// Marching-cubes lattice pitch, mm.
        #[arg(long, value_name = "MM", default_value_t = 8.0)]
        pitch: f64,
    },
}

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("NVF_LOG", "error"),
    )
    .format_timestamp(None)
    .init();

    let matches = Cli::command()
        .after_help(RunConfig::key_help())
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };

    if let Err(e) = run(cli) {
        // One machine-parsable line; inner newlines flattened.
        let msg = e.to_string().replace('\n', "; ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads.unwrap_or(0)
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let overrides = Overrides {
        mode: cli.mode.as_deref().map(config::parse_mode_flag).transpose()?,
        model: cli
            .model
            .as_deref()
            .map(config::parse_model_flag)
            .transpose()?,
        seed: cli.seed,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    log::debug!("resolved configuration:\n{}", cfg.to_text());
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out DIR is required".into()))?;
    // `--model` also asserts the checkpoint kind for commands that load one.
    let expect_kind: Option<ModelKind> = overrides.model;
    let scenes_or_default = |scenes: Option<PathBuf>| -> PathBuf {
        scenes.unwrap_or_else(|| PathBuf::from(&cfg.scenes_dir))
    };

    match cli.cmd {
        Cmd::Gen => commands::cmd_gen(&cfg, &out),
        Cmd::Train { scenes } => commands::cmd_train(&cfg, &scenes_or_default(scenes), &out),
        Cmd::Infer {
            checkpoint,
            scene,
            dump_sdf,
            sdf_pitch,
        } => commands::cmd_infer(
            &cfg,
            &checkpoint,
            &scene,
            &out,
            expect_kind,
            dump_sdf,
            sdf_pitch,
        ),
        Cmd::Eval { checkpoint, scenes } => commands::cmd_eval(
            &cfg,
            &checkpoint,
            &scenes_or_default(scenes),
            &out,
            expect_kind,
        ),
        Cmd::Ablate {
            checkpoint,
            scenes,
            axis,
            values,
        } => commands::cmd_ablate(
            &cfg,
            &checkpoint,
            &scenes_or_default(scenes),
            &axis,
            &values,
            &out,
        ),
        Cmd::Render {
            checkpoint,
            scene,
            pitch,
        } => commands::cmd_render(&cfg, &checkpoint, &scene, &out, pitch),
    }
}
