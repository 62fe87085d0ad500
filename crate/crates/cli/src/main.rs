use std::path::PathBuf;
use std::process::ExitCode;

use affgrasp::commands::{self, InferRequest, Model, ViewSource};
use affgrasp::report;
use affgrasp::{CliError, RunConfig};
use affgrasp_core::synthdata::{AffordanceLabel, Category};
use clap::{Args, Parser, Subcommand};

/// Task-oriented grasp detection: data, training, evaluation and inference.
#[derive(Debug, Parser)]
#[command(name = "affgrasp", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; missing keys take desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for checkpoints, traces and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Any configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the procedural dataset and print its summary.
    GenData,
    /// Train one model and write its checkpoint and trace.
    Train {
        #[arg(value_enum)]
        model: Model,
        #[arg(long)]
        latent_len: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// ESM, generator comparison, heatmap metrics and evaluator accuracy.
    Eval,
    /// Held-out ESM for a range of latent lengths.
    SweepLatent {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
        lengths: Vec<usize>,
    },
    /// Affordance network with each feature branch dropped in turn.
    Ablate,
    /// Coarse-to-fine grasp candidates for one view.
    Infer {
        #[arg(long)]
        task: AffordanceLabel,
        /// Object id of a dataset view.
        #[arg(long, requires = "view", conflicts_with = "cloud")]
        object: Option<String>,
        #[arg(long)]
        view: Option<usize>,
        /// ASCII `x y z` file in metres instead of a dataset view.
        #[arg(long, requires = "category")]
        cloud: Option<PathBuf>,
        #[arg(long)]
        category: Option<Category>,
        /// Candidate JSON path (default `<out>/candidates.json`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write an ASCII PLY with the heatmap and gripper skeletons.
        #[arg(long)]
        export_viz: Option<PathBuf>,
        #[arg(long)]
        keep: Option<usize>,
        #[arg(long)]
        n_coarse: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut overrides = cli.global.overrides.clone();
    let mut flag = |key: &str, value: String| overrides.push(format!("{key}={value}"));
    if let Some(s) = cli.global.seed {
        flag("seed", s.to_string());
    }
    if let Some(p) = &cli.global.out {
        flag("out_dir", format!("{:?}", p.display().to_string()));
    }
    if let Some(p) = &cli.global.data {
        flag("data_dir", format!("{:?}", p.display().to_string()));
    }
    match &cli.command {
        Command::Train { latent_len, epochs, .. } => {
            if let Some(l) = latent_len {
                flag("generator.latent_len", l.to_string());
                flag("vae.latent_len", l.to_string());
            }
            if let Some(e) = epochs {
                flag("train.epochs", e.to_string());
            }
        }
        Command::Infer { keep, n_coarse, .. } => {
            if let Some(k) = keep {
                flag("fusion.keep", k.to_string());
            }
            if let Some(n) = n_coarse {
                flag("fusion.n_coarse", n.to_string());
            }
        }
        _ => {}
    }
    let cfg = RunConfig::layered(cli.global.config.as_deref(), &overrides)?;
    Ok(match cli.command {
        Command::GenData => commands::gen_data(&cfg)?.render(),
        Command::Train { model, .. } => commands::train(&cfg, model)?.render(),
        Command::Eval => commands::eval(&cfg)?.render(),
        Command::SweepLatent { lengths } => report::sweep_csv(&commands::sweep_latent(&cfg, &lengths)?),
        Command::Ablate => report::ablation_table(&commands::ablate(&cfg)?),
        Command::Infer { task, object, view, cloud, category, output, export_viz, .. } => {
            let source = match (object, view, cloud, category) {
                (Some(object_id), Some(view_id), None, _) => ViewSource::Dataset { object_id, view_id },
                (None, _, Some(path), Some(category)) => ViewSource::Cloud { path, category },
                _ => return Err(CliError::Config("infer needs --object and --view, or --cloud and --category".into())),
            };
            let out = commands::infer(&cfg, &InferRequest { source, task, output, export_viz })?;
            let mut text = format!(
                "{} {}: {} generated, {} above threshold, region {} points{}\n",
                out.source,
                out.task,
                out.generated,
                out.survivors,
                out.region_size,
                if out.coarse_only { ", coarse-only fallback" } else { "" }
            );
            for c in out.candidates.iter().take(5) {
                text += &format!("#{} S_C {:.4} S_V {:?} S_F {:?}\n", c.rank, c.s_c, c.s_v, c.s_f);
            }
            text
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
