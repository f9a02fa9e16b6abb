//! Command-line front end for the experiment pipeline.
//!
//! Every verb takes an experiment config file (JSON, see
//! [`fracflow::experiment::ExperimentConfig`]) plus optional `--seed` and
//! `--out` overrides:
//!
//! ```text
//! fracflow gen-geometry --config cfg.json      write the two geometry files
//! fracflow gen-data     --config cfg.json      geometries + datasets + coarse exports
//! fracflow train        --config cfg.json      train the three networks from disk
//! fracflow evaluate     --config cfg.json      score stored models, write report
//! fracflow run-example  --config cfg.json      full pipeline end to end
//! ```
//!
//! Exit status is zero on success; failures print a stage-tagged
//! diagnostic (e.g. `[train/m] …`) and exit nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fracflow::experiment::{
    compare_networks, run_example, stage_evaluate, stage_generate, stage_train, ExperimentConfig,
};
use fracflow::mesh::{build_geometry, write_spec};
use fracflow::Result;

#[derive(Parser)]
#[command(
    name = "fracflow",
    about = "Multiscale fractured-flow simulation with learned surrogate time stepping",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build both geometries and write them to the output directory.
    GenGeometry(CommonArgs),
    /// Generate datasets: geometries, coarse systems, trajectories, pairs.
    GenData(CommonArgs),
    /// Train the o/m/s networks from datasets already on disk.
    Train(CommonArgs),
    /// Evaluate stored models on the test split and write the report.
    Evaluate(CommonArgs),
    /// Run generate → train → evaluate in one go.
    RunExample(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::read(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.display().to_string();
    }
    Ok(config)
}

fn gen_geometry(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let out = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out)
        .map_err(|e| fracflow::FracError::io(out.display().to_string(), e))?;
    for (name, src) in [
        ("geometry_sim.json", &config.sim_geometry),
        ("geometry_obs.json", &config.obs_geometry),
    ] {
        let spec = src.resolve()?;
        let geo = build_geometry(&spec)?;
        write_spec(&spec, &out.join(name))?;
        log::info!(
            "{name}: {}x{} blocks, {} fine vertices, {} coarse DOFs",
            spec.nx,
            spec.ny,
            geo.n_vertices,
            geo.index.n
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenGeometry(args) => gen_geometry(&load_config(&args)?),
        Command::GenData(args) => stage_generate(&load_config(&args)?),
        Command::Train(args) => stage_train(&load_config(&args)?),
        Command::Evaluate(args) => {
            let config = load_config(&args)?;
            let report = stage_evaluate(&config)?;
            print_summary(&report)?;
            Ok(())
        }
        Command::RunExample(args) => {
            let config = load_config(&args)?;
            let report = run_example(&config)?;
            print_summary(&report)?;
            println!("artifacts in {}", config.out_dir);
            Ok(())
        }
    }
}

fn print_summary(report: &fracflow::experiment::ErrorReport) -> Result<()> {
    println!("mean one-step test errors (percent):");
    for name in ["o", "m", "s"] {
        if let Some(ne) = report.networks.get(name) {
            println!("  {name}: {:.4}", ne.mean);
        }
    }
    if let Some(ro) = &report.rollout {
        println!("rollout final-time errors (percent, level {}):", ro.final_level);
        for (name, mean) in &ro.means {
            println!("  {name}: {mean:.4}");
        }
    }
    let verdict = compare_networks(report, 1.1)?;
    println!(
        "ordering (slack 1.1): o ≤ m {}, m ≤ s {}",
        if verdict.o_le_m { "holds" } else { "FAILS" },
        if verdict.m_le_s { "holds" } else { "FAILS" }
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
