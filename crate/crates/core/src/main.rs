use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pilotwave::experiments::{rerun_from_manifest, run_scenario, RunManifest, RunStatus, Scenario, ScenarioConfig};
use pilotwave::{Error, Result};

/// Stochastic Bohmian ensembles in a one-dimensional box.
///
/// SCENARIO is one of relax, sweep, fields, trajectories,
/// stationary_diffusion, calibrate_noise, eigen, or `rerun` to repeat a run
/// from its manifest.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Cli {
    scenario: String,

    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides ensemble.seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,

    /// Potential CSV for `eigen` (x_angstrom,potential_ev).
    #[arg(long)]
    potential: Option<PathBuf>,

    /// Number of levels for `eigen`.
    #[arg(long)]
    levels: Option<usize>,

    /// Manifest to repeat with `rerun`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<RunManifest> {
    if let Some(k) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    if cli.scenario == "rerun" {
        let manifest = cli
            .manifest
            .ok_or_else(|| Error::Config("rerun needs --manifest".into()))?;
        return rerun_from_manifest(&manifest, cli.out);
    }
    let scenario: Scenario = cli.scenario.parse()?;
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None if scenario == Scenario::Eigen => ScenarioConfig::default(),
        None => return Err(Error::Config(format!("{scenario} needs --config"))),
    };
    if let Some(seed) = cli.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    if let Some(p) = cli.potential {
        cfg.system.potential_file = Some(p);
    }
    if let Some(k) = cli.levels {
        cfg.system.levels = k;
    }
    run_scenario(&cfg, scenario)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(m) => {
            let dir = m.config.output.dir.display();
            println!("{} {:?}: {} file(s) in {dir}", m.scenario, m.status, m.outputs.len());
            if m.status == RunStatus::Completed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
