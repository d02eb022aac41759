use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harvest_cli::{list_experiments, load, run, run_experiment, Overrides, OUT_DIR_ENV};
use harvest_core::mdp::write_policy_csv;

#[derive(Parser)]
#[command(name = "harvest", version, about = "Energy-harvesting sensor node experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file or a bundled experiment by name.
    Run {
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        /// Output directory.
        #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
        out: PathBuf,
    },
    /// List the bundled experiments.
    List,
    /// Parse and validate an experiment without running it.
    Validate { config: String },
    /// Solve the MDP of an experiment with an OP policy and export the
    /// optimal policy as q,E,action CSV, one file per arrival point.
    MdpSolve {
        config: String,
        /// Only this arrival mean.
        #[arg(long)]
        arrival: Option<f64>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Box<dyn std::error::Error>> {
    match cmd {
        Command::Run {
            config,
            seed,
            horizon,
            out,
        } => {
            let (text, cfg) = load(&config)?;
            eprintln!(
                "running {} ({} jobs) into {}",
                cfg.experiment_id,
                cfg.job_count(),
                out.display()
            );
            let s = run_experiment(&cfg, &text, &Overrides { seed, horizon }, &out)?;
            println!("{} rows -> {}", s.rows, s.csv.display());
            if let Some(c) = s.companion {
                println!("companion -> {}", c.display());
            }
            println!("manifest -> {}", s.manifest.display());
        }
        Command::List => {
            for e in list_experiments() {
                println!("{:<8} {:<20} schema v{}  {}", e.name, e.scenario, e.schema_version, e.description);
                println!("{:<8} policies: {}", "", e.policies.join(", "));
                if let Some(n) = e.note {
                    println!("{:<8} note: {n}", "");
                }
            }
        }
        Command::Validate { config } => {
            let (_, cfg) = load(&config)?;
            println!(
                "{}: ok ({}, {} policies x {} points x {} replications)",
                cfg.experiment_id,
                cfg.scenario.name(),
                cfg.policies.len(),
                cfg.sweep.len(),
                cfg.replications
            );
        }
        Command::MdpSolve { config, arrival, out } => {
            let (_, cfg) = load(&config)?;
            let points = match arrival {
                Some(a) => vec![a],
                None => cfg.sweep.clone(),
            };
            std::fs::create_dir_all(&out)?;
            for p in points {
                let sol = run::solve_optimal(&cfg, p)?;
                let path = out.join(format!("{}_policy_EX{p}.csv", cfg.experiment_id));
                write_policy_csv(&sol.to_table(), std::io::BufWriter::new(std::fs::File::create(&path)?))?;
                match sol.avg_cost {
                    Some(g) => println!("E[X]={p}: average cost {g:.6} -> {}", path.display()),
                    None => println!("E[X]={p}: {} iterations -> {}", sol.iterations, path.display()),
                }
            }
        }
    }
    Ok(())
}
