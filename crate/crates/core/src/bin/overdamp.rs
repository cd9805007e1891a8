use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use overdamp::cli::config::STUDIES;
use overdamp::cli::run::EXIT_CONFIG;
use overdamp::cli::{exit_code, parse_config, run, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "overdamp", version, about = "Overdamped one-body dynamics with hydrodynamic interactions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write test-runner XML for study checks.
    #[arg(long)]
    junit: bool,
    /// Write the assembled flux system (and the collision operator for the spectral study).
    #[arg(long)]
    dump_matrix: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver or study selected in the config.
    Run(RunArgs),
    /// Validate a config without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named study with the settings of a config.
    Study {
        name: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

fn configure_threads() {
    if let Ok(v) = std::env::var("OVERDAMP_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring OVERDAMP_THREADS={v:?}; expected a positive integer"),
        }
    }
}

fn load(path: &PathBuf) -> Result<RunConfig, ExitCode> {
    parse_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(exit_code(&e) as u8)
    })
}

fn execute(config: RunConfig, args: &RunArgs) -> ExitCode {
    let opts = RunOptions { out: args.out.clone(), seed: args.seed, junit: args.junit, dump_matrix: args.dump_matrix };
    let outcome = run(&config, &opts);
    if outcome.code == 0 {
        println!("{}", outcome.message);
    } else {
        eprintln!("{}", outcome.message);
    }
    if let Some(dir) = outcome.out_dir {
        println!("output: {}", dir.display());
    }
    ExitCode::from(outcome.code as u8)
}

fn main() -> ExitCode {
    configure_threads();
    match Cli::parse().command {
        Command::Check { config } => match load(&config) {
            Ok(cfg) => {
                let p = &cfg.physics;
                println!(
                    "config ok: solver {}, dim {}, epsilon {}, D0 {}",
                    cfg.solver.kind,
                    p.dim,
                    p.epsilon(),
                    p.kbt / (p.mass * p.gamma)
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run(args) => match load(&args.config) {
            Ok(cfg) => execute(cfg, &args),
            Err(code) => code,
        },
        Command::Study { name, args } => {
            if !STUDIES.contains(&name.as_str()) {
                eprintln!("error: unknown study '{name}'; available studies: {}", STUDIES.join(", "));
                return ExitCode::from(EXIT_CONFIG as u8);
            }
            let text = match std::fs::read_to_string(&args.config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read config '{}': {e}", args.config.display());
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            };
            match RunConfig::from_toml_str(&text) {
                Ok(mut cfg) => {
                    cfg.solver.kind = "study".into();
                    cfg.solver.study.name = name;
                    execute(cfg, &args)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            }
        }
    }
}
