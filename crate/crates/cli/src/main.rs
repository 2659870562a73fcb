use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eqlab_core::experiments::{list_experiments, run, ExperimentConfig};
use eqlab_core::Error;

#[derive(Parser)]
#[command(name = "eqlab", version, about = "Run the coupled autoregression/regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(Selection),
    /// List experiment names with one-line descriptions.
    List,
    /// Print the effective configuration as TOML.
    ShowConfig(Selection),
    /// Check a configuration without running it.
    Validate(Selection),
}

#[derive(Args)]
struct Selection {
    /// Experiment name; optional when --config names one.
    experiment: Option<String>,
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Selection {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.config, &self.experiment) {
            (Some(path), name) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Configuration(format!("{}: {e}", path.display())))?;
                let cfg = ExperimentConfig::parse(&text)?;
                if let Some(n) = name.as_deref().filter(|n| *n != cfg.experiment) {
                    return Err(Error::Configuration(format!("config is for '{}', not '{n}'", cfg.experiment)));
                }
                cfg
            }
            (None, Some(name)) => ExperimentConfig::defaults_for(name)?,
            (None, None) => return Err(Error::Configuration("name an experiment or pass --config".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.reps {
            cfg.reps = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Configuration(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for (name, about) in list_experiments() {
                println!("{name:<26}{about}");
            }
            ExitCode::SUCCESS
        }
        Command::ShowConfig(sel) => match sel.config().and_then(|c| c.to_toml()) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Validate(sel) => match sel.config() {
            Ok(cfg) => {
                println!("{}: ok", cfg.experiment);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Run(sel) => {
            let cfg = match sel.config() {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if let Some(w) = sel.workers {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
                    return fail(&Error::Configuration(format!("worker pool: {e}")));
                }
            }
            match run(&cfg, &sel.out_dir) {
                Ok(outcome) => {
                    for c in &outcome.checks {
                        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
                    }
                    println!("artifacts: {}", sel.out_dir.join(&outcome.experiment).display());
                    if outcome.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(&e),
            }
        }
    }
}
