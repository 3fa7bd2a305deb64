use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use limitlab_cli::commands;
use limitlab_cli::ExperimentConfig;

#[derive(Parser)]
#[command(name = "limitlab", version, about = "Limits of operators applied to dilated measures")]
struct Cli {
    /// Experiment file (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sample budget, overriding the config
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = one per core
    #[arg(long, global = true, env = "LIMITLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Operator, target and difference at one point, as JSON
    Eval {
        /// Comma-separated coordinates
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        /// Dilation applied to the measure
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// t -> 0+ sweep; writes CSV and JSON reports
    Sweep,
    /// Closed-form constants in dimension n
    Constants {
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Integral continuity modulus and Dini integral of the config kernel
    Dini,
    /// Dilated-ball certificates
    Counterexample {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.1, 0.02])]
        t: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Truncated power example: convergence in measure without weak-norm convergence
    Hierarchy,
}

fn load(cli: &Cli) -> anyhow::Result<Option<ExperimentConfig>> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.budget {
        cfg.budget = b;
    }
    Ok(Some(cfg))
}

fn require(cfg: Option<ExperimentConfig>) -> anyhow::Result<ExperimentConfig> {
    cfg.ok_or_else(|| anyhow::anyhow!("this subcommand needs --config"))
}

fn emit(out: Option<&Path>, name: &str, json: &str) -> anyhow::Result<()> {
    println!("{json}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), json)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = load(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Eval { x, t } => {
            let r = commands::cmd_eval(&require(cfg)?, x, *t)?;
            emit(out, "eval.json", &serde_json::to_string_pretty(&r)?)?;
        }
        Command::Sweep => {
            let o = commands::cmd_sweep(&require(cfg)?, out)?;
            for w in &o.report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", o.csv.display());
            println!("{}", o.json.display());
        }
        Command::Constants { n } => {
            let c = commands::cmd_constants(*n)?;
            print!("{c}");
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("constants.json"), serde_json::to_string_pretty(&c)?)?;
            }
        }
        Command::Dini => {
            let d = commands::cmd_dini(&require(cfg)?)?;
            print!("{}", commands::dini_table(&d));
            if let Some(dir) = out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("dini.json"), serde_json::to_string_pretty(&d)?)?;
            }
        }
        Command::Counterexample { n, t, points } => {
            let c = commands::cmd_counterexample(*n, t, *points)?;
            emit(out, "counterexample.json", &serde_json::to_string_pretty(&c)?)?;
        }
        Command::Hierarchy => {
            let h = commands::cmd_hierarchy(cfg.as_ref(), cli.seed, cli.budget)?;
            emit(out, "hierarchy.json", &serde_json::to_string_pretty(&h)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(limitlab::Error::Singularity(m)) = e.downcast_ref::<limitlab::Error>() {
                eprintln!("singularity: {m}");
                return ExitCode::from(3);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
