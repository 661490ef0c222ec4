use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use flatlab::io::RunConfig;
use flatlab::pipeline::{run_subcommand, Subcommand};
use flatlab::robustness::AttackNorm;

/// Curvature and adversarial-robustness experiments on small ReLU classifiers.
#[derive(Debug, Parser)]
#[command(name = "flatlab", version)]
struct Cli {
    /// Pipeline to run.
    #[arg(value_enum)]
    command: Subcommand,
    /// INI run configuration; defaults apply to anything not set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// PGD iterations.
    #[arg(long)]
    steps: Option<usize>,
    /// Attack radius.
    #[arg(long)]
    eps: Option<f64>,
    /// PGD step size.
    #[arg(long)]
    alpha: Option<f64>,
    /// Attack norm: l2 or linf.
    #[arg(long)]
    norm: Option<AttackNorm>,
    /// Comma-separated classifier scales for sweep-scale.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// Take-off threshold for basin.
    #[arg(long)]
    tau: Option<f64>,
    /// Cross-validation folds for detect.
    #[arg(long)]
    folds: Option<usize>,
}

fn config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(v) = cli.steps {
        cfg.attack.steps = v;
    }
    if let Some(v) = cli.eps {
        cfg.attack.epsilon = v;
    }
    if let Some(v) = cli.alpha {
        cfg.attack.step_size = v;
    }
    if let Some(v) = cli.norm {
        cfg.attack.norm = v;
    }
    if let Some(v) = &cli.scales {
        cfg.scales = v.clone();
    }
    if let Some(v) = cli.tau {
        cfg.tau = v;
    }
    if let Some(v) = cli.folds {
        cfg.folds = v;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_subcommand(cli.command, &cfg) {
        Ok(out) => {
            for (k, v) in &out.summary {
                println!("{k} = {v}");
            }
            println!(
                "wrote {} files to {}",
                out.files.len(),
                out.out_dir.display()
            );
            if out.success {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} failed", cli.command.as_str());
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
