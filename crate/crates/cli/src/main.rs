//! `heatflow` command-line runner.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for
//! configuration errors and 3 for numerical failures.

mod config;
mod experiments;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use config::{ConfigError, Experiment};
use experiments::Context;

#[derive(Debug, Parser)]
#[command(name = "heatflow", version, about = "Heat-flow transport maps and their diagnostics")]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set flow.rel_tol=1e-6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("numerical failure in {experiment}: {source}")]
    Numerical {
        experiment: Experiment,
        source: heatflow::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical { .. } | Self::Io { .. } => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

fn library_error(experiment: Experiment, e: heatflow::Error) -> Failure {
    use heatflow::Error as E;
    match e {
        E::InvalidConfig(_) | E::InvalidInput(_) | E::Capability(_) => Failure::Config(e.to_string()),
        source => Failure::Numerical { experiment, source },
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Failure::Io { path, source })
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|source| Failure::Io {
            path: p.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut cfg = config::load(&text, &cli.overrides)?;
    if let Some(e) = cfg.experiment {
        if e != cli.experiment {
            return Err(Failure::Config(format!(
                "config declares experiment {e} but the subcommand is {}",
                cli.experiment
            )));
        }
    }
    cfg.experiment = Some(cli.experiment);
    if let Some(o) = &cli.output {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    let seed = cfg.seed;
    cfg.resolve()?;
    let kind = cli.experiment;
    let density = cfg.density.build().map_err(|e| library_error(kind, e))?;
    let quad = cfg.quadrature.build(density.dim(), seed).map_err(|e| library_error(kind, e))?;
    let flow = cfg.flow.build().map_err(|e| library_error(kind, e))?;

    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir).map_err(|source| Failure::Io {
        path: dir.clone(),
        source,
    })?;
    let resolved = toml::to_string(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    write(&dir, "resolved-config.txt", &resolved)?;

    let ctx = Context { cfg, density, quad, flow };
    let run = experiments::run(kind, &ctx).map_err(|e| library_error(kind, e))?;
    for (name, contents) in &run.files {
        write(&dir, name, contents)?;
    }
    let json = serde_json::to_string_pretty(&run.checks).expect("checks serialize") + "\n";
    write(&dir, "report.json", &json)?;
    for c in run.checks.iter().filter(|c| !c.pass) {
        eprintln!("check failed: {} (statistic {}, threshold {:?})", c.name, c.statistic, c.threshold);
    }
    Ok(run.checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
