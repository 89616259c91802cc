//! Command-line front end: builtin example runs and parameter sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qlips::config::{set_override, RunConfig};
use qlips::run::{run, sweep, SweepAxis};
use qlips::{Error, Result};

#[derive(Parser)]
#[command(name = "qlips", version, about = "Randomized-network interface solver with perturbation correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize, correct and write reports for one configuration.
    Run(Common),
    /// One run per value along an axis, aggregated into sweep_<axis>.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// mp, contrast, petals or seed.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Builtin example ex1..ex6.
    #[arg(long)]
    example: Option<String>,
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Correction neurons per subdomain.
    #[arg(long)]
    mp: Option<u32>,
    /// Diffusion contrast of ex4.
    #[arg(long)]
    contrast: Option<f64>,
    /// Petal count of ex3.
    #[arg(long)]
    petals: Option<u32>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u32>,
    /// Skip the correction stage.
    #[arg(long)]
    no_correction: bool,
    /// Output directory (default: config `output_dir`, then $QLIPS_OUT, then ./qlips_out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    /// Config file contents with flag overrides applied.
    fn table(&self) -> Result<toml::Table> {
        let mut t = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        use toml::Value as V;
        if let Some(e) = &self.example {
            set_override(&mut t, "example", V::String(e.clone()))?;
        }
        if let Some(v) = self.mp {
            set_override(&mut t, "correction.net.m_p", V::Integer(v.into()))?;
        }
        if let Some(v) = self.contrast {
            set_override(&mut t, "params.contrast", V::Float(v))?;
        }
        if let Some(v) = self.petals {
            set_override(&mut t, "params.petals", V::Integer(v.into()))?;
        }
        if let Some(v) = self.seed {
            set_override(&mut t, "seed", V::Integer(v.into()))?;
        }
        if self.no_correction {
            set_override(&mut t, "correction.enabled", V::Boolean(false))?;
        }
        Ok(t)
    }

    fn out_dir(&self, cfg: Option<&RunConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
            .or_else(|| std::env::var_os("QLIPS_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("qlips_out"))
    }
}

fn write_error_record(dir: &Path, e: &Error) {
    let record = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), format!("{record:#}\n"));
    }
}

fn execute(cli: &Cli) -> (Result<()>, PathBuf) {
    let common = match &cli.command {
        Command::Run(c) => c,
        Command::Sweep { common, .. } => common,
    };
    let table = match common.table() {
        Ok(t) => t,
        Err(e) => return (Err(e), common.out_dir(None)),
    };
    let cfg = match RunConfig::from_table(table.clone()) {
        Ok(c) => c,
        Err(e) => return (Err(e), common.out_dir(None)),
    };
    let dir = common.out_dir(Some(&cfg));
    let res = match &cli.command {
        Command::Run(_) => run(&cfg, &dir).map(|rep| {
            if let Some(e) = rep.final_errors() {
                println!(
                    "{}: relative L2 {:.4e}, relative Linf {:.4e} ({})",
                    rep.example,
                    e.global.relative_l2,
                    e.global.relative_linf,
                    dir.display()
                );
            }
        }),
        Command::Sweep { axis, values, jobs, .. } => sweep(&table, *axis, values, *jobs, &dir).map(|rows| {
            for r in rows {
                println!("{} = {}: {}", axis.as_str(), r.value, r.status);
            }
        }),
    };
    (res, dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        (Ok(()), _) => ExitCode::SUCCESS,
        (Err(e), dir) => {
            eprintln!("error: {e}");
            write_error_record(&dir, &e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
