use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kernel_lstd::experiments::{
    fit_one, parse_config_file, run_sweep_horizon, run_sweep_n, run_verify_lowerbound, to_csv, SweepConfig,
};
use kernel_lstd::kernel::DEFAULT_TRUNCATION;
use kernel_lstd::lowerbound::{write_family, Regime};
use kernel_lstd::Result;

#[derive(Parser)]
#[command(name = "klstd", about = "Kernel LSTD experiments on dyadic Markov reward processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mean squared error against sample size at fixed gamma.
    SweepN(SweepArgs),
    /// Mean squared error against the effective horizon at fixed n.
    SweepH(SweepArgs),
    /// Build and certify a lower-bound family.
    VerifyLb(LbArgs),
    /// A single tuned fit.
    FitOne(SweepArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// Flat key=value file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// poly:<alpha>[:<c>], exp or linear:<d>.
    #[arg(long)]
    kernel: Option<String>,
    /// hard or easy.
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "gamma-grid")]
    gamma_grid: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long = "n-grid")]
    n_grid: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    c0: Option<String>,
    /// bR or sigma.
    #[arg(long)]
    zeta: Option<String>,
    #[arg(long)]
    trunc: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append the slope line to the CSV.
    #[arg(long)]
    summary: bool,
}

impl SweepArgs {
    fn config(&self, mut base: SweepConfig) -> Result<SweepConfig> {
        let mut settings = match &self.config {
            Some(path) => parse_config_file(&std::fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        let flags = [
            ("kernel", &self.kernel),
            ("ensemble", &self.ensemble),
            ("gamma", &self.gamma),
            ("gamma-grid", &self.gamma_grid),
            ("n", &self.n),
            ("n-grid", &self.n_grid),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("c0", &self.c0),
            ("zeta", &self.zeta),
            ("trunc", &self.trunc),
            ("workers", &self.workers),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                // A flag replaces either spelling of the grid from the file.
                if key.starts_with("gamma") {
                    settings.remove("gamma");
                    settings.remove("gamma-grid");
                }
                if key == "n" || key == "n-grid" {
                    settings.remove("n");
                    settings.remove("n-grid");
                }
                settings.insert(key.to_string(), v.clone());
            }
        }
        base.apply(&settings)?;
        Ok(base)
    }

    fn summary_requested(&self) -> Result<bool> {
        if self.summary {
            return Ok(true);
        }
        Ok(match &self.config {
            Some(path) => parse_config_file(&std::fs::read_to_string(path)?)?
                .get("summary")
                .is_some_and(|v| v == "true" || v == "1"),
            None => false,
        })
    }
}

#[derive(Args)]
struct LbArgs {
    /// A or B.
    #[arg(long)]
    regime: String,
    #[arg(long, default_value = "poly:1")]
    kernel: String,
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION)]
    trunc: usize,
    /// Report path; the family file is written next to it with a
    /// `.family` suffix.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::SweepN(a) => {
            let c = a.config(SweepConfig::sweep_n_defaults())?;
            emit(&a.out, &to_csv(&run_sweep_n(&c)?, a.summary_requested()?))?;
        }
        Command::SweepH(a) => {
            let c = a.config(SweepConfig::sweep_h_defaults())?;
            emit(&a.out, &to_csv(&run_sweep_horizon(&c)?, a.summary_requested()?))?;
        }
        Command::FitOne(a) => {
            let base = SweepConfig { ns: vec![1024], trials: 1, ..SweepConfig::sweep_n_defaults() };
            let c = a.config(base)?;
            emit(&a.out, &fit_one(&c)?.to_text())?;
        }
        Command::VerifyLb(a) => {
            let regime: Regime = a.regime.parse()?;
            let (report, fam) = run_verify_lowerbound(regime, &a.kernel, a.gamma, a.n, a.seed, a.trunc)?;
            let family = write_family(&fam);
            match &a.out {
                Some(path) => {
                    std::fs::write(path, report.to_text())?;
                    let mut fpath = path.clone().into_os_string();
                    fpath.push(".family");
                    std::fs::write(fpath, family)?;
                }
                None => print!("{}", report.to_text()),
            }
            return Ok(report.pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
