use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use backboot::eval::NoiseKind;
use backboot::{Formula, RatioDenominator};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod exit;

use commands::{DiagnoseArgs, ForecastArgs, Overrides, SimulateArgs};
use config::RunConfig;

/// Distribution forecasts by bootstrapping backtest residuals.
#[derive(Parser, Debug)]
#[command(name = "backboot", version)]
struct Cli {
    /// Master seed; replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores, or runtime.workers).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Harvest predictive residuals over rolling split points.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Backtest, fit the selector and the final model, and save a bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Distribution forecasts from a saved bundle.
    Forecast {
        #[arg(long)]
        bundle: PathBuf,
        /// Optional config supplying `[forecast]` defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Future covariates: id, time and every training covariate.
        #[arg(long)]
        covariates: Option<PathBuf>,
        /// Steps ahead for models without covariates.
        #[arg(long)]
        horizon: Option<usize>,
        /// Also write the raw bootstrap samples.
        #[arg(long)]
        samples: bool,
        #[command(flatten)]
        bootstrap: BootstrapFlags,
        /// Comma-separated quantile levels.
        #[arg(long, value_parser = commands::parse_taus)]
        taus: Option<commands::Taus>,
    },
    /// Rolling-origin evaluation of one or more methods.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        bootstrap: BootstrapFlags,
        #[arg(long, value_parser = commands::parse_taus)]
        taus: Option<commands::Taus>,
    },
    /// Generate a synthetic panel with known conditional quantiles.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        #[arg(long)]
        series: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        trend: Option<f64>,
        #[arg(long)]
        season: Option<f64>,
        #[arg(long)]
        drift: Option<f64>,
        #[arg(long)]
        bias: Option<f64>,
        #[arg(long)]
        noise_covariates: Option<usize>,
    },
    /// Distance correlations and selector sanity checks on a residual file.
    Diagnose {
        #[arg(long)]
        residuals: PathBuf,
        /// Optional config whose `[selector]` is checked.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Features to rank (default: h, j, t, forecast and all extras).
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
        /// Rules to test, e.g. "horizon <= 2"; repeatable.
        #[arg(long = "rule")]
        rules: Vec<String>,
        /// Subsample cap for distance correlation.
        #[arg(long)]
        cap: Option<usize>,
    },
}

#[derive(clap::Args, Debug, Default)]
struct BootstrapFlags {
    #[arg(long, value_enum)]
    formula: Option<FormulaArg>,
    #[arg(long, value_enum)]
    ratio_denominator: Option<DenominatorArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulaArg {
    Additive,
    Multiplicative,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DenominatorArg {
    BacktestForecast,
    ObservedResponse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    AdditiveGaussian,
    MultiplicativeGaussian,
    HorizonHeteroscedastic,
    BiasedPfProbe,
}

impl From<Kind> for NoiseKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::AdditiveGaussian => NoiseKind::AdditiveGaussian,
            Kind::MultiplicativeGaussian => NoiseKind::MultiplicativeGaussian,
            Kind::HorizonHeteroscedastic => NoiseKind::HorizonHeteroscedastic,
            Kind::BiasedPfProbe => NoiseKind::BiasedPfProbe,
        }
    }
}

impl BootstrapFlags {
    fn overrides(&self, seed: Option<u64>, taus: Option<&commands::Taus>, folds: Option<usize>) -> Overrides {
        Overrides {
            seed,
            formula: self.formula.map(|f| match f {
                FormulaArg::Additive => Formula::Additive,
                FormulaArg::Multiplicative => Formula::Multiplicative,
            }),
            ratio_denominator: self.ratio_denominator.map(|d| match d {
                DenominatorArg::BacktestForecast => RatioDenominator::BacktestForecast,
                DenominatorArg::ObservedResponse => RatioDenominator::ObservedResponse,
            }),
            taus: taus.map(|t| t.0.clone()),
            folds,
        }
    }
}

fn load_optional(path: Option<&Path>) -> anyhow::Result<Option<RunConfig>> {
    path.map(RunConfig::load).transpose()
}

fn init_pool(workers: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot start worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let out = |cmd: &str| cli.out.clone().unwrap_or_else(|| commands::default_out(cmd));
    match &cli.command {
        Command::Backtest { config, data } => {
            let cfg = RunConfig::load(config)?;
            init_pool(cli.workers.or(cfg.runtime.workers))?;
            let ov = Overrides { seed: cli.seed, ..Overrides::default() };
            commands::backtest(cfg, data.as_deref(), &out("backtest"), &ov)
        }
        Command::Train { config, data } => {
            let cfg = RunConfig::load(config)?;
            init_pool(cli.workers.or(cfg.runtime.workers))?;
            let ov = Overrides { seed: cli.seed, ..Overrides::default() };
            commands::train_cmd(cfg, data.as_deref(), &out("train"), &ov)
        }
        Command::Forecast { bundle, config, covariates, horizon, samples, bootstrap, taus } => {
            let cfg = load_optional(config.as_deref())?.unwrap_or_default();
            init_pool(cli.workers.or(cfg.runtime.workers))?;
            let args = ForecastArgs { bundle, covariates: covariates.as_deref(), horizon: *horizon, samples: *samples };
            commands::forecast(cfg, &args, &out("forecast"), &bootstrap.overrides(cli.seed, taus.as_ref(), None))
        }
        Command::Evaluate { config, data, folds, bootstrap, taus } => {
            let cfg = RunConfig::load(config)?;
            init_pool(cli.workers.or(cfg.runtime.workers))?;
            commands::evaluate(cfg, data.as_deref(), &out("evaluate"), &bootstrap.overrides(cli.seed, taus.as_ref(), *folds))
        }
        Command::Simulate { config, kind, series, length, sigma, trend, season, drift, bias, noise_covariates } => {
            let cfg = load_optional(config.as_deref())?;
            let args = SimulateArgs {
                kind: kind.map(NoiseKind::from),
                series: *series,
                length: *length,
                sigma: *sigma,
                trend: *trend,
                season: *season,
                drift: *drift,
                bias: *bias,
                noise_covariates: *noise_covariates,
            };
            commands::simulate(cfg, &args, cli.seed, &out("simulate"))
        }
        Command::Diagnose { residuals, config, features, rules, cap } => {
            let cfg = load_optional(config.as_deref())?;
            init_pool(cli.workers.or(cfg.as_ref().and_then(|c| c.runtime.workers)))?;
            let args = DiagnoseArgs { residuals, features: features.clone(), rules: rules.clone(), cap: *cap };
            commands::diagnose(cfg, &args, cli.seed, &out("diagnose"))
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit::code(&e))
        }
    }
}
