use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use transden::basis::BasisFamily;
use transden::config::{resolve, Settings};
use transden::density::{TransitionDensity, TransitionDensityOracle};
use transden::estimator::{fit_with, EstimationWindow, TransitionFit};
use transden::evaluation::{
    density_grid, eval_window, option_price, EvalWindow, Payoff, DEFAULT_GRID_SIZE,
};
use transden::experiment::{run_experiment, ExperimentConfig};
use transden::io;
use transden::quadrature::linspace;
use transden::selection::select_adaptive;
use transden::sim::{Model, PathEnsemble};
use transden::{Error, Result};

/// Nonparametric transition-density estimation for i.i.d. diffusion paths.
#[derive(Parser)]
#[command(name = "transden", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble and write it to the output directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Bin)]
        format: Format,
    },
    /// Fit the estimator at fixed dimensions.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        m1: usize,
        #[arg(long)]
        m2: usize,
    },
    /// Select the dimensions by penalised contrast and fit.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
    },
    /// Monte-Carlo MISE benchmark over K repetitions.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// Price a payoff with the exact or a fitted transition density.
    Price {
        #[command(flatten)]
        common: Common,
        /// Fitted density (JSON fit record); the exact density is used otherwise.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Initial state.
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        /// `unit`, `identity`, `call:K` or `put:K`.
        #[arg(long, default_value = "unit")]
        payoff: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        rate: f64,
        #[arg(long, allow_hyphen_values = true)]
        y_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        y_max: Option<f64>,
        #[arg(long, default_value_t = 4001)]
        y_points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Csv,
}

#[derive(Args)]
struct Input {
    /// Existing ensemble (`.bin` or `.csv`); simulated from the settings otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct Common {
    /// Settings file (`key = value` lines, or `.json`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    horizon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lag: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    basis_x: Option<String>,
    #[arg(long)]
    basis_y: Option<String>,
    #[arg(long)]
    cap_m1: Option<usize>,
    #[arg(long)]
    cap_m2: Option<usize>,
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    cutoff: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn flags(&self) -> Result<Settings> {
        let mut s = Settings::new();
        let mut put = |k: &str, v: Option<String>| match v {
            Some(v) => s.set(k, v),
            None => Ok(()),
        };
        put("model", self.model.clone())?;
        put("n_paths", self.n_paths.map(|v| v.to_string()))?;
        put("horizon", self.horizon.map(|v| v.to_string()))?;
        put("delta", self.delta.map(|v| v.to_string()))?;
        put("lag", self.lag.map(|v| v.to_string()))?;
        put("reps", self.reps.map(|v| v.to_string()))?;
        put("basis_x", self.basis_x.clone())?;
        put("basis_y", self.basis_y.clone())?;
        put("cap_m1", self.cap_m1.map(|v| v.to_string()))?;
        put("cap_m2", self.cap_m2.map(|v| v.to_string()))?;
        put("penalty", self.penalty.clone())?;
        put("kappa", self.kappa.map(|v| v.to_string()))?;
        put("cutoff", self.cutoff.map(|v| v.to_string()))?;
        put("seed", self.seed.map(|v| v.to_string()))?;
        put(
            "output_dir",
            self.out.as_ref().map(|p| p.display().to_string()),
        )?;
        Ok(s)
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let file = self.config.as_deref().map(Settings::load).transpose()?;
        resolve(file.as_ref(), &self.flags()?)
    }
}

fn out_dir(config: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&config.output_dir)?;
    Ok(&config.output_dir)
}

fn ensemble_for(config: &ExperimentConfig, input: &Input) -> Result<PathEnsemble> {
    match &input.input {
        Some(p) => io::load_ensemble(p),
        None => config.simulate_rep(0),
    }
}

/// Window over which an ensemble is integrated: the configured one for
/// simulated data, everything the grid allows for loaded data.
fn window_for(
    config: &ExperimentConfig,
    input: &Input,
    ens: &PathEnsemble,
) -> Result<EstimationWindow> {
    if input.input.is_some() {
        EstimationWindow::maximal(&ens.grid(), config.lag)
    } else {
        config.estimation_window(&ens.grid())
    }
}

fn plot_window(ens: &PathEnsemble, lag_index: usize) -> Result<EvalWindow> {
    if ens.n_paths() >= 10 && 2 * lag_index <= ens.grid().n_steps() {
        return eval_window(
            ens,
            lag_index,
            lag_index,
            DEFAULT_GRID_SIZE,
            DEFAULT_GRID_SIZE,
        );
    }
    let (lo, hi) = ens.range();
    EvalWindow::new((lo, hi), (lo, hi), DEFAULT_GRID_SIZE, DEFAULT_GRID_SIZE)
}

/// Writes `fit.json`, `estimate.csv` and, when the generating model is
/// known, `truth.csv`.
fn write_fit_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    ens: &PathEnsemble,
    fit: &TransitionFit,
    window: &EstimationWindow,
) -> Result<()> {
    io::save_fit(fit, &dir.join("fit.json"))?;
    let w = plot_window(ens, window.lag_index())?;
    let (xs, ys) = (w.xs(), w.ys());
    io::save_grid(&dir.join("estimate.csv"), &xs, &ys, &fit.evaluate(&xs, &ys))?;
    if let (Some(model), Some(params)) = (ens.model(), ens.params()) {
        let oracle = TransitionDensityOracle::new(model, params, config.lag)?;
        io::save_grid(
            &dir.join("truth.csv"),
            &xs,
            &ys,
            &density_grid(&oracle, &xs, &ys)?,
        )?;
    }
    Ok(())
}

fn fit_summary(fit: &TransitionFit, seed: Option<u64>) -> String {
    let (m1, m2) = fit.dims();
    let seed = seed.map_or("null".to_string(), |s| s.to_string());
    format!(
        "{{\"m1\":{m1},\"m2\":{m2},\"truncated\":{},\"empirical_sq_norm\":{},\"seed\":{seed}}}",
        fit.truncated(),
        fit.empirical_sq_norm()
    )
}

/// Quadrature grid for pricing: explicit bounds, else the fitted basis'
/// effective support, else a range wide enough for the exact density.
fn price_grid(
    config: &ExperimentConfig,
    fit: Option<&TransitionFit>,
    x: f64,
    y_min: Option<f64>,
    y_max: Option<f64>,
    n: usize,
) -> Result<Vec<f64>> {
    let (lo, hi) = match fit {
        Some(f) => match f.psi().family() {
            BasisFamily::Hermite => {
                let w = 2.0 * (f.dims().1 as f64).sqrt() + 5.0;
                (-w, w)
            }
            BasisFamily::Trigonometric { a, b } => (a, b),
        },
        None => {
            let p = config.ou_params()?;
            let sd = p.stationary_variance().sqrt();
            match config.model {
                Model::Ou => (
                    x * p.decay(config.lag) - 12.0 * sd,
                    x * p.decay(config.lag) + 12.0 * sd,
                ),
                Model::TanhOu => (-1.0, 1.0),
                Model::Cir => (0.0, x + 40.0 * sd * sd * p.d() as f64 + 10.0),
            }
        }
    };
    let (lo, hi) = (y_min.unwrap_or(lo), y_max.unwrap_or(hi));
    if !(lo < hi) || n < 2 {
        return Err(Error::Parameter(format!(
            "invalid pricing grid [{lo}, {hi}] with {n} points"
        )));
    }
    Ok(linspace(lo, hi, n))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, format } => {
            let config = common.resolve()?;
            let ens = config.simulate_rep(0)?;
            let name = match format {
                Format::Bin => "ensemble.bin",
                Format::Csv => "ensemble.csv",
            };
            let path = out_dir(&config)?.join(name);
            io::save_ensemble(&ens, &path)?;
            println!(
                "{{\"path\":\"{}\",\"n_paths\":{},\"n_steps\":{},\"seed\":{}}}",
                path.display(),
                ens.n_paths(),
                ens.grid().n_steps(),
                ens.seed().unwrap_or_default()
            );
        }
        Command::Fit {
            common,
            input,
            m1,
            m2,
        } => {
            let config = common.resolve()?;
            let ens = ensemble_for(&config, &input)?;
            let window = window_for(&config, &input, &ens)?;
            let (phi, psi) = config.bases(&ens)?;
            let (phi, psi) = (phi.with_max_dim(m1)?, psi.with_max_dim(m2)?);
            let fit = fit_with(&ens, &window, &phi, &psi, (m1, m2), &config.cutoff_config())?;
            write_fit_outputs(out_dir(&config)?, &config, &ens, &fit, &window)?;
            println!("{}", fit_summary(&fit, ens.seed()));
        }
        Command::Select { common, input } => {
            let config = common.resolve()?;
            let ens = ensemble_for(&config, &input)?;
            let window = window_for(&config, &input, &ens)?;
            let (phi, psi) = config.bases(&ens)?;
            let sel = select_adaptive(
                &ens,
                &window,
                &phi,
                &psi,
                config.caps,
                &config.penalty_spec()?,
                &config.cutoff_config(),
            )?;
            let dir = out_dir(&config)?;
            io::save_selection_table(&dir.join("selection.csv"), &sel)?;
            write_fit_outputs(dir, &config, &ens, &sel.fit, &window)?;
            println!("{}", fit_summary(&sel.fit, ens.seed()));
        }
        Command::Benchmark { common } => {
            let config = common.resolve()?;
            let report = run_experiment(&config)?;
            io::save_report(out_dir(&config)?, &report)?;
            let a = &report.aggregate;
            println!(
                "{{\"reps\":{},\"mise_x100_mean\":{},\"mise_x100_sd\":{},\"mise_x100_median\":{},\"mean_m1\":{},\"mean_m2\":{},\"seed\":{}}}",
                a.reps, a.mise_x100_mean, a.mise_x100_sd, a.mise_x100_median, a.mean_m1, a.mean_m2, config.seed
            );
        }
        Command::Price {
            common,
            fit,
            x,
            payoff,
            rate,
            y_min,
            y_max,
            y_points,
        } => {
            let config = common.resolve()?;
            let payoff: Payoff = payoff.parse()?;
            let fitted = fit.as_deref().map(io::load_fit).transpose()?;
            let grid = price_grid(&config, fitted.as_ref(), x, y_min, y_max, y_points)?;
            let (density, maturity): (Box<dyn TransitionDensity>, f64) = match fitted {
                Some(f) => {
                    let lag = f.lag();
                    (Box::new(f), lag)
                }
                None => (Box::new(config.oracle()?), config.lag),
            };
            let price = option_price(
                density.as_ref(),
                |y| payoff.value(y),
                x,
                rate,
                maturity,
                &grid,
            )?;
            println!(
                "{{\"x\":{x},\"maturity\":{maturity},\"rate\":{rate},\"source\":\"{}\",\"price\":{price}}}",
                if fit.is_some() { "fit" } else { "exact" }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
