//! Monte-Carlo benchmark: simulate → select → evaluate, `K` times.

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSpec};
use crate::density::TransitionDensityOracle;
use crate::error::{Error, Result};
use crate::estimator::{CutoffConfig, EstimationWindow};
use crate::evaluation::{
    density_grid, eval_window, normalized_errors, squared_errors, EvalWindow, MiseNormalization,
    SquaredErrors, DEFAULT_GRID_SIZE,
};
use crate::rng::child_seed;
use crate::selection::{
    select_adaptive, PenaltyConstant, PenaltyKind, PenaltyScale, PenaltySpec, SelectionResult,
};
use crate::sim::{simulate, steps_of, Model, OuParams, PathEnsemble, SimGrid};

/// Everything needed to run the pipeline; see [`crate::config`] for parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: Model,
    pub n_paths: usize,
    /// `T`: the time integrals run over `s ∈ [0, T]`.
    pub horizon: f64,
    pub delta: f64,
    /// `t`: the lag of the estimated transition density.
    pub lag: f64,
    pub reps: usize,
    pub basis_x: BasisKind,
    pub basis_y: BasisKind,
    pub caps: (usize, usize),
    pub penalty: PenaltyKind,
    pub kappa: f64,
    #[serde(default)]
    pub penalty_scale: PenaltyScale,
    #[serde(default)]
    pub penalty_constant: PenaltyConstant,
    pub cutoff: f64,
    pub cutoff_exponent: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid_x: usize,
    pub grid_y: usize,
    pub mise_normalization: MiseNormalization,
    /// Simulate exactly `T/Δ` steps and integrate over `s ∈ [0, T − t]`
    /// instead of extending the paths to `T + t`.
    pub fixed_grid: bool,
    pub r: f64,
    pub gamma: f64,
    pub dim: usize,
}

/// Dimension caps used for each model's benchmark.
pub fn default_caps(model: Model) -> (usize, usize) {
    match model {
        Model::Ou => (10, 12),
        Model::TanhOu => (8, 45),
        Model::Cir => (12, 15),
    }
}

impl ExperimentConfig {
    /// Benchmark defaults for `model`: `N = 200`, `T = 10`, `Δ = 0.01`,
    /// `t = 1`, Hermite bases, plain penalty with `κ = 2`.
    pub fn defaults(model: Model) -> Self {
        let p = model.default_params();
        Self {
            model,
            n_paths: 200,
            horizon: 10.0,
            delta: 0.01,
            lag: 1.0,
            reps: 200,
            basis_x: BasisKind::Hermite,
            basis_y: BasisKind::Hermite,
            caps: default_caps(model),
            penalty: PenaltyKind::Plain,
            kappa: 2.0,
            penalty_scale: PenaltyScale::default(),
            penalty_constant: PenaltyConstant::default(),
            cutoff: crate::estimator::CutoffConfig::default().constant,
            cutoff_exponent: 1,
            seed: 1,
            output_dir: PathBuf::from("out"),
            grid_x: DEFAULT_GRID_SIZE,
            grid_y: DEFAULT_GRID_SIZE,
            mise_normalization: MiseNormalization::LastRep,
            fixed_grid: false,
            r: p.r(),
            gamma: p.gamma(),
            dim: p.d(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Configuration(format!("{field}: {msg}")));
        if self.n_paths == 0 {
            return bad("n_paths", "must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta", format!("must be positive, got {}", self.delta));
        }
        if !(self.lag > 0.0) {
            return bad("lag", format!("must be positive, got {}", self.lag));
        }
        if steps_of(self.lag, self.delta).is_err() {
            return bad(
                "lag",
                format!("{} is not a multiple of delta = {}", self.lag, self.delta),
            );
        }
        if !(self.horizon > 0.0) {
            return bad("horizon", format!("must be positive, got {}", self.horizon));
        }
        if steps_of(self.horizon, self.delta).is_err() {
            return bad(
                "horizon",
                format!(
                    "{} is not a multiple of delta = {}",
                    self.horizon, self.delta
                ),
            );
        }
        if self.fixed_grid && self.horizon <= self.lag {
            return bad(
                "horizon",
                "must exceed the lag when fixed_grid is set".into(),
            );
        }
        if self.reps == 0 {
            return bad("reps", "must be at least 1".into());
        }
        if self.caps.0 == 0 || self.caps.1 == 0 {
            return bad(
                "caps",
                format!("must be at least (1, 1), got {:?}", self.caps),
            );
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa", format!("must be positive, got {}", self.kappa));
        }
        self.cutoff_config().validate()?;
        if self.grid_x < 2 || self.grid_y < 2 {
            return bad("grid", "needs at least 2 points per axis".into());
        }
        OuParams::new(self.r, self.gamma, self.dim)
            .map_err(|e| Error::Configuration(format!("model parameters: {e}")))?;
        if matches!(self.model, Model::Ou | Model::TanhOu) && self.dim != 1 {
            return bad("dim", format!("model {} requires dim = 1", self.model));
        }
        Ok(())
    }

    pub fn ou_params(&self) -> Result<OuParams> {
        OuParams::new(self.r, self.gamma, self.dim)
    }

    pub fn cutoff_config(&self) -> CutoffConfig {
        CutoffConfig {
            constant: self.cutoff,
            exponent: self.cutoff_exponent,
        }
    }

    pub fn penalty_spec(&self) -> Result<PenaltySpec> {
        Ok(PenaltySpec::new(self.penalty, self.kappa)?
            .with_scale(self.penalty_scale)
            .with_constant(self.penalty_constant))
    }

    /// Simulation grid: `[0, T + t]`, or `[0, T]` with `fixed_grid`.
    pub fn sim_grid(&self) -> Result<SimGrid> {
        let span = if self.fixed_grid {
            self.horizon
        } else {
            self.horizon + self.lag
        };
        SimGrid::covering(self.delta, span)
    }

    pub fn estimation_window(&self, grid: &SimGrid) -> Result<EstimationWindow> {
        if self.fixed_grid {
            EstimationWindow::maximal(grid, self.lag)
        } else {
            EstimationWindow::for_horizon(grid, self.horizon, self.lag)
        }
    }

    pub fn oracle(&self) -> Result<TransitionDensityOracle> {
        TransitionDensityOracle::new(self.model, self.ou_params()?, self.lag)
    }

    /// Simulate the ensemble of repetition `rep`.
    pub fn simulate_rep(&self, rep: usize) -> Result<PathEnsemble> {
        simulate(
            self.model,
            self.ou_params()?,
            self.sim_grid()?,
            self.n_paths,
            self.rep_seed(rep),
        )
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        child_seed(self.seed, rep as u64)
    }

    /// Bases sized to the caps, with trigonometric supports fitted to `ens`.
    pub fn bases(&self, ens: &PathEnsemble) -> Result<(BasisSpec, BasisSpec)> {
        let (lo, hi) = ens.range();
        Ok((
            BasisSpec::for_range(self.basis_x, lo, hi, self.caps.0)?,
            BasisSpec::for_range(self.basis_y, lo, hi, self.caps.1)?,
        ))
    }

    /// Adaptive selection on one ensemble.
    pub fn select(&self, ens: &PathEnsemble) -> Result<SelectionResult> {
        let window = self.estimation_window(&ens.grid())?;
        let (phi, psi) = self.bases(ens)?;
        select_adaptive(
            ens,
            &window,
            &phi,
            &psi,
            self.caps,
            &self.penalty_spec()?,
            &self.cutoff_config(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub m1: usize,
    pub m2: usize,
    pub window: EvalWindow,
    pub errors: SquaredErrors,
    /// `100 ·` the normalised error of this repetition.
    pub mise_x100: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub reps: usize,
    pub mise_x100_mean: f64,
    pub mise_x100_sd: f64,
    pub mise_x100_median: f64,
    pub mean_m1: f64,
    pub mean_m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_rep: Vec<RepRecord>,
    pub aggregate: Aggregate,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl Aggregate {
    /// Summary statistics recomputed from per-repetition rows.
    pub fn from_reps(reps: &[RepRecord]) -> Self {
        let e: Vec<f64> = reps.iter().map(|r| r.mise_x100).collect();
        let m1: Vec<f64> = reps.iter().map(|r| r.m1 as f64).collect();
        let m2: Vec<f64> = reps.iter().map(|r| r.m2 as f64).collect();
        Self {
            reps: reps.len(),
            mise_x100_mean: mean(&e),
            mise_x100_sd: sample_sd(&e),
            mise_x100_median: median(&e),
            mean_m1: mean(&m1),
            mean_m2: mean(&m2),
        }
    }
}

struct RepOutcome {
    seed: u64,
    chosen: (usize, usize),
    window: EvalWindow,
    errors: SquaredErrors,
}

fn run_rep(config: &ExperimentConfig, rep: usize) -> Result<RepOutcome> {
    let ens = config.simulate_rep(rep)?;
    let selection = config.select(&ens)?;
    let grid = ens.grid();
    let t_index = grid.index_of(config.lag)?;
    let window = eval_window(&ens, t_index, t_index, config.grid_x, config.grid_y)?;
    let (xs, ys) = (window.xs(), window.ys());
    let truth = density_grid(&config.oracle()?, &xs, &ys)?;
    let estimate = selection.fit.evaluate(&xs, &ys);
    let errors = squared_errors(&truth, &estimate, &window)?;
    Ok(RepOutcome {
        seed: ens.seed().unwrap_or_default(),
        chosen: selection.chosen,
        window,
        errors,
    })
}

/// Runs `K` independent repetitions in parallel and aggregates them in
/// repetition order. Any failing repetition aborts the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let outcomes: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            run_rep(config, rep).map_err(|e| Error::Repetition {
                rep,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let errors: Vec<SquaredErrors> = outcomes.iter().map(|o| o.errors).collect();
    let normalized = normalized_errors(&errors, config.mise_normalization)?;
    let per_rep: Vec<RepRecord> = outcomes
        .into_iter()
        .zip(normalized)
        .enumerate()
        .map(|(rep, (o, e))| RepRecord {
            rep,
            seed: o.seed,
            m1: o.chosen.0,
            m2: o.chosen.1,
            window: o.window,
            errors: o.errors,
            mise_x100: 100.0 * e,
        })
        .collect();
    let aggregate = Aggregate::from_reps(&per_rep);
    Ok(ExperimentReport {
        config: config.clone(),
        per_rep,
        aggregate,
    })
}

impl ExperimentReport {
    /// Per-repetition rows followed by an aggregate footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rep,seed,m1,m2,ax,bx,ay,by,sq_error,sq_mass,mise_x100\n");
        for r in &self.per_rep {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.rep,
                r.seed,
                r.m1,
                r.m2,
                r.window.x_range.0,
                r.window.x_range.1,
                r.window.y_range.0,
                r.window.y_range.1,
                r.errors.error,
                r.errors.mass,
                r.mise_x100
            );
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "# aggregate");
        let _ = writeln!(
            out,
            "reps,mise_x100_mean,mise_x100_sd,mise_x100_median,mean_m1,mean_m2,master_seed"
        );
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            a.reps,
            a.mise_x100_mean,
            a.mise_x100_sd,
            a.mise_x100_median,
            a.mean_m1,
            a.mean_m2,
            self.config.seed
        );
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
