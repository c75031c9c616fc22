//! Data-driven choice of `m = (m₁, m₂)`.
//!
//! The admissible collection keeps the pairs with `m₁ 𝔏_ψ(m₂) ≤ N` whose
//! Gram matrix passes the stability cutoff; the selected model minimises
//! `−‖p̂_m‖²_N + 2κ pen(m)`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{param, Error, Result};
use crate::estimator::{CutoffConfig, EstimationWindow, MomentMatrices, TransitionFit};
use crate::sim::PathEnsemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `(1 + log N) m₁ 𝔏_ψ(m₂) / N`
    Log,
    /// `m₁ 𝔏_ψ(m₂) / N`
    Plain,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Log => "log",
            PenaltyKind::Plain => "plain",
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "log" => Ok(PenaltyKind::Log),
            "plain" => Ok(PenaltyKind::Plain),
            other => param(format!("unknown penalty '{other}' (expected plain or log)")),
        }
    }
}

/// What the penalty is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScale {
    /// The number of paths `N`.
    Paths,
    /// The observed occupation time `N T_eff`, the normalisation of `Ψ̂` and `Ẑ`.
    #[default]
    PathTime,
}

impl PenaltyScale {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyScale::Paths => "paths",
            PenaltyScale::PathTime => "path_time",
        }
    }
}

impl fmt::Display for PenaltyScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "paths" => Ok(PenaltyScale::Paths),
            "path_time" => Ok(PenaltyScale::PathTime),
            other => param(format!(
                "unknown penalty scale '{other}' (expected paths or path_time)"
            )),
        }
    }
}

/// Which `𝔏_ψ(m₂)` enters the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyConstant {
    /// [`BasisSpec::selection_constant`], `√m₂` for Hermite.
    Nominal,
    /// [`BasisSpec::sup_norm_constant`], the actual `sup Σ ψ_ℓ²`.
    #[default]
    Sup,
}

impl PenaltyConstant {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyConstant::Nominal => "nominal",
            PenaltyConstant::Sup => "sup",
        }
    }

    fn value(self, psi: &BasisSpec, m2: usize) -> Result<f64> {
        match self {
            PenaltyConstant::Nominal => Ok(psi.selection_constant(m2)),
            PenaltyConstant::Sup => psi.sup_norm_constant(m2),
        }
    }
}

impl fmt::Display for PenaltyConstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyConstant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nominal" => Ok(PenaltyConstant::Nominal),
            "sup" => Ok(PenaltyConstant::Sup),
            other => param(format!(
                "unknown penalty constant '{other}' (expected nominal or sup)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub kappa: f64,
    #[serde(default)]
    pub scale: PenaltyScale,
    #[serde(default)]
    pub constant: PenaltyConstant,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self {
            kind: PenaltyKind::Plain,
            kappa: 2.0,
            scale: PenaltyScale::default(),
            constant: PenaltyConstant::default(),
        }
    }
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return param(format!("kappa must be positive, got {kappa}"));
        }
        Ok(Self {
            kind,
            kappa,
            ..Self::default()
        })
    }

    /// The unscaled form `m₁ √m₂ / N` (Hermite ψ).
    pub fn literal(kind: PenaltyKind, kappa: f64) -> Result<Self> {
        Ok(Self {
            scale: PenaltyScale::Paths,
            constant: PenaltyConstant::Nominal,
            ..Self::new(kind, kappa)?
        })
    }

    pub fn with_scale(self, scale: PenaltyScale) -> Self {
        Self { scale, ..self }
    }

    pub fn with_constant(self, constant: PenaltyConstant) -> Self {
        Self { constant, ..self }
    }

    /// `pen(m)` from `m₁`, the model-space constant `𝔏_ψ(m₂)`, `N` and `T_eff`.
    pub fn value(&self, m1: usize, l_psi: f64, n: usize, t_eff: f64) -> f64 {
        let nf = n as f64;
        let denom = match self.scale {
            PenaltyScale::Paths => nf,
            PenaltyScale::PathTime => nf * t_eff,
        };
        let base = m1 as f64 * l_psi / denom;
        match self.kind {
            PenaltyKind::Plain => base,
            PenaltyKind::Log => (1.0 + nf.ln()) * base,
        }
    }
}

/// `pen(m)` for `N` paths observed over `T_eff`.
pub fn penalty(
    spec: &PenaltySpec,
    psi: &BasisSpec,
    m: (usize, usize),
    n: usize,
    t_eff: f64,
) -> Result<f64> {
    Ok(spec.value(m.0, spec.constant.value(psi, m.1)?, n, t_eff))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// `m₁ 𝔏_ψ(m₂) > N`
    Budget,
    /// The Gram matrix at `m₁` fails the stability cutoff.
    Cutoff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCollection {
    pub admissible: Vec<(usize, usize)>,
    pub exclusions: Vec<((usize, usize), ExclusionReason)>,
    pub caps: (usize, usize),
    pub cutoff: CutoffConfig,
}

/// Enumerates `(m₁, m₂) ≤ caps` and sorts them into admissible / excluded.
///
/// Only dimensions valid for each family are enumerated (odd sizes for the
/// trigonometric basis).
pub fn build_collection(
    moments: &MomentMatrices,
    caps: (usize, usize),
    cutoff: &CutoffConfig,
) -> Result<ModelCollection> {
    cutoff.validate()?;
    let (c1, c2) = moments.caps();
    if caps.0 == 0 || caps.1 == 0 {
        return Err(Error::Configuration(format!(
            "caps must be at least (1, 1), got {caps:?}"
        )));
    }
    if caps.0 > c1 || caps.1 > c2 {
        return param(format!(
            "caps {caps:?} exceed the assembled moments ({c1}, {c2})"
        ));
    }
    let n = moments.n_paths() as f64;
    let mut admissible = Vec::new();
    let mut exclusions = Vec::new();
    for m1 in (1..=caps.0).filter(|&m| moments.phi().is_valid_dim(m)) {
        let stable = moments.passes_cutoff(m1, cutoff)?;
        for m2 in (1..=caps.1).filter(|&m| moments.psi().is_valid_dim(m)) {
            if m1 as f64 * moments.psi().selection_constant(m2) > n {
                exclusions.push(((m1, m2), ExclusionReason::Budget));
            } else if !stable {
                exclusions.push(((m1, m2), ExclusionReason::Cutoff));
            } else {
                admissible.push((m1, m2));
            }
        }
    }
    if admissible.is_empty() {
        let budget = exclusions
            .iter()
            .filter(|(_, r)| *r == ExclusionReason::Budget)
            .count();
        let reason = if 2 * budget >= exclusions.len() {
            "budget m1 * L(m2) <= N"
        } else {
            "stability cutoff"
        };
        return Err(Error::Configuration(format!(
            "no admissible model within caps {caps:?}; most exclusions come from the {reason}"
        )));
    }
    Ok(ModelCollection {
        admissible,
        exclusions,
        caps,
        cutoff: *cutoff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub m1: usize,
    pub m2: usize,
    pub sq_norm: f64,
    pub penalty: f64,
    pub criterion: f64,
    pub truncated: bool,
    pub chosen: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub chosen: (usize, usize),
    pub table: Vec<CriterionRow>,
    pub fit: TransitionFit,
}

impl SelectionResult {
    /// Criterion table as CSV
    /// (`m1,m2,sq_norm,penalty,criterion,truncated,chosen`).
    pub fn table_csv(&self) -> String {
        let mut out = String::from("m1,m2,sq_norm,penalty,criterion,truncated,chosen\n");
        for r in &self.table {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.m1, r.m2, r.sq_norm, r.penalty, r.criterion, r.truncated, r.chosen
            );
        }
        out
    }
}

/// `‖p̂_{(m₁, ℓ)}‖²_N` for `ℓ = 1..=m2_max`, all from one solve at `m₁`.
fn cumulative_norms(
    moments: &MomentMatrices,
    m1: usize,
    m2_max: usize,
) -> Result<Option<Vec<f64>>> {
    let gram = moments.gram(m1)?;
    let z = moments.cross(m1, m2_max)?;
    let Some(theta) = gram.solve(&z) else {
        return Ok(None);
    };
    let psi_theta = gram.matrix() * &theta;
    let mut acc = 0.0;
    Ok(Some(
        (0..m2_max)
            .map(|l| {
                acc += theta.column(l).dot(&psi_theta.column(l));
                acc
            })
            .collect(),
    ))
}

/// Penalised selection over `collection`, reusing the cap-level moments.
pub fn select(
    moments: &MomentMatrices,
    spec: &PenaltySpec,
    collection: &ModelCollection,
) -> Result<SelectionResult> {
    if collection.admissible.is_empty() {
        return Err(Error::Selection("empty model collection".into()));
    }
    let n = moments.n_paths();
    let t_eff = moments.window().t_eff();
    let psi = moments.psi();
    let l_psi: Vec<f64> = (1..=collection.caps.1)
        .map(|m2| {
            if psi.is_valid_dim(m2) {
                spec.constant.value(psi, m2)
            } else {
                Ok(f64::NAN)
            }
        })
        .collect::<Result<_>>()?;
    let mut m1s: Vec<usize> = collection.admissible.iter().map(|m| m.0).collect();
    m1s.dedup();
    let m2_cap = collection.caps.1;
    let norms: Vec<(usize, Option<Vec<f64>>)> = m1s
        .par_iter()
        .map(|&m1| cumulative_norms(moments, m1, m2_cap).map(|v| (m1, v)))
        .collect::<Result<_>>()?;

    let mut table = Vec::new();
    let row = |m: (usize, usize), sq: Option<f64>| {
        let pen = spec.value(m.0, l_psi[m.1 - 1], n, t_eff);
        let sq_norm = sq.unwrap_or(0.0);
        CriterionRow {
            m1: m.0,
            m2: m.1,
            sq_norm,
            penalty: pen,
            criterion: -sq_norm + 2.0 * spec.kappa * pen,
            truncated: sq.is_none(),
            chosen: false,
        }
    };
    for &m in &collection.admissible {
        let sq = norms
            .iter()
            .find(|(m1, _)| *m1 == m.0)
            .and_then(|(_, v)| v.as_ref().map(|v| v[m.1 - 1]));
        table.push(row(m, sq));
    }
    for &(m, reason) in &collection.exclusions {
        if reason == ExclusionReason::Cutoff {
            table.push(row(m, None));
        }
    }
    table.sort_by_key(|r| (r.m1, r.m2));

    let best = table
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.truncated)
        .fold(None::<(usize, f64)>, |best, (i, r)| match best {
            Some((_, c)) if c <= r.criterion => best,
            _ => Some((i, r.criterion)),
        })
        .ok_or_else(|| Error::Selection("every candidate fit is truncated".into()))?;
    table[best.0].chosen = true;
    let chosen = (table[best.0].m1, table[best.0].m2);
    let fit = moments.fit(chosen.0, chosen.1, &collection.cutoff)?;
    Ok(SelectionResult { chosen, table, fit })
}

/// Assemble moments at `caps`, build the collection and select.
pub fn select_adaptive(
    ens: &PathEnsemble,
    window: &EstimationWindow,
    phi: &BasisSpec,
    psi: &BasisSpec,
    caps: (usize, usize),
    spec: &PenaltySpec,
    cutoff: &CutoffConfig,
) -> Result<SelectionResult> {
    let moments = MomentMatrices::assemble(ens, window, phi, psi, caps.0, caps.1)?;
    let collection = build_collection(&moments, caps, cutoff)?;
    select(&moments, spec, &collection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, Model, SimGrid};

    fn ou(n: usize, seed: u64) -> PathEnsemble {
        let grid = SimGrid::new(0.01, 500).unwrap();
        simulate(Model::Ou, Model::Ou.default_params(), grid, n, seed).unwrap()
    }

    fn moments(ens: &PathEnsemble, caps: (usize, usize)) -> MomentMatrices {
        let w = EstimationWindow::for_horizon(&ens.grid(), 4.0, 1.0).unwrap();
        let h = BasisSpec::hermite(caps.0.max(caps.1)).unwrap();
        MomentMatrices::assemble(ens, &w, &h, &h, caps.0, caps.1).unwrap()
    }

    #[test]
    fn penalty_arithmetic() {
        let h = BasisSpec::hermite(20).unwrap();
        let plain = PenaltySpec::literal(PenaltyKind::Plain, 2.0).unwrap();
        assert!((penalty(&plain, &h, (4, 9), 100, 10.0).unwrap() - 0.12).abs() < 1e-15);
        let timed = plain.with_scale(PenaltyScale::PathTime);
        assert!((penalty(&timed, &h, (4, 9), 100, 10.0).unwrap() - 0.012).abs() < 1e-15);
        let sup = timed.with_constant(PenaltyConstant::Sup);
        let expected = 4.0 * h.sup_norm_constant(9).unwrap() / 1000.0;
        assert_eq!(penalty(&sup, &h, (4, 9), 100, 10.0).unwrap(), expected);
        let log = PenaltySpec::literal(PenaltyKind::Log, 2.0).unwrap();
        let p: Vec<f64> = [10, 100, 1000]
            .iter()
            .map(|&n| penalty(&log, &h, (1, 1), n, 1.0).unwrap())
            .collect();
        assert!(p.windows(2).all(|w| w[1] < w[0]));
        assert!((p[1] - (1.0 + 100f64.ln()) / 100.0).abs() < 1e-15);
        assert!(PenaltySpec::new(PenaltyKind::Plain, 0.0).is_err());
        assert_eq!(PenaltySpec::default().kappa, 2.0);
    }

    #[test]
    fn single_path_budget_collapses() {
        let ens = ou(1, 3);
        let m = moments(&ens, (3, 4));
        let loose = CutoffConfig {
            constant: 1e12,
            exponent: 1,
        };
        let c = build_collection(&m, (3, 4), &loose).unwrap();
        assert_eq!(c.admissible, vec![(1, 1)]);
        assert!(c
            .exclusions
            .iter()
            .all(|(_, r)| *r == ExclusionReason::Budget));
    }

    #[test]
    fn budget_boundary_is_inclusive() {
        let ens = ou(100, 3);
        let w = EstimationWindow::for_horizon(&ens.grid(), 2.0, 1.0).unwrap();
        let h = BasisSpec::hermite(100).unwrap();
        // Stability of Ψ̂ at m₁ = 10 is irrelevant here; only budget arithmetic.
        let m = MomentMatrices::assemble(&ens, &w, &h, &h, 10, 100).unwrap();
        let c = build_collection(
            &m,
            (10, 100),
            &CutoffConfig {
                constant: 1e300,
                exponent: 1,
            },
        );
        let c = c.unwrap();
        assert!(
            c.admissible.contains(&(10, 100))
                || c.exclusions.contains(&((10, 100), ExclusionReason::Cutoff))
        );
        assert!(!c.exclusions.contains(&((10, 100), ExclusionReason::Budget)));
    }

    #[test]
    fn rejects_zero_caps() {
        let ens = ou(10, 1);
        let m = moments(&ens, (2, 2));
        assert!(matches!(
            build_collection(&m, (0, 2), &CutoffConfig::default()),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn huge_kappa_picks_smallest_model() {
        let ens = ou(40, 5);
        let m = moments(&ens, (4, 5));
        let c = build_collection(&m, (4, 5), &CutoffConfig::default()).unwrap();
        for kind in [PenaltyKind::Plain, PenaltyKind::Log] {
            let s = select(&m, &PenaltySpec::new(kind, 1e9).unwrap(), &c).unwrap();
            assert_eq!(s.chosen, (1, 1));
        }
    }

    #[test]
    fn single_model_collection() {
        let ens = ou(40, 6);
        let m = moments(&ens, (4, 5));
        let c = ModelCollection {
            admissible: vec![(2, 3)],
            exclusions: vec![],
            caps: (4, 5),
            cutoff: CutoffConfig::default(),
        };
        let s = select(&m, &PenaltySpec::default(), &c).unwrap();
        assert_eq!(s.chosen, (2, 3));
        assert_eq!(s.fit.dims(), (2, 3));
    }

    #[test]
    fn table_rows_are_criterion_identity() {
        let ens = ou(60, 8);
        let m = moments(&ens, (5, 6));
        let c = build_collection(&m, (5, 6), &CutoffConfig::default()).unwrap();
        let spec = PenaltySpec::default();
        let s = select(&m, &spec, &c).unwrap();
        for r in &s.table {
            assert_eq!(r.criterion, -r.sq_norm + 2.0 * spec.kappa * r.penalty);
        }
        let best = s
            .table
            .iter()
            .filter(|r| !r.truncated)
            .map(|r| r.criterion)
            .fold(f64::INFINITY, f64::min);
        let chosen: Vec<_> = s.table.iter().filter(|r| r.chosen).collect();
        assert_eq!(chosen.len(), 1);
        assert_eq!(chosen[0].criterion, best);
        let csv = s.table_csv();
        assert!(csv.starts_with("m1,m2,sq_norm,penalty,criterion,truncated,chosen\n"));
        assert_eq!(csv.lines().count(), s.table.len() + 1);
    }

    #[test]
    fn trig_collection_uses_odd_dimensions() {
        let ens = ou(30, 2);
        let (lo, hi) = ens.range();
        let t = BasisSpec::for_range(crate::basis::BasisKind::Trig, lo, hi, 7).unwrap();
        let w = EstimationWindow::for_horizon(&ens.grid(), 3.0, 1.0).unwrap();
        let m = MomentMatrices::assemble(&ens, &w, &t, &t, 5, 7).unwrap();
        let c = build_collection(
            &m,
            (5, 7),
            &CutoffConfig {
                constant: 1e9,
                exponent: 1,
            },
        )
        .unwrap();
        let all = c
            .admissible
            .iter()
            .chain(c.exclusions.iter().map(|(m, _)| m));
        assert!(all.into_iter().all(|&(a, b)| a % 2 == 1 && b % 2 == 1));
    }
}
