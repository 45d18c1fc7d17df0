//! Bound verification, parameter sweeps and comparison tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    decoupling_residual, ControlRecipe, ControlSchedule, DecouplingReport, Segment, DEFAULT_QUADRATURE_POINTS,
    DEFAULT_RESIDUAL_TOL,
};
use crate::error::{Error, Result};
use crate::fock::{build_basis_with_limit, Mode, ModeSet, DEFAULT_MAX_DIM};
use crate::linalg::{c, pauli_z};
use crate::model::{check_hypotheses, compute_constants, HypothesisVerdict, ModelConstants, SystemSpec};
use crate::propagate::{period_split, weighted_deviation, Dynamics};
use crate::report::cutoff_stable;

/// One fully specified parameter point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: SystemSpec,
    pub modes: ModeSet,
    /// Coarse and fine Fock cutoffs of the stability pair.
    pub cutoffs: (u32, u32),
    pub max_dim: usize,
    pub recipe: ControlRecipe,
    pub period: f64,
    pub g: f64,
    pub l: u32,
    pub substeps: usize,
    pub quadrature_points: usize,
    /// Decoupling tolerance relative to `T·‖Q‖`.
    pub residual_tol: f64,
}

impl Default for Scenario {
    /// Two-level atom `H_S = diag(1, 0)`, `Q = σ_z`, one mode `ω = f = 1`,
    /// `L = 0`, constant `(π/T)σ_x` control, `g = 10⁻³`, `T = 0.1`.
    fn default() -> Self {
        Scenario {
            system: SystemSpec::new(vec![0.0, 1.0], pauli_z()).expect("valid default system"),
            modes: ModeSet::single(1.0, 1.0).expect("valid default mode"),
            cutoffs: (8, 10),
            max_dim: DEFAULT_MAX_DIM,
            recipe: ControlRecipe::constant_sigma_x(),
            period: 0.1,
            g: 1e-3,
            l: 0,
            substeps: 1,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
            residual_tol: DEFAULT_RESIDUAL_TOL,
        }
    }
}

impl Scenario {
    pub fn schedule(&self) -> Result<ControlSchedule> {
        self.recipe.build(self.period, self.system.q())
    }

    pub fn dynamics(&self, schedule: &ControlSchedule, n_cut: u32) -> Result<Dynamics> {
        let basis = build_basis_with_limit(self.modes.count(), n_cut, self.max_dim)?;
        Dynamics::new(&self.system, &self.modes, &basis, schedule, self.g, self.substeps)
    }

    pub fn constants(&self, schedule: &ControlSchedule) -> Result<ModelConstants> {
        compute_constants(&self.system, &self.modes, schedule, self.l)
    }

    pub fn decoupling(&self, schedule: &ControlSchedule) -> Result<DecouplingReport> {
        decoupling_residual(schedule, self.system.q(), self.quadrature_points, self.residual_tol)
    }

    fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::invalid("control.T", format!("period must be positive, got {}", self.period)));
        }
        if !(self.g.is_finite() && self.g >= 0.0) {
            return Err(Error::invalid("dynamics.g", format!("coupling must be nonnegative, got {}", self.g)));
        }
        if self.cutoffs.0 == 0 || self.cutoffs.1 < self.cutoffs.0 {
            return Err(Error::invalid("experiment.cutoffs", "need 0 < coarse <= fine"));
        }
        Ok(())
    }
}

/// Both forms of the bound at time `t`:
/// `T·M‖Q‖g[δ + (4C0 + 3M‖Q‖g)nT]·exp(‖Q‖Mgt)` and `T·C̃_g·t·exp(‖Q‖Mgt)`.
pub fn bound_rhs(constants: &ModelConstants, g: f64, period: f64, t: f64) -> Result<(f64, f64)> {
    if !(period > 0.0 && t >= 0.0 && g >= 0.0) {
        return Err(Error::invalid("dynamics", format!("need T > 0, t >= 0, g >= 0 (T = {period}, t = {t}, g = {g})")));
    }
    let qmg = constants.m * constants.opnorm_q * g;
    if qmg * period > 1.0 {
        return Err(Error::HypothesesNotVerified(format!("g‖Q‖MT = {} > 1", crate::model::short_number(qmg * period))));
    }
    let (n, delta) = period_split(t, period);
    let growth = (qmg * t).exp();
    let coefficient = 4.0 * constants.c0 + 3.0 * qmg;
    let tight = period * qmg * (delta + coefficient * n as f64 * period) * growth;
    let simple = period * c_tilde(constants, g) * t * growth;
    // equal in exact arithmetic when δ = 0 and 4C0 + 3M‖Q‖g ≥ 1; keep the order under rounding
    Ok((tight.min(simple), simple))
}

/// `C̃_g = M‖Q‖g · max{1, 4C0 + 3M‖Q‖g}`.
pub fn c_tilde(constants: &ModelConstants, g: f64) -> f64 {
    let qmg = constants.m * constants.opnorm_q * g;
    qmg * (4.0 * constants.c0 + 3.0 * qmg).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Pass,
    Fail,
    Unconverged,
    HypothesesFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub t: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub g: f64,
    #[serde(rename = "L")]
    pub l: u32,
    pub n: u64,
    pub delta: f64,
    pub cutoffs: (u32, u32),
    /// Weighted deviation at the coarse cutoff.
    pub lhs: f64,
    pub lhs_fine: f64,
    pub rhs_tight: Option<f64>,
    pub rhs_simple: Option<f64>,
    pub margin: Option<f64>,
    pub cutoff_stable: bool,
    pub constants: ModelConstants,
    #[serde(rename = "C_tilde_g")]
    pub c_tilde_g: f64,
    pub decoupling: DecouplingReport,
    pub hypotheses: HypothesisVerdict,
    pub status: BoundStatus,
}

impl BoundReport {
    /// Recompute both right-hand sides from the stored snapshot.
    pub fn recompute_rhs(&self) -> Result<(f64, f64)> {
        bound_rhs(&self.constants, self.g, self.period, self.t)
    }
}

/// Weighted deviation at both cutoffs, the bound and its hypotheses at time `t`.
///
/// Passes iff the fine-cutoff deviation is at most `rhs_tight` and both
/// cutoffs agree to 1%. Unmet hypotheses mark the report without judging
/// the bound.
pub fn verify_bound(scenario: &Scenario, t: f64) -> Result<BoundReport> {
    scenario.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid("dynamics.t", format!("time must be nonnegative, got {t}")));
    }
    let schedule = scenario.schedule()?;
    verify_bound_with(scenario, &schedule, t)
}

fn verify_bound_with(scenario: &Scenario, schedule: &ControlSchedule, t: f64) -> Result<BoundReport> {
    let constants = scenario.constants(schedule)?;
    let decoupling = scenario.decoupling(schedule)?;
    let hypotheses =
        check_hypotheses(&constants, scenario.g, scenario.period, decoupling.residual_norm, decoupling.tolerance);
    let (lhs, lhs_fine) = measured_pair(scenario, schedule, t)?;
    let (n, delta) = period_split(t, scenario.period);
    let rhs = bound_rhs(&constants, scenario.g, scenario.period, t).ok();
    let stable = cutoff_stable(lhs, lhs_fine);
    let status = match rhs {
        _ if !hypotheses.passed => BoundStatus::HypothesesFailed,
        None => BoundStatus::HypothesesFailed,
        Some(_) if !stable => BoundStatus::Unconverged,
        Some((tight, _)) if lhs_fine <= tight => BoundStatus::Pass,
        Some(_) => BoundStatus::Fail,
    };
    Ok(BoundReport {
        t,
        period: scenario.period,
        g: scenario.g,
        l: scenario.l,
        n,
        delta,
        cutoffs: scenario.cutoffs,
        lhs,
        lhs_fine,
        rhs_tight: rhs.map(|r| r.0),
        rhs_simple: rhs.map(|r| r.1),
        margin: rhs.map(|r| r.0 - lhs_fine),
        cutoff_stable: stable,
        c_tilde_g: c_tilde(&constants, scenario.g),
        constants,
        decoupling,
        hypotheses,
        status,
    })
}

/// `‖Θ^L (U_g(t) − U_0(t)) Θ^{−L−2}‖` at the coarse and fine cutoffs.
fn measured_pair(scenario: &Scenario, schedule: &ControlSchedule, t: f64) -> Result<(f64, f64)> {
    let measure = |n_cut: u32| -> Result<f64> {
        let d = scenario.dynamics(schedule, n_cut)?;
        let pair = d.evolve_fast(t)?;
        weighted_deviation(&pair, d.spec(), d.modes(), d.basis(), scenario.l)
    };
    Ok((measure(scenario.cutoffs.0)?, measure(scenario.cutoffs.1)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    #[serde(rename = "T")]
    Period,
    G,
    T,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Period => "T",
            SweepAxis::G => "g",
            SweepAxis::T => "t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "T" => Some(SweepAxis::Period),
            "g" => Some(SweepAxis::G),
            "t" => Some(SweepAxis::T),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub lhs: f64,
    pub lhs_fine: f64,
    pub rhs_tight: Option<f64>,
    pub rhs_simple: Option<f64>,
    pub n: u64,
    pub delta: f64,
    pub cutoff_stable: bool,
    pub status: BoundStatus,
}

/// Least-squares line `log lhs = slope·log x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    /// Fixed time for `T` and `g` sweeps.
    pub t: Option<f64>,
    pub points: Vec<SweepPoint>,
    /// Fit over the smallest-value half of the grid (at least two points).
    pub fit: Option<LogLogFit>,
    pub fit_full: Option<LogLogFit>,
    pub status: BoundStatus,
}

/// Log-log least squares over points with positive coordinates.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LogLogFit { slope, intercept, r2, points: pts.len() })
}

/// Evaluate the bound along one axis. `t` is the fixed time for `T`/`g`
/// sweeps and ignored for `t` sweeps. With `require_hypotheses`, any grid
/// point violating a hypothesis aborts the sweep.
///
/// Points are computed in parallel and returned sorted by value.
pub fn sweep(
    scenario: &Scenario,
    axis: SweepAxis,
    grid: &[f64],
    t: f64,
    require_hypotheses: bool,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::invalid("experiment.grid", "grid is empty"));
    }
    let mut values = grid.to_vec();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let base_schedule = if axis == SweepAxis::Period { None } else { Some(scenario.schedule()?) };
    let points = values
        .par_iter()
        .map(|&v| {
            let mut sc = scenario.clone();
            let mut time = t;
            match axis {
                SweepAxis::Period => sc.period = v,
                SweepAxis::G => sc.g = v,
                SweepAxis::T => time = v,
            }
            sc.validate()?;
            let report = match &base_schedule {
                Some(s) => verify_bound_with(&sc, s, time)?,
                None => verify_bound_with(&sc, &sc.schedule()?, time)?,
            };
            if require_hypotheses && report.status == BoundStatus::HypothesesFailed {
                return Err(Error::HypothesesNotVerified(format!("{}={v}: {}", axis.label(), report.hypotheses)));
            }
            Ok(SweepPoint {
                value: v,
                lhs: report.lhs,
                lhs_fine: report.lhs_fine,
                rhs_tight: report.rhs_tight,
                rhs_simple: report.rhs_simple,
                n: report.n,
                delta: report.delta,
                cutoff_stable: report.cutoff_stable,
                status: report.status,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let xs: Vec<f64> = points.iter().map(|p| p.value).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.lhs_fine).collect();
    let half = points.len().div_ceil(2).max(2).min(points.len());
    let status = if points.iter().any(|p| p.status == BoundStatus::Fail) {
        BoundStatus::Fail
    } else if points.iter().any(|p| p.status == BoundStatus::Unconverged) {
        BoundStatus::Unconverged
    } else if points.iter().any(|p| p.status == BoundStatus::HypothesesFailed) {
        BoundStatus::HypothesesFailed
    } else {
        BoundStatus::Pass
    };
    Ok(SweepResult {
        axis,
        t: if axis == SweepAxis::T { None } else { Some(t) },
        fit: loglog_fit(&xs[..half], &ys[..half]),
        fit_full: loglog_fit(&xs, &ys),
        points,
        status,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.16e}"),
        None => String::new(),
    }
}

impl SweepResult {
    /// `axis,value,lhs,rhs_tight,rhs_simple,n,delta,cutoff_stable`, floats with
    /// 17 significant digits. `lhs` is the fine-cutoff value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,lhs,rhs_tight,rhs_simple,n,delta,cutoff_stable\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{},{},{},{:.16e},{}",
                self.axis.label(),
                p.value,
                p.lhs_fine,
                fmt_opt(p.rhs_tight),
                fmt_opt(p.rhs_simple),
                p.n,
                p.delta,
                p.cutoff_stable
            );
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub residual_norm: f64,
    pub lhs: f64,
    pub lhs_fine: f64,
    pub cutoff_stable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub t: f64,
    pub rows: Vec<ComparisonRow>,
    /// Row (a) strictly below both others.
    pub decoupled_smallest: bool,
}

/// Rows: (a) the scenario's control, (b) no control, (c) the scenario's
/// control at half amplitude.
pub fn comparison_experiment(scenario: &Scenario, t: f64) -> Result<ComparisonTable> {
    scenario.validate()?;
    let decoupled = scenario.schedule()?;
    let none = ControlSchedule::zero(scenario.system.levels(), scenario.period)?;
    let half = ControlSchedule::new(
        scenario.period,
        decoupled
            .segments()
            .iter()
            .map(|s| Segment { duration: s.duration, hamiltonian: &s.hamiltonian * c(0.5, 0.0) })
            .collect(),
    )?;
    let rows = [("decoupling control", decoupled), ("no control", none), ("half amplitude", half)]
        .into_iter()
        .map(|(label, s)| {
            let (lhs, lhs_fine) = measured_pair(scenario, &s, t)?;
            Ok(ComparisonRow {
                label: label.to_string(),
                residual_norm: scenario.decoupling(&s)?.residual_norm,
                lhs,
                lhs_fine,
                cutoff_stable: cutoff_stable(lhs, lhs_fine),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decoupled_smallest = rows[0].lhs_fine < rows[1].lhs_fine && rows[0].lhs_fine < rows[2].lhs_fine;
    Ok(ComparisonTable { t, rows, decoupled_smallest })
}

/// Each mode replaced by `J` copies with amplitude `f/√J`: same frequencies,
/// same weighted norms, same constants.
pub fn split_modes(modes: &ModeSet, copies: usize) -> Result<ModeSet> {
    if copies == 0 {
        return Err(Error::invalid("reservoir.modes", "need at least one copy"));
    }
    let s = 1.0 / (copies as f64).sqrt();
    ModeSet::new(
        modes
            .modes()
            .iter()
            .flat_map(|m| (0..copies).map(move |_| Mode { omega: m.omega, re: m.re * s, im: m.im * s }))
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub n_cut: u32,
    pub copies: usize,
    pub dim: usize,
    pub lhs: f64,
    /// `|lhs − lhs(previous cutoff)|`, absent for the first cutoff.
    pub cauchy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub t: f64,
    pub entries: Vec<ConvergenceEntry>,
    /// First `(copies, n_cut)` whose value agrees with the next cutoff to 1%.
    pub smallest_converged: Option<(usize, u32)>,
}

/// Weighted deviation over a grid of cutoffs and mode splittings.
pub fn convergence_study(scenario: &Scenario, cutoffs: &[u32], copies: &[usize], t: f64) -> Result<ConvergenceTable> {
    scenario.validate()?;
    if cutoffs.windows(2).any(|w| w[1] <= w[0]) || copies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("experiment", "cutoff and mode-count lists must be strictly ascending"));
    }
    let schedule = scenario.schedule()?;
    let mut entries = Vec::new();
    let mut smallest = None;
    for &j in copies {
        let mut sc = scenario.clone();
        sc.modes = split_modes(&scenario.modes, j)?;
        let column = cutoffs
            .par_iter()
            .map(|&n_cut| {
                let d = sc.dynamics(&schedule, n_cut)?;
                let pair = d.evolve_fast(t)?;
                Ok((n_cut, d.basis().dim(), weighted_deviation(&pair, d.spec(), d.modes(), d.basis(), sc.l)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, &(n_cut, dim, lhs)) in column.iter().enumerate() {
            let cauchy = if k > 0 { Some((lhs - column[k - 1].2).abs()) } else { None };
            if smallest.is_none() && k + 1 < column.len() && cutoff_stable(lhs, column[k + 1].2) {
                smallest = Some((j, n_cut));
            }
            entries.push(ConvergenceEntry { n_cut, copies: j, dim, lhs, cauchy });
        }
    }
    Ok(ConvergenceTable { t, entries, smallest_converged: smallest })
}

/// Decoupling residual, constants and hypotheses without propagating.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preflight {
    pub constants: ModelConstants,
    pub decoupling: DecouplingReport,
    pub hypotheses: HypothesisVerdict,
}

pub fn preflight(scenario: &Scenario) -> Result<Preflight> {
    scenario.validate()?;
    let schedule = scenario.schedule()?;
    let constants = scenario.constants(&schedule)?;
    let decoupling = scenario.decoupling(&schedule)?;
    let hypotheses =
        check_hypotheses(&constants, scenario.g, scenario.period, decoupling.residual_norm, decoupling.tolerance);
    Ok(Preflight { constants, decoupling, hypotheses })
}

/// Action of a schedule and the lower bound it must respect when decoupling.
pub fn action_lower_bound_holds(report: &DecouplingReport, q_norm: f64, period: f64) -> bool {
    let feasible = q_norm > 0.0 && report.residual_norm <= 1e-6 * period * q_norm;
    !feasible || report.action >= 0.5 - 1e-3
}
