//! Subcommand bodies. Each returns an [`Outcome`] or a [`CliError`] carrying the exit code.

use std::path::{Path, PathBuf};

use ddlab_core::control::{action_identity_check, ActionIdentityReport};
use ddlab_core::experiments::{
    action_lower_bound_holds, preflight, sweep as run_sweep, verify_bound, BoundStatus, Preflight,
};
use ddlab_core::fock::{build_basis_with_limit, check_ccr, check_commutator_identities, weighted_field_bounds};
use ddlab_core::linalg::unitarity_defect;
use ddlab_core::model::relative_bounds_check;
use ddlab_core::propagate::{
    key_decoupling_estimate_check, periodicity_check, telescoping_residual, w_diagnostics, weighted_deviation,
    weighted_propagator_bound_check, KeyEstimateReport,
};
use ddlab_core::report::cutoff_stable;
use ddlab_core::{
    BoundReport, Check, CheckReport, ControlSchedule, DecouplingReport, Error, ModelConstants, Scenario, Status,
    SweepAxis,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{CliError, Outcome, EXIT_FAILURE, EXIT_HYPOTHESES, EXIT_OK};

/// Where artifacts go and what every artifact is stamped with.
pub struct Context {
    pub out_dir: PathBuf,
    pub config_hash: String,
    effective: String,
    writes: bool,
}

impl Context {
    pub fn new(cfg: &RunConfig, out: Option<&Path>, writes: bool) -> Self {
        Context { out_dir: cfg.output_dir(out), config_hash: cfg.hash(), effective: cfg.to_toml(), writes }
    }

    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        std::fs::write(self.out_dir.join("effective_config.toml"), &self.effective)?;
        Ok(())
    }

    fn write(&self, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
        if !self.writes {
            return Ok(());
        }
        if files.is_empty() {
            self.prepare()?;
            files.push(self.out_dir.join("effective_config.toml"));
        }
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)?;
        files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::failure(e.to_string()))?;
        text.push('\n');
        self.write(name, &text, files)
    }
}

/// Common header of every JSON report.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    command: &'static str,
    config_hash: &'a str,
    status: &'a str,
    constants: &'a ModelConstants,
    #[serde(flatten)]
    body: T,
}

fn status_label(s: Status) -> &'static str {
    match s {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Unconverged => "unconverged",
    }
}

fn bound_label(s: BoundStatus) -> &'static str {
    match s {
        BoundStatus::Pass => "pass",
        BoundStatus::Fail => "fail",
        BoundStatus::Unconverged => "unconverged",
        BoundStatus::HypothesesFailed => "hypotheses_failed",
    }
}

fn exit_for(status: &str) -> i32 {
    match status {
        "fail" => EXIT_FAILURE,
        "hypotheses_failed" => EXIT_HYPOTHESES,
        _ => EXIT_OK,
    }
}

fn hypotheses_error(pre: &Preflight) -> CliError {
    let msgs: Vec<String> = pre.hypotheses.failures().map(|h| h.message.clone()).collect();
    CliError::new(EXIT_HYPOTHESES, format!("hypotheses not met: {}", msgs.join("; ")))
}

/// The weak-coupling condition at the extreme grid point of a `T` or `g` sweep.
fn sweep_strength(cfg: &RunConfig, sc: &Scenario, pre: &Preflight) -> Option<(f64, String)> {
    let e = cfg.experiment.as_ref()?;
    let axis = SweepAxis::parse(&e.axis)?;
    let top = e.grid.iter().cloned().fold(0.0, f64::max);
    let k = &pre.constants;
    let s = match axis {
        SweepAxis::Period => sc.g * k.opnorm_q * k.m * top,
        SweepAxis::G => top * k.opnorm_q * k.m * sc.period,
        SweepAxis::T => return None,
    };
    Some((s, format!("experiment.grid: g‖Q‖MT = {} > 1", ddlab_core::model::short_number(s))))
}

pub fn validate(cfg: &RunConfig, _ctx: &Context) -> Result<Outcome, CliError> {
    let sc = cfg.scenario()?;
    let pre = preflight(&sc)?;
    let mut lines = vec![format!(
        "constants: M = {}, C0 = {}, |Q| = {}",
        pre.constants.m, pre.constants.c0, pre.constants.opnorm_q
    )];
    lines.extend(pre.hypotheses.hypotheses.iter().map(|h| h.message.clone()));
    if !pre.hypotheses.passed {
        return Err(hypotheses_error(&pre));
    }
    if let Some((s, msg)) = sweep_strength(cfg, &sc, &pre) {
        if s > 1.0 && cfg.experiment.as_ref().is_some_and(|e| e.require_hypotheses) {
            return Err(CliError::new(EXIT_HYPOTHESES, format!("hypotheses not met: {msg}")));
        }
    }
    lines.push("config is valid".into());
    Ok(Outcome { code: EXIT_OK, lines, files: vec![] })
}

#[derive(Serialize)]
struct SimulationPoint {
    t: f64,
    lhs: f64,
    lhs_fine: f64,
    cutoff_stable: bool,
    unitarity_defect: f64,
}

#[derive(Serialize)]
struct SimulationBody<'a> {
    g: f64,
    #[serde(rename = "T")]
    period: f64,
    #[serde(rename = "L")]
    l: u32,
    cutoffs: (u32, u32),
    dims: (usize, usize),
    decoupling: &'a DecouplingReport,
    points: Vec<SimulationPoint>,
}

pub fn simulate(cfg: &RunConfig, ctx: &Context) -> Result<Outcome, CliError> {
    let sc = cfg.scenario()?;
    let schedule = sc.schedule()?;
    let constants = sc.constants(&schedule)?;
    let decoupling = sc.decoupling(&schedule)?;
    let coarse = sc.dynamics(&schedule, sc.cutoffs.0)?;
    let fine = sc.dynamics(&schedule, sc.cutoffs.1)?;
    let mut points = Vec::new();
    for t in cfg.times() {
        let pc = coarse.evolve_fast(t)?;
        let pf = fine.evolve_fast(t)?;
        let lhs = weighted_deviation(&pc, coarse.spec(), coarse.modes(), coarse.basis(), sc.l)?;
        let lhs_fine = weighted_deviation(&pf, fine.spec(), fine.modes(), fine.basis(), sc.l)?;
        points.push(SimulationPoint {
            t,
            lhs,
            lhs_fine,
            cutoff_stable: cutoff_stable(lhs, lhs_fine),
            unitarity_defect: unitarity_defect(&pf.u_g).max(unitarity_defect(&pf.u_0)),
        });
    }
    let status = if points.iter().all(|p| p.cutoff_stable) { "pass" } else { "unconverged" };
    let lines =
        points.iter().map(|p| format!("t = {}: deviation {:.6e} (coarse {:.6e})", p.t, p.lhs_fine, p.lhs)).collect();
    let body = SimulationBody {
        g: sc.g,
        period: sc.period,
        l: sc.l,
        cutoffs: sc.cutoffs,
        dims: (coarse.dim(), fine.dim()),
        decoupling: &decoupling,
        points,
    };
    let mut files = Vec::new();
    let art = Artifact { command: "simulate", config_hash: &ctx.config_hash, status, constants: &constants, body };
    ctx.write_json("simulation.json", &art, &mut files)?;
    Ok(Outcome { code: EXIT_OK, lines, files })
}

#[derive(Serialize)]
struct DesignBody<'a> {
    #[serde(rename = "T")]
    period: f64,
    segments: usize,
    decoupling: &'a DecouplingReport,
    action_lower_bound: bool,
    action_identity: Option<ActionIdentityReport>,
}

pub fn design(cfg: &RunConfig, ctx: &Context) -> Result<Outcome, CliError> {
    let sc = cfg.scenario()?;
    let schedule = sc.schedule()?;
    let constants = sc.constants(&schedule)?;
    let decoupling = sc.decoupling(&schedule)?;
    let bound_ok = action_lower_bound_holds(&decoupling, constants.opnorm_q, sc.period);
    let identity = if constants.opnorm_q > 0.0 {
        Some(action_identity_check(&schedule, sc.system.q(), sc.quadrature_points)?)
    } else {
        None
    };
    let status = match (decoupling.satisfied, bound_ok) {
        (_, false) => "fail",
        (true, true) => "pass",
        (false, true) => "not_decoupling",
    };
    let mut files = Vec::new();
    ctx.write_json("schedule.json", &schedule.to_file(), &mut files)?;
    let body = DesignBody {
        period: sc.period,
        segments: schedule.segments().len(),
        decoupling: &decoupling,
        action_lower_bound: bound_ok,
        action_identity: identity,
    };
    let art = Artifact { command: "design", config_hash: &ctx.config_hash, status, constants: &constants, body };
    ctx.write_json("decoupling.json", &art, &mut files)?;
    let lines = vec![format!(
        "residual {:.3e} (tolerance {:.3e}), action {:.6}, status {status}",
        decoupling.residual_norm, decoupling.tolerance, decoupling.action
    )];
    let code = if bound_ok { EXIT_OK } else { EXIT_FAILURE };
    Ok(Outcome { code, lines, files })
}

#[derive(Serialize)]
struct VerifyBody<'a> {
    hypotheses: &'a ddlab_core::model::HypothesisVerdict,
    reports: Vec<BoundReport>,
}

pub fn verify(cfg: &RunConfig, ctx: &Context) -> Result<Outcome, CliError> {
    let sc = cfg.scenario()?;
    let pre = preflight(&sc)?;
    let mut files = Vec::new();
    if !pre.hypotheses.passed {
        let body = VerifyBody { hypotheses: &pre.hypotheses, reports: vec![] };
        let art = Artifact {
            command: "verify",
            config_hash: &ctx.config_hash,
            status: "hypotheses_failed",
            constants: &pre.constants,
            body,
        };
        ctx.write_json("bound_report.json", &art, &mut files)?;
        return Err(hypotheses_error(&pre));
    }
    let reports = cfg.times().into_iter().map(|t| verify_bound(&sc, t)).collect::<Result<Vec<_>, Error>>()?;
    let status = if reports.iter().any(|r| r.status == BoundStatus::Fail) {
        "fail"
    } else if reports.iter().any(|r| r.status == BoundStatus::HypothesesFailed) {
        "hypotheses_failed"
    } else if reports.iter().any(|r| r.status == BoundStatus::Unconverged) {
        "unconverged"
    } else {
        "pass"
    };
    let lines = reports
        .iter()
        .map(|r| {
            format!(
                "t = {}: lhs {:.6e} <= rhs {:.6e}: {}",
                r.t,
                r.lhs_fine,
                r.rhs_tight.unwrap_or(f64::NAN),
                bound_label(r.status)
            )
        })
        .collect();
    let art = Artifact {
        command: "verify",
        config_hash: &ctx.config_hash,
        status,
        constants: &pre.constants,
        body: VerifyBody { hypotheses: &pre.hypotheses, reports },
    };
    ctx.write_json("bound_report.json", &art, &mut files)?;
    Ok(Outcome { code: exit_for(status), lines, files })
}

pub fn sweep(cfg: &RunConfig, ctx: &Context) -> Result<Outcome, CliError> {
    let sc = cfg.scenario()?;
    let e = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| CliError::semantic("experiment", "the sweep command needs an [experiment] block"))?;
    let axis = SweepAxis::parse(&e.axis).expect("validated axis");
    let t = e.t.unwrap_or_else(|| cfg.times().into_iter().fold(0.0, f64::max));
    let schedule = sc.schedule()?;
    let constants = sc.constants(&schedule)?;
    let result = run_sweep(&sc, axis, &e.grid, t, e.require_hypotheses)?;
    let status = bound_label(result.status);
    let mut files = Vec::new();
    let label = axis.label();
    ctx.write(&format!("sweep_{label}.csv"), &result.to_csv(), &mut files)?;
    let art =
        Artifact { command: "sweep", config_hash: &ctx.config_hash, status, constants: &constants, body: &result };
    ctx.write_json(&format!("sweep_{label}.json"), &art, &mut files)?;
    let mut lines = vec![format!("{} points on axis {label}, status {status}", result.points.len())];
    if let Some(f) = result.fit {
        lines.push(format!("log-log slope {:.4} (r² {:.4}, {} points)", f.slope, f.r2, f.points));
    }
    Ok(Outcome { code: exit_for(status), lines, files })
}

#[derive(Serialize)]
struct PropcheckBody {
    cutoffs: (u32, u32),
    suites: Vec<CheckReport>,
    key_estimate: Option<KeyEstimateReport>,
    key_estimate_error: Option<String>,
}

fn overall(suites: &[CheckReport], extra: &[Status]) -> Status {
    let all = suites.iter().map(|s| s.status()).chain(extra.iter().copied());
    let mut out = Status::Pass;
    for s in all {
        match s {
            Status::Fail => return Status::Fail,
            Status::Unconverged => out = Status::Unconverged,
            Status::Pass => {}
        }
    }
    out
}

pub fn propcheck(cfg: &RunConfig, ctx: &Context) -> Result<Outcome, CliError> {
    let sc = cfg.scenario()?;
    let schedule: ControlSchedule = sc.schedule()?;
    let constants = sc.constants(&schedule)?;
    let (nc, nf) = sc.cutoffs;
    let basis = build_basis_with_limit(sc.modes.count(), nc, sc.max_dim)?;
    let mut suites = Vec::new();
    if nc >= 2 {
        suites.push(check_ccr(&basis, &sc.modes)?);
    }
    for n in 1..=4.min(nc) {
        suites.push(check_commutator_identities(&basis, &sc.modes, n)?);
    }
    for n in 1..=sc.l + 2 {
        suites.push(weighted_field_bounds(&basis, &sc.modes, n)?);
    }
    suites.push(relative_bounds_check(&sc.system, &sc.modes, &basis, &schedule, sc.g, sc.l)?);

    let coarse = sc.dynamics(&schedule, nc)?;
    let fine = sc.dynamics(&schedule, nf)?;
    let period = sc.period;
    suites.push(periodicity_check(&coarse, 16)?);
    let t_max = cfg.times().into_iter().fold(period, f64::max);
    let pairs = [(period, 0.0), (t_max, 0.0), (t_max, 0.5 * period)];
    suites.push(weighted_propagator_bound_check(&coarse, &fine, &constants, sc.l, &pairs)?);
    let grid = [0.25 * period, 0.5 * period, period];
    suites.push(w_diagnostics(&coarse, &fine, &constants, &grid, sc.l, sc.quadrature_points)?);
    let mut tele = CheckReport::new("telescoping reconstruction");
    for t in cfg.times() {
        tele.push(Check::le(format!("telescoping t = {t}"), telescoping_residual(&coarse, t)?, 1e-8));
    }
    suites.push(tele);

    let (key_estimate, key_estimate_error, key_status) =
        match key_decoupling_estimate_check(&coarse, &fine, &constants, sc.l, sc.quadrature_points) {
            Ok(k) => {
                let s = k.check.status;
                (Some(k), None, s)
            }
            Err(e @ Error::QuadratureNonConvergence(_)) => (None, Some(e.to_string()), Status::Unconverged),
            Err(e) => return Err(e.into()),
        };
    let status = status_label(overall(&suites, &[key_status]));
    let mut lines: Vec<String> = suites.iter().map(|s| format!("{}: {}", s.title, status_label(s.status()))).collect();
    lines.push(format!("key estimate: {}", status_label(key_status)));
    let body = PropcheckBody { cutoffs: sc.cutoffs, suites, key_estimate, key_estimate_error };
    let art = Artifact { command: "propcheck", config_hash: &ctx.config_hash, status, constants: &constants, body };
    let mut files = Vec::new();
    ctx.write_json("propcheck.json", &art, &mut files)?;
    Ok(Outcome { code: exit_for(status), lines, files })
}
