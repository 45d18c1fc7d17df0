//! Pulse design: a closed-form bang-bang sequence and a penalised
//! derivative-free search over piecewise-constant schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_q, decoupling_residual, matrix_from_pairs, residual_matrices, ControlSchedule, DecouplingReport,
    ScheduleFile, Segment, DEFAULT_QUADRATURE_POINTS, DEFAULT_RESIDUAL_TOL,
};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::quadrature::GaussLegendre;

pub const DEFAULT_BANGBANG_EPSILON: f64 = 1e-3;
const INVERTER_TOL: f64 = 1e-10;

/// Free evolution for `T/2`, a pulse of width `εT` implementing `V`, free
/// evolution for `T/2 − 2εT`, and a second identical pulse.
pub fn design_bangbang(q: &CMat, period: f64, inverter: &CMat, epsilon: f64) -> Result<ControlSchedule> {
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::invalid("control.epsilon", format!("pulse fraction must lie in (0, 1/4), got {epsilon}")));
    }
    if inverter.nrows() != q.nrows() || !inverter.is_square() || !q.is_square() {
        return Err(Error::IncompatibleInputs(format!(
            "inverter is {}x{}, coupling is {}x{}",
            inverter.nrows(),
            inverter.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let defect = linalg::unitarity_defect(inverter);
    if defect > INVERTER_TOL {
        return Err(Error::InvalidInverter(format!("not unitary (defect {defect:.3e})")));
    }
    let flip = linalg::max_abs(&(inverter * q * inverter.adjoint() + q));
    if flip > INVERTER_TOL * linalg::max_abs(q).max(1.0) {
        return Err(Error::InvalidInverter(format!("V Q V* differs from -Q by {flip:.3e}")));
    }
    let (generator, _) = linalg::unitary_generator(inverter)
        .ok_or_else(|| Error::InvalidInverter("no hermitian generator found".into()))?;
    let width = epsilon * period;
    let pulse = generator * c(1.0 / width, 0.0);
    let zero = CMat::zeros(q.nrows(), q.nrows());
    ControlSchedule::new(
        period,
        vec![
            Segment { duration: 0.5 * period, hamiltonian: zero.clone() },
            Segment { duration: width, hamiltonian: pulse.clone() },
            Segment { duration: 0.5 * period - 2.0 * width, hamiltonian: zero },
            Segment { duration: width, hamiltonian: pulse },
        ],
    )
}

/// Traceless hermitian basis of `N×N` matrices (generalised Gell-Mann), `N²−1`
/// elements, each normalised to operator norm 1.
pub fn hermitian_basis(n: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(n * n - 1);
    for j in 0..n {
        for k in j + 1..n {
            let mut s = CMat::zeros(n, n);
            s[(j, k)] = c(1.0, 0.0);
            s[(k, j)] = c(1.0, 0.0);
            out.push(s);
            let mut a = CMat::zeros(n, n);
            a[(j, k)] = c(0.0, -1.0);
            a[(k, j)] = c(0.0, 1.0);
            out.push(a);
        }
    }
    for l in 1..n {
        let mut d = CMat::zeros(n, n);
        for m in 0..l {
            d[(m, m)] = c(1.0, 0.0);
        }
        d[(l, l)] = c(-(l as f64), 0.0);
        let norm = linalg::opnorm(&d);
        out.push(d * c(1.0 / norm, 0.0));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub restarts: usize,
    /// Objective evaluations per Nelder–Mead run.
    pub max_evals: usize,
    /// Penalty continuation stages: the weight is multiplied by 10 per stage.
    pub stages: usize,
    /// Gauss–Legendre points per segment inside the objective.
    pub quadrature_points: usize,
    /// Feasibility threshold relative to `T·‖Q‖`.
    pub feasibility_tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { restarts: 8, max_evals: 4000, stages: 4, quadrature_points: 16, feasibility_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizedDesign {
    pub schedule: ControlSchedule,
    pub report: DecouplingReport,
    /// Both residuals below `feasibility_tol·T·‖Q‖`.
    pub feasible: bool,
    pub objective: f64,
}

struct Problem<'a> {
    q: &'a CMat,
    period: f64,
    segments: usize,
    basis: Vec<CMat>,
    gl: GaussLegendre,
    scale: f64,
}

impl Problem<'_> {
    fn schedule(&self, x: &[f64]) -> ControlSchedule {
        let n = self.q.nrows();
        let dt = self.period / self.segments as f64;
        let per = self.basis.len();
        let segs = (0..self.segments)
            .map(|i| {
                let mut h = CMat::zeros(n, n);
                for (a, b) in self.basis.iter().enumerate() {
                    h += b * c(x[i * per + a] / self.period, 0.0);
                }
                Segment { duration: dt, hamiltonian: h }
            })
            .collect();
        ControlSchedule::new(self.period, segs).expect("equal durations sum to the period")
    }

    /// `(action, normalised residual²)`.
    fn terms(&self, x: &[f64]) -> (f64, f64) {
        let s = self.schedule(x);
        let (toggled, frame) = residual_matrices(&s, self.q, &self.gl);
        let r = (toggled.norm_squared() + frame.norm_squared()) / (self.scale * self.scale);
        (s.action(), r)
    }
}

/// Minimise `action + λ·(‖R‖/(T‖Q‖))²` over `K` equal-length segments, where
/// `R` collects both period averages of the toggled coupling.
///
/// Each restart runs a penalty continuation `λ, 10λ, …` and a final polish on
/// the residual alone. Restart 0 starts from `H_C ≡ 0`; the others from
/// seeded random points. With `λ = 0` the zero schedule is returned and
/// flagged infeasible.
pub fn design_optimized(
    q: &CMat,
    period: f64,
    segments: usize,
    penalty: f64,
    seed: u64,
    options: &OptimizerOptions,
) -> Result<OptimizedDesign> {
    if segments < 2 {
        return Err(Error::invalid("control.segments", "optimizer needs at least 2 segments"));
    }
    if !(penalty >= 0.0 && penalty.is_finite()) {
        return Err(Error::invalid("control.penalty", "penalty weight must be finite and nonnegative"));
    }
    if !q.is_square() || q.nrows() < 2 {
        return Err(Error::invalid("system.Q", "coupling must be a square matrix of size at least 2"));
    }
    let n = q.nrows();
    let q_norm = linalg::opnorm(q);
    let zero_schedule = ControlSchedule::zero(n, period)?;
    check_q(&zero_schedule, q)?;
    let finish = |schedule: ControlSchedule, objective: f64| -> Result<OptimizedDesign> {
        let report = decoupling_residual(&schedule, q, DEFAULT_QUADRATURE_POINTS, DEFAULT_RESIDUAL_TOL)?;
        let limit = options.feasibility_tol * period * q_norm;
        let feasible = report.residual_norm <= limit && report.frame_residual_norm <= limit;
        Ok(OptimizedDesign { schedule, report, feasible, objective })
    };
    if q_norm == 0.0 {
        return finish(zero_schedule, 0.0);
    }
    if penalty == 0.0 {
        return finish(zero_schedule, 0.0);
    }

    let problem = Problem {
        q,
        period,
        segments,
        basis: hermitian_basis(n),
        gl: GaussLegendre::new(options.quadrature_points.max(2)),
        scale: period * q_norm,
    };
    let dim = segments * problem.basis.len();
    let tol = options.feasibility_tol;

    let runs: Vec<(Vec<f64>, f64, f64)> = (0..options.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut x = if r == 0 {
                vec![0.0; dim]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
                (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect()
            };
            let mut weight = penalty;
            for _ in 0..options.stages.max(1) {
                let f = |y: &[f64]| {
                    let (a, res) = problem.terms(y);
                    a + weight * res
                };
                x = nelder_mead(f, &x, 0.5, options.max_evals).0;
                weight *= 10.0;
            }
            let polish = |y: &[f64]| problem.terms(y).1;
            let (xp, rp) = nelder_mead(polish, &x, 1e-3, options.max_evals);
            if rp < problem.terms(&x).1 {
                x = xp;
            }
            let (action, res) = problem.terms(&x);
            (x, action, res.sqrt())
        })
        .collect();

    // Feasible runs by smallest action, then infeasible by smallest residual;
    // ties broken by restart index.
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            let fa = a.2 <= tol;
            let fb = b.2 <= tol;
            let key_a = if fa { a.1 } else { a.2 };
            let key_b = if fb { b.1 } else { b.2 };
            fb.cmp(&fa).then(key_a.partial_cmp(&key_b).unwrap_or(std::cmp::Ordering::Equal)).then(i.cmp(j))
        })
        .map(|(_, r)| r)
        .expect("at least one restart");
    let schedule = problem.schedule(&best.0);
    let design = finish(schedule, best.1 + penalty * best.2 * best.2)?;
    if !design.feasible {
        return Err(Error::NoFeasibleSchedule {
            residual: design.report.residual_norm.max(design.report.frame_residual_norm),
            tolerance: tol * period * q_norm,
        });
    }
    Ok(design)
}

/// Nelder–Mead simplex search with standard coefficients. Returns the best
/// vertex and its value.
fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    let combine =
        |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect() };

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        if spread.abs() <= 1e-15 * values[0].abs().max(1e-300) {
            break;
        }
        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflected = combine(&centroid, &worst, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = combine(&centroid, &worst, -2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let p = combine(&centroid, &worst, -0.5);
                let v = f(&p);
                (p, v)
            } else {
                let p = combine(&centroid, &worst, 0.5);
                let v = f(&p);
                (p, v)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = combine(&best, &simplex[i], 0.5);
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let (i, v) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, v)| (i, *v))
        .expect("simplex is nonempty");
    (simplex[i].clone(), v)
}

/// How to obtain a schedule for a given period and coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlRecipe {
    /// `H_C ≡ 0`.
    None,
    /// `H_C = (phase/T)·K` for a fixed hermitian `K`.
    Constant { generator: Vec<[f64; 2]>, phase: f64 },
    BangBang {
        inverter: Vec<[f64; 2]>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// A stored schedule, rescaled in time to the requested period.
    Explicit { schedule: ScheduleFile },
    Optimized {
        segments: usize,
        penalty: f64,
        seed: u64,
        #[serde(default)]
        options: Option<OptimizerOptions>,
    },
}

fn default_epsilon() -> f64 {
    DEFAULT_BANGBANG_EPSILON
}

impl ControlRecipe {
    /// The default decoupling control for `Q = σ_z`: `H_C = (π/T)·σ_x`.
    pub fn constant_sigma_x() -> Self {
        ControlRecipe::Constant { generator: super::matrix_to_pairs(&linalg::pauli_x()), phase: std::f64::consts::PI }
    }

    pub fn build(&self, period: f64, q: &CMat) -> Result<ControlSchedule> {
        match self {
            ControlRecipe::None => ControlSchedule::zero(q.nrows(), period),
            ControlRecipe::Constant { generator, phase } => {
                let k = matrix_from_pairs(generator, "control.generator")?;
                super::constant_rotation(period, &k, *phase)
            }
            ControlRecipe::BangBang { inverter, epsilon } => {
                let v = matrix_from_pairs(inverter, "control.inverter")?;
                design_bangbang(q, period, &v, *epsilon)
            }
            ControlRecipe::Explicit { schedule } => schedule.clone().into_schedule()?.with_period(period),
            ControlRecipe::Optimized { segments, penalty, seed, options } => {
                let opts = options.unwrap_or_default();
                Ok(design_optimized(q, period, *segments, *penalty, *seed, &opts)?.schedule)
            }
        }
    }
}
