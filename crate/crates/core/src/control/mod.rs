//! Time-periodic control on the atom.
//!
//! A [`ControlSchedule`] is a `T`-periodic, piecewise-constant family of
//! hermitian `N×N` matrices. Piecewise constancy makes the control propagator
//! an exact product of segment exponentials and the control action an exact
//! finite sum; only the decoupling integral needs quadrature, since the toggled
//! coupling varies inside each segment.

mod design;

pub use design::{
    design_bangbang, design_optimized, hermitian_basis, ControlRecipe, OptimizedDesign, OptimizerOptions,
    DEFAULT_BANGBANG_EPSILON,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, C64};
use crate::quadrature::GaussLegendre;

/// Gauss–Legendre points per segment used by default.
pub const DEFAULT_QUADRATURE_POINTS: usize = 32;
/// Relative tolerance `tol` in `residual ≤ tol·T·‖Q‖`.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;
const DURATION_REL_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration: f64,
    pub hamiltonian: CMat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    period: f64,
    segments: Vec<Segment>,
    /// Segment start offsets within one period; `offsets[len] == period`.
    offsets: Vec<f64>,
}

impl ControlSchedule {
    pub fn new(period: f64, segments: Vec<Segment>) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::invalid("control.T", format!("period must be positive, got {period}")));
        }
        if segments.is_empty() {
            return Err(Error::invalid("control.segments", "at least one segment is required"));
        }
        let dim = segments[0].hamiltonian.nrows();
        let mut total = 0.0;
        for (i, s) in segments.iter().enumerate() {
            if !(s.duration.is_finite() && s.duration > 0.0) {
                return Err(Error::invalid(
                    format!("control.segments[{i}].dt"),
                    format!("duration must be positive, got {}", s.duration),
                ));
            }
            let h = &s.hamiltonian;
            if !h.is_square() || h.nrows() != dim {
                return Err(Error::invalid(
                    format!("control.segments[{i}].H"),
                    format!("expected a {dim}x{dim} matrix"),
                ));
            }
            if linalg::hermitian_defect(h) > HERMITIAN_TOL * linalg::max_abs(h).max(1.0) {
                return Err(Error::invalid(format!("control.segments[{i}].H"), "matrix is not hermitian"));
            }
            total += s.duration;
        }
        if (total - period).abs() > DURATION_REL_TOL * period * segments.len() as f64 {
            return Err(Error::invalid("control.segments", format!("durations sum to {total}, period is {period}")));
        }
        let mut offsets = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        offsets.push(0.0);
        for s in &segments[..segments.len() - 1] {
            acc += s.duration;
            offsets.push(acc);
        }
        offsets.push(period);
        Ok(ControlSchedule { period, segments, offsets })
    }

    /// `H_C ≡ 0` on an `dim`-level system.
    pub fn zero(dim: usize, period: f64) -> Result<Self> {
        Self::constant(period, CMat::zeros(dim, dim))
    }

    pub fn constant(period: f64, h: CMat) -> Result<Self> {
        Self::new(period, vec![Segment { duration: period, hamiltonian: h }])
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn dim(&self) -> usize {
        self.segments[0].hamiltonian.nrows()
    }

    /// Start times of the segments within one period, plus `T` at the end.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `sup_t ‖H_C(t)‖`, the largest segment operator norm.
    pub fn sup_norm(&self) -> f64 {
        self.segments.iter().map(|s| linalg::opnorm(&s.hamiltonian)).fold(0.0, f64::max)
    }

    /// `∫_0^T ‖H_C(t)‖ dt`, exact for piecewise-constant schedules.
    pub fn action(&self) -> f64 {
        self.segments.iter().map(|s| s.duration * linalg::opnorm(&s.hamiltonian)).sum()
    }

    /// Index of the segment active at time `t` (taken modulo `T`, right-continuous).
    pub fn segment_index_at(&self, t: f64) -> usize {
        let tau = t.rem_euclid(self.period);
        match self.offsets[1..].iter().position(|&end| tau < end) {
            Some(i) => i,
            None => self.segments.len() - 1,
        }
    }

    pub fn hamiltonian_at(&self, t: f64) -> &CMat {
        &self.segments[self.segment_index_at(t)].hamiltonian
    }

    /// Split `[s, t]` at every segment boundary, returning `(segment, duration)`
    /// pieces in time order.
    pub fn pieces(&self, s: f64, t: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if t <= s {
            return out;
        }
        let mut k = (s / self.period).floor();
        let mut cur = s;
        loop {
            let base = k * self.period;
            for i in 0..self.segments.len() {
                let end = base + self.offsets[i + 1];
                if end <= cur {
                    continue;
                }
                let stop = end.min(t);
                if stop > cur {
                    out.push((i, stop - cur));
                    cur = stop;
                }
                if cur >= t {
                    return out;
                }
            }
            k += 1.0;
        }
    }

    /// The same control compressed in time: durations times `factor`,
    /// amplitudes divided by `factor`. Preserves the decoupling integral up to
    /// the overall factor and leaves the action unchanged.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        let segments = self
            .segments
            .iter()
            .map(|s| Segment { duration: s.duration * factor, hamiltonian: &s.hamiltonian * c(1.0 / factor, 0.0) })
            .collect();
        Self::new(self.period * factor, segments)
    }

    /// Rescale to a new period (see [`ControlSchedule::time_scaled`]).
    pub fn with_period(&self, period: f64) -> Result<Self> {
        self.time_scaled(period / self.period)
    }

    pub fn to_file(&self) -> ScheduleFile {
        ScheduleFile {
            period: self.period,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentFile { dt: s.duration, h: matrix_to_pairs(&s.hamiltonian) })
                .collect(),
        }
    }
}

/// Serialised schedule: `T` and `segments = [{dt, H = [[re, im], ...]}]`, with
/// `H` flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScheduleFile {
    #[serde(rename = "T")]
    pub period: f64,
    pub segments: Vec<SegmentFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentFile {
    pub dt: f64,
    #[serde(rename = "H")]
    pub h: Vec<[f64; 2]>,
}

impl ScheduleFile {
    pub fn into_schedule(self) -> Result<ControlSchedule> {
        let segments = self
            .segments
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(Segment {
                    duration: s.dt,
                    hamiltonian: matrix_from_pairs(&s.h, &format!("control.segments[{i}].H"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ControlSchedule::new(self.period, segments)
    }
}

/// Row-major `[[re, im], ...]` to a square matrix.
pub fn matrix_from_pairs(pairs: &[[f64; 2]], field: &str) -> Result<CMat> {
    let n = (pairs.len() as f64).sqrt().round() as usize;
    if n * n != pairs.len() || n == 0 {
        return Err(Error::invalid(field, format!("{} entries is not a square matrix", pairs.len())));
    }
    Ok(CMat::from_row_iterator(n, n, pairs.iter().map(|p| c(p[0], p[1]))))
}

pub fn matrix_to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

/// `U_C(t, s)`: ordered product of segment exponentials.
pub fn control_propagator(schedule: &ControlSchedule, t: f64, s: f64) -> Result<CMat> {
    if s > t {
        return Err(Error::InvalidInterval { s, t });
    }
    let mut u = linalg::identity(schedule.dim());
    for (i, dt) in schedule.pieces(s, t) {
        u = linalg::expm_evolution(&schedule.segments[i].hamiltonian, dt) * u;
    }
    Ok(u)
}

/// Toggled coupling `Q̃(τ) = U_C(τ,0) Q U_C(τ,0)*`.
pub fn toggled_q(schedule: &ControlSchedule, q: &CMat, tau: f64) -> Result<CMat> {
    let u = control_propagator(schedule, tau, 0.0)?;
    Ok(&u * q * u.adjoint())
}

/// Evaluates `U_C(τ,0)` at the Gauss–Legendre nodes of every segment of the
/// first period, reusing the segment-start propagators.
pub(crate) struct PeriodSampler<'a> {
    schedule: &'a ControlSchedule,
    starts: Vec<CMat>,
    /// Eigenvectors and eigenvalues of every segment Hamiltonian.
    spectra: Vec<(CMat, Vec<f64>)>,
}

impl<'a> PeriodSampler<'a> {
    pub fn new(schedule: &'a ControlSchedule) -> Self {
        let spectra: Vec<(CMat, Vec<f64>)> = schedule
            .segments
            .iter()
            .map(|s| {
                let eig = s.hamiltonian.clone().symmetric_eigen();
                (eig.eigenvectors, eig.eigenvalues.iter().copied().collect())
            })
            .collect();
        let mut sampler = PeriodSampler { schedule, starts: Vec::new(), spectra };
        let mut u = linalg::identity(schedule.dim());
        for (i, s) in schedule.segments.iter().enumerate() {
            sampler.starts.push(u.clone());
            u = sampler.evolution(i, s.duration) * u;
        }
        sampler
    }

    /// `exp(−i h H_i)` from the segment spectrum.
    fn evolution(&self, segment: usize, h: f64) -> CMat {
        let (v, lambda) = &self.spectra[segment];
        let mut scaled = v.clone();
        for (k, l) in lambda.iter().enumerate() {
            let phase = C64::from_polar(1.0, -h * l);
            for z in scaled.column_mut(k).iter_mut() {
                *z *= phase;
            }
        }
        scaled * v.adjoint()
    }

    /// `U_C(offset_i + h, 0)` for `0 ≤ h ≤ Δ_i`.
    pub fn at(&self, segment: usize, h: f64) -> CMat {
        self.evolution(segment, h) * &self.starts[segment]
    }

    /// `∫_a^b F(τ) dτ` for `0 ≤ a ≤ b ≤ T`, with per-segment Gauss–Legendre.
    pub fn integrate(&self, gl: &GaussLegendre, a: f64, b: f64, mut f: impl FnMut(usize, f64, &CMat) -> CMat) -> CMat {
        let n = self.schedule.dim();
        let mut acc = CMat::zeros(n, n);
        let offs = &self.schedule.offsets;
        for i in 0..self.schedule.segments.len() {
            let lo = offs[i].max(a);
            let hi = offs[i + 1].min(b);
            if hi <= lo {
                continue;
            }
            for (tau, w) in gl.on(lo, hi) {
                let u = self.at(i, tau - offs[i]);
                acc += f(i, tau, &u) * c(w, 0.0);
            }
        }
        acc
    }
}

/// Decoupling residual, control action and feasibility of a schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecouplingReport {
    /// `‖∫_0^T U_C(τ,0) Q U_C(τ,0)* dτ‖`.
    pub residual_norm: f64,
    /// `‖∫_0^T U_C(τ,0)* Q U_C(τ,0) dτ‖`, the frame in which the coupling
    /// actually enters the uncoupled dynamics.
    pub frame_residual_norm: f64,
    /// `∫_0^T ‖H_C(t)‖ dt`.
    pub action: f64,
    /// Absolute threshold `tol·T·‖Q‖` the residual was compared against.
    pub tolerance: f64,
    pub satisfied: bool,
}

pub(crate) fn residual_matrices(schedule: &ControlSchedule, q: &CMat, gl: &GaussLegendre) -> (CMat, CMat) {
    let sampler = PeriodSampler::new(schedule);
    let n = schedule.dim();
    let mut toggled = CMat::zeros(n, n);
    let mut frame = CMat::zeros(n, n);
    let offs = &schedule.offsets;
    for i in 0..schedule.segments.len() {
        for (tau, w) in gl.on(offs[i], offs[i + 1]) {
            let u = sampler.at(i, tau - offs[i]);
            toggled += (&u * q * u.adjoint()) * c(w, 0.0);
            frame += (u.adjoint() * q * &u) * c(w, 0.0);
        }
    }
    (toggled, frame)
}

/// Quadrature of the toggled coupling over one period.
///
/// `satisfied` iff `residual_norm ≤ tol·T·‖Q‖`.
pub fn decoupling_residual(
    schedule: &ControlSchedule,
    q: &CMat,
    quadrature_points: usize,
    tol: f64,
) -> Result<DecouplingReport> {
    if quadrature_points < 2 {
        return Err(Error::invalid("quadrature_points", "need at least 2 points per segment"));
    }
    check_q(schedule, q)?;
    let gl = GaussLegendre::new(quadrature_points);
    let (toggled, frame) = residual_matrices(schedule, q, &gl);
    let residual_norm = linalg::opnorm(&toggled);
    let tolerance = tol * schedule.period * linalg::opnorm(q);
    Ok(DecouplingReport {
        residual_norm,
        frame_residual_norm: linalg::opnorm(&frame),
        action: schedule.action(),
        tolerance,
        satisfied: residual_norm <= tolerance,
    })
}

pub(crate) fn check_q(schedule: &ControlSchedule, q: &CMat) -> Result<()> {
    if q.nrows() != schedule.dim() || !q.is_square() {
        return Err(Error::IncompatibleInputs(format!(
            "coupling matrix is {}x{}, schedule acts on {} levels",
            q.nrows(),
            q.ncols(),
            schedule.dim()
        )));
    }
    Ok(())
}

/// Both sides of `∫_0^T (Q̃(t) − Q̃(0)) dt = −i ∫_0^T dt ∫_0^t ds [H_C(s), Q̃(s)]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionIdentityReport {
    pub points: usize,
    /// `‖T·Q̃(0)‖`.
    pub scale: f64,
    /// `‖−T·Q̃(0) − (−i∫∫[H_C, Q̃])‖ / ‖T·Q̃(0)‖`; small only for decoupling schedules.
    pub rel_error: f64,
    /// Same, against `∫(Q̃(t) − Q̃(0))dt`; exact for every schedule.
    pub rel_error_unconditional: f64,
}

/// Nested quadrature of the double commutator integral, with `points`
/// Gauss–Legendre nodes per segment on both levels.
pub fn action_identity_check(schedule: &ControlSchedule, q: &CMat, points: usize) -> Result<ActionIdentityReport> {
    check_q(schedule, q)?;
    let gl = GaussLegendre::new(points);
    let sampler = PeriodSampler::new(schedule);
    let period = schedule.period;
    let toggled_at = |u: &CMat| u * q * u.adjoint();

    let double = sampler.integrate(&gl, 0.0, period, |_, t, _| {
        let inner = sampler
            .integrate(&gl, 0.0, t, |i, _, u| linalg::commutator(&schedule.segments[i].hamiltonian, &toggled_at(u)));
        inner * c(0.0, -1.0)
    });
    let mean = sampler.integrate(&gl, 0.0, period, |_, _, u| toggled_at(u));
    let q0 = q.clone();
    let scale = period * linalg::opnorm(&q0);
    let lhs = &q0 * c(-period, 0.0);
    let lhs_exact = &mean - &q0 * c(period, 0.0);
    let denom = if scale > 0.0 { scale } else { 1.0 };
    Ok(ActionIdentityReport {
        points,
        scale,
        rel_error: linalg::opnorm(&(lhs - &double)) / denom,
        rel_error_unconditional: linalg::opnorm(&(lhs_exact - &double)) / denom,
    })
}

/// Constant schedule `H_C = (phase / T)·K`.
pub fn constant_rotation(period: f64, generator: &CMat, phase: f64) -> Result<ControlSchedule> {
    ControlSchedule::constant(period, generator * C64::new(phase / period, 0.0))
}
