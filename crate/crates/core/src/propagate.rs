//! Propagators of the controlled atom–field system.
//!
//! `U_κ(t, s)` solves `∂_t U = −i H_κ(t) U` with
//! `H_κ(t) = H_S ⊗ 1 + 1 ⊗ H_f + H_C(t) ⊗ 1 + κ H_I`, for `κ = 0` (uncoupled)
//! and `κ = g`. Because `H_C` is piecewise constant, each control segment
//! contributes one exact matrix exponential; substeps only split that
//! exponential into `m` equal factors.

use serde::{Deserialize, Serialize};

use crate::control::ControlSchedule;
use crate::error::{Error, Result};
use crate::fock::{FockBasis, ModeSet};
use crate::linalg::{self, c, CMat, C64};
use crate::model::{self, ModelConstants, SystemSpec};
use crate::quadrature::GaussLegendre;
use crate::report::{Check, CheckReport};

/// Largest accepted `‖E*E − 1‖` for a single substep factor.
pub const STEP_UNITARITY_TOL: f64 = 1e-10;
/// Relative agreement required between the direct and integral forms of `W`.
pub const W_INTEGRAL_REL_TOL: f64 = 1e-4;
/// Absolute floor for norms of differences of unitaries.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;
pub const DEFAULT_SUBSTEPS: usize = 1;
/// Gauss–Legendre points per segment for the propagator integrals.
pub const DEFAULT_INTEGRAL_POINTS: usize = 32;
const PERIOD_SNAP: f64 = 1e-9;

/// `t = nT + δ` with `0 ≤ δ < T`; `t/T` within `1e-9` of an integer snaps to
/// `δ = 0`.
pub fn period_split(t: f64, period: f64) -> (u64, f64) {
    let ratio = t / period;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= PERIOD_SNAP * nearest.max(1.0) {
        return (nearest.max(0.0) as u64, 0.0);
    }
    let n = ratio.floor().max(0.0);
    let delta = (t - n * period).max(0.0);
    (n as u64, delta)
}

/// Everything needed to propagate one parameter point.
#[derive(Debug, Clone)]
pub struct Dynamics {
    spec: SystemSpec,
    modes: ModeSet,
    basis: FockBasis,
    schedule: ControlSchedule,
    g: f64,
    substeps: usize,
    free: Vec<f64>,
    interaction: CMat,
    /// Full-segment factors, `[uncoupled, coupled]`.
    segment_factors: [Vec<CMat>; 2],
}

impl Dynamics {
    pub fn new(
        spec: &SystemSpec,
        modes: &ModeSet,
        basis: &FockBasis,
        schedule: &ControlSchedule,
        g: f64,
        substeps: usize,
    ) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::invalid("dynamics.substeps", "need at least one substep"));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::invalid("dynamics.g", format!("coupling must be nonnegative, got {g}")));
        }
        if schedule.dim() != spec.levels() {
            return Err(Error::IncompatibleInputs(format!(
                "schedule acts on {} levels, system has {}",
                schedule.dim(),
                spec.levels()
            )));
        }
        let free = model::free_diagonal(spec, modes, basis)?;
        let interaction = model::build_interaction(spec, modes, basis)?;
        let mut dynamics = Dynamics {
            spec: spec.clone(),
            modes: modes.clone(),
            basis: basis.clone(),
            schedule: schedule.clone(),
            g,
            substeps,
            free,
            interaction,
            segment_factors: [Vec::new(), Vec::new()],
        };
        for coupled in [false, true] {
            let factors = (0..schedule.segments().len())
                .map(|i| dynamics.step(coupled, i, schedule.segments()[i].duration))
                .collect::<Result<Vec<_>>>()?;
            dynamics.segment_factors[coupled as usize] = factors;
        }
        Ok(dynamics)
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn schedule(&self) -> &ControlSchedule {
        &self.schedule
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn interaction(&self) -> &CMat {
        &self.interaction
    }

    /// Same model with a different coupling strength.
    pub fn with_g(&self, g: f64) -> Result<Self> {
        Dynamics::new(&self.spec, &self.modes, &self.basis, &self.schedule, g, self.substeps)
    }

    /// Same model with a different schedule.
    pub fn with_schedule(&self, schedule: &ControlSchedule) -> Result<Self> {
        Dynamics::new(&self.spec, &self.modes, &self.basis, schedule, self.g, self.substeps)
    }

    fn kappa(&self, coupled: bool) -> f64 {
        if coupled {
            self.g
        } else {
            0.0
        }
    }

    /// Composite generator on segment `i`.
    pub fn generator(&self, coupled: bool, segment: usize) -> CMat {
        let mut h = model::lift_system(&self.schedule.segments()[segment].hamiltonian, self.basis.dim());
        for (k, d) in self.free.iter().enumerate() {
            h[(k, k)] += c(*d, 0.0);
        }
        let kappa = self.kappa(coupled);
        if kappa != 0.0 {
            h += &self.interaction * c(kappa, 0.0);
        }
        h
    }

    /// `exp(−i d H_i)` as `m` equal substep factors.
    fn step(&self, coupled: bool, segment: usize, d: f64) -> Result<CMat> {
        let h = self.generator(coupled, segment);
        let e = linalg::expm_evolution(&h, d / self.substeps as f64);
        let defect = linalg::unitarity_defect(&e);
        if defect > STEP_UNITARITY_TOL {
            return Err(Error::ConditioningFailure(defect));
        }
        Ok(linalg::matrix_power(&e, self.substeps as u64))
    }

    fn factor(&self, coupled: bool, segment: usize, d: f64) -> Result<CMat> {
        let full = self.schedule.segments()[segment].duration;
        let cache = &self.segment_factors[coupled as usize];
        if (d - full).abs() <= 1e-13 * self.schedule.period() && !cache.is_empty() {
            return Ok(cache[segment].clone());
        }
        self.step(coupled, segment, d)
    }

    /// `U_κ(t, s)` by time-ordered product over every segment piece.
    pub fn propagator(&self, coupled: bool, t: f64, s: f64) -> Result<CMat> {
        if s > t {
            return Err(Error::InvalidInterval { s, t });
        }
        let mut u = linalg::identity(self.dim());
        for (i, d) in self.schedule.pieces(s, t) {
            u = self.factor(coupled, i, d)? * u;
        }
        Ok(u)
    }

    /// `U_κ(nT + δ, 0) = U_κ(δ, 0) · U_κ(T, 0)^n`.
    pub fn propagator_fast(&self, coupled: bool, t: f64) -> Result<CMat> {
        let (n, delta) = period_split(t, self.schedule.period());
        let one = self.propagator(coupled, self.schedule.period(), 0.0)?;
        Ok(self.propagator(coupled, delta, 0.0)? * linalg::matrix_power(&one, n))
    }

    /// Uncoupled propagator from its tensor factorisation
    /// `U_sys(t) ⊗ exp(−i t H_f)`, with `U_sys` generated by `H_S + H_C`.
    pub fn free_factorized(&self, t: f64) -> Result<CMat> {
        if t < 0.0 {
            return Err(Error::InvalidInterval { s: 0.0, t });
        }
        let hs = model::build_hs(&self.spec);
        let mut u_sys = linalg::identity(self.spec.levels());
        for (i, d) in self.schedule.pieces(0.0, t) {
            let h = &hs + &self.schedule.segments()[i].hamiltonian;
            u_sys = linalg::expm_evolution(&h, d) * u_sys;
        }
        let energies = self.basis.weighted_occupation(&self.modes, 1.0)?;
        let phases = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            energies.len(),
            energies.iter().map(|e| C64::from_polar(1.0, -t * e)),
        ));
        Ok(linalg::kron(&u_sys, &phases))
    }

    /// Integrate `F(r, U_0(r), U_g(r))` over `[0, s]` with `points`
    /// Gauss–Legendre nodes on every segment piece.
    fn integrate_pair(&self, s: f64, points: usize, mut f: impl FnMut(&CMat, &CMat) -> CMat) -> Result<CMat> {
        let gl = GaussLegendre::new(points);
        let n = self.dim();
        let mut acc = CMat::zeros(n, n);
        let mut u0 = linalg::identity(n);
        let mut ug = linalg::identity(n);
        let mut start = 0.0;
        for (i, d) in self.schedule.pieces(0.0, s) {
            let h0 = self.generator(false, i);
            let hg = self.generator(true, i);
            for (r, w) in gl.on(start, start + d) {
                let a = linalg::expm_evolution(&h0, r - start) * &u0;
                let b = linalg::expm_evolution(&hg, r - start) * &ug;
                acc += f(&a, &b) * c(w, 0.0);
            }
            u0 = self.factor(false, i, d)? * u0;
            ug = self.factor(true, i, d)? * ug;
            start += d;
        }
        Ok(acc)
    }

    /// `W(s) = U_0(s)* U_g(s) − 1`.
    pub fn w_direct(&self, s: f64) -> Result<CMat> {
        if self.g == 0.0 {
            return Ok(CMat::zeros(self.dim(), self.dim()));
        }
        let u0 = self.propagator(false, s, 0.0)?;
        let ug = self.propagator(true, s, 0.0)?;
        Ok(u0.adjoint() * ug - linalg::identity(self.dim()))
    }

    /// `W(s) = −i g ∫_0^s U_0(r)* H_I U_g(r) dr` by quadrature.
    pub fn w_integral(&self, s: f64, points: usize) -> Result<CMat> {
        if self.g == 0.0 {
            return Ok(CMat::zeros(self.dim(), self.dim()));
        }
        let hi = &self.interaction;
        let integral = self.integrate_pair(s, points, |u0, ug| u0.adjoint() * hi * ug)?;
        Ok(integral * c(0.0, -self.g))
    }

    /// `∫_0^T Θ^L U_0(s)* H_I U_0(s) Θ^{−L−2} ds` by quadrature.
    pub fn averaged_interaction(&self, l: u32, points: usize) -> Result<CMat> {
        let hi = &self.interaction;
        let integral = self.integrate_pair(self.schedule.period(), points, |u0, _| u0.adjoint() * hi * u0)?;
        self.weighted(&integral, l as i32, -(l as i32) - 2)
    }

    /// `Θ^a X Θ^b` on the composite space.
    pub fn weighted(&self, x: &CMat, a: i32, b: i32) -> Result<CMat> {
        let left = model::composite_theta(&self.spec, &self.modes, &self.basis, a)?;
        let right = model::composite_theta(&self.spec, &self.modes, &self.basis, b)?;
        Ok(linalg::scale_rows_cols(x, &left, &right))
    }

    /// Both propagators `U_g(t, 0)` and `U_0(t, 0)` by direct integration.
    pub fn evolve(&self, t: f64) -> Result<PropagatorPair> {
        let u_0 = self.propagator(false, t, 0.0)?;
        let u_g = if self.g == 0.0 { u_0.clone() } else { self.propagator(true, t, 0.0)? };
        Ok(self.pair(t, u_g, u_0))
    }

    /// As [`Dynamics::evolve`], through the periodic factorisation.
    pub fn evolve_fast(&self, t: f64) -> Result<PropagatorPair> {
        let u_0 = self.propagator_fast(false, t)?;
        let u_g = if self.g == 0.0 { u_0.clone() } else { self.propagator_fast(true, t)? };
        Ok(self.pair(t, u_g, u_0))
    }

    fn pair(&self, t: f64, u_g: CMat, u_0: CMat) -> PropagatorPair {
        let step = self.schedule.segments().iter().map(|s| s.duration / self.substeps as f64).fold(0.0, f64::max);
        PropagatorPair { t, u_g, u_0, g: self.g, step }
    }
}

/// `U_g(t, 0)` and `U_0(t, 0)` at one time.
#[derive(Debug, Clone)]
pub struct PropagatorPair {
    pub t: f64,
    pub u_g: CMat,
    pub u_0: CMat,
    pub g: f64,
    /// Largest substep length used.
    pub step: f64,
}

/// `evolve` for a freshly assembled model.
pub fn evolve(
    spec: &SystemSpec,
    modes: &ModeSet,
    basis: &FockBasis,
    schedule: &ControlSchedule,
    g: f64,
    t_final: f64,
    substeps: usize,
) -> Result<PropagatorPair> {
    if t_final < 0.0 {
        return Err(Error::InvalidInterval { s: 0.0, t: t_final });
    }
    Dynamics::new(spec, modes, basis, schedule, g, substeps)?.evolve(t_final)
}

/// `‖Θ^L (U_g − U_0) Θ^{−L−2}‖`.
pub fn weighted_deviation(
    pair: &PropagatorPair,
    spec: &SystemSpec,
    modes: &ModeSet,
    basis: &FockBasis,
    l: u32,
) -> Result<f64> {
    let left = model::composite_theta(spec, modes, basis, l as i32)?;
    let right = model::composite_theta(spec, modes, basis, -(l as i32) - 2)?;
    if left.len() != pair.u_g.nrows() {
        return Err(Error::IncompatibleInputs(format!(
            "propagator has dimension {}, model has {}",
            pair.u_g.nrows(),
            left.len()
        )));
    }
    Ok(linalg::opnorm(&linalg::scale_rows_cols(&(&pair.u_g - &pair.u_0), &left, &right)))
}

/// `‖U_κ(nT) − U_κ(T)^n‖ ≤ n·10⁻⁹` for `κ ∈ {0, g}`.
pub fn periodicity_check(dynamics: &Dynamics, n: u64) -> Result<CheckReport> {
    periodicity_check_with_period(dynamics, dynamics.schedule().period(), n)
}

/// The same check against a claimed period, which exposes a schedule whose
/// actual period differs.
pub fn periodicity_check_with_period(dynamics: &Dynamics, period: f64, n: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new(format!("periodicity n={n}"));
    for (coupled, label) in [(false, "U_0"), (true, "U_g")] {
        let one = dynamics.propagator(coupled, period, 0.0)?;
        let many = dynamics.propagator(coupled, n as f64 * period, 0.0)?;
        let dev = linalg::opnorm(&(many - linalg::matrix_power(&one, n)));
        report.push(Check::le(format!("|{label}(nT) - {label}(T)^n|"), dev, n as f64 * 1e-9));
    }
    Ok(report)
}

/// `‖Θ^{ℓ+j} U_g(t, s) Θ^{−(ℓ+j)}‖ ≤ exp(g‖Q‖M_{ℓ+j}(t − s))` for `ℓ ≤ L`,
/// `j ∈ {1, 2}`, measured at two cutoffs.
pub fn weighted_propagator_bound_check(
    coarse: &Dynamics,
    fine: &Dynamics,
    constants: &ModelConstants,
    l: u32,
    times: &[(f64, f64)],
) -> Result<CheckReport> {
    if constants.m_n.len() < (l + 3) as usize {
        return Err(Error::IncompatibleInputs(format!(
            "constants were computed for L = {}, check needs L = {l}",
            constants.l
        )));
    }
    let g = coarse.g();
    let mut report = CheckReport::new("weighted propagator bound");
    for &(t, s) in times {
        let uc = coarse.propagator(true, t, s)?;
        let uf = fine.propagator(true, t, s)?;
        for ell in 0..=l {
            for j in 1..=2u32 {
                let n = (ell + j) as i32;
                let mc = linalg::opnorm(&coarse.weighted(&uc, n, -n)?);
                let mf = linalg::opnorm(&fine.weighted(&uf, n, -n)?);
                let bound = (g * constants.opnorm_q * constants.m_at(ell + j) * (t - s)).exp();
                // norm ≥ 1 only up to round-off when the bound is exactly 1
                let slack = 1e-12;
                report.push(Check::le_stable(
                    format!("|Theta^{n} U_g({t},{s}) Theta^-{n}|"),
                    mc,
                    mf,
                    bound * (1.0 + slack),
                ));
            }
        }
    }
    Ok(report)
}

/// Integral representation of `W` and its norm bound on a grid of `s ∈ [0, T]`.
pub fn w_diagnostics(
    coarse: &Dynamics,
    fine: &Dynamics,
    constants: &ModelConstants,
    s_grid: &[f64],
    l: u32,
    points: usize,
) -> Result<CheckReport> {
    let period = coarse.schedule().period();
    let g = coarse.g();
    let qm = constants.opnorm_q * constants.m;
    let (a, b) = (l as i32 + 1, -(l as i32) - 2);
    let mut report = CheckReport::new("W diagnostics");
    for &s in s_grid {
        if !(0.0..=period * (1.0 + 1e-12)).contains(&s) {
            return Err(Error::invalid("s_grid", format!("s = {s} is outside [0, T]")));
        }
        let direct = coarse.weighted(&coarse.w_direct(s)?, a, b)?;
        let integral = coarse.weighted(&coarse.w_integral(s, points)?, a, b)?;
        let size = linalg::opnorm(&direct);
        let diff = linalg::opnorm(&(&direct - &integral));
        // differences of unitaries below the round-off floor count as zero
        let rel = diff / size.max(ROUNDOFF_FLOOR / W_INTEGRAL_REL_TOL);
        report.push(Check::le(format!("W({s}) integral form"), rel, W_INTEGRAL_REL_TOL));

        let fine_size = linalg::opnorm(&fine.weighted(&fine.w_direct(s)?, a, b)?);
        let bound = g * s * qm * (qm * g * s).exp() + ROUNDOFF_FLOOR;
        report.push(Check::le_stable(format!("|Theta^{a} W({s}) Theta^{b}|"), size, fine_size, bound));
    }
    Ok(report)
}

/// The period-averaged interaction in the uncoupled frame, against
/// `4·C0·T²·‖Q‖·M`, plus the same quantity for the time-compressed schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyEstimateReport {
    pub period: f64,
    pub value: f64,
    pub value_fine: f64,
    pub bound: f64,
    /// Value for the schedule compressed to period `T/2`.
    pub half_period_value: f64,
    /// `value / half_period_value`; ≈ 4 in the quadratic regime.
    pub ratio: f64,
    pub check: Check,
}

pub fn key_decoupling_estimate_check(
    coarse: &Dynamics,
    fine: &Dynamics,
    constants: &ModelConstants,
    l: u32,
    points: usize,
) -> Result<KeyEstimateReport> {
    let period = coarse.schedule().period();
    let value = converged_average(coarse, l, points)?;
    let value_fine = converged_average(fine, l, points)?;
    let half = coarse.with_schedule(&coarse.schedule().time_scaled(0.5)?)?;
    let half_period_value = converged_average(&half, l, points)?;
    let bound = 4.0 * constants.c0 * period * period * constants.opnorm_q * constants.m;
    Ok(KeyEstimateReport {
        period,
        value,
        value_fine,
        bound,
        half_period_value,
        ratio: if half_period_value > 0.0 { value / half_period_value } else { f64::INFINITY },
        check: Check::le_stable("|int Theta^L U_0* H_I U_0 Theta^-L-2|", value, value_fine, bound),
    })
}

/// Norm of [`Dynamics::averaged_interaction`], refined from `p` to `2p` points.
fn converged_average(dynamics: &Dynamics, l: u32, points: usize) -> Result<f64> {
    let a = dynamics.averaged_interaction(l, points)?;
    let b = dynamics.averaged_interaction(l, 2 * points)?;
    let scale = dynamics.schedule().period()
        * linalg::opnorm(&dynamics.weighted(dynamics.interaction(), l as i32, -(l as i32) - 2)?);
    let change = linalg::opnorm(&(&b - &a));
    let value = linalg::opnorm(&b);
    if change > 1e-6 * value + 1e-12 * scale {
        return Err(Error::QuadratureNonConvergence(if value > 0.0 { change / value } else { change }));
    }
    Ok(value)
}

/// `U_g(t) − U_0(t)` rebuilt from `W(δ)`, `W(T)` and `U_g(kT)`:
/// `U_0(δ)W(δ)U_g(nT) + Σ_{k<n} U_0(δ + (n−k)T) W(T) U_g(kT)`.
/// Returns the operator-norm distance to the direct difference.
pub fn telescoping_residual(dynamics: &Dynamics, t: f64) -> Result<f64> {
    let period = dynamics.schedule().period();
    let (n, delta) = period_split(t, period);
    let w_delta = dynamics.w_direct(delta)?;
    let w_period = dynamics.w_direct(period)?;
    let u0 = |s: f64| dynamics.propagator(false, s, 0.0);
    let ug = |s: f64| dynamics.propagator(true, s, 0.0);
    let mut rebuilt = u0(delta)? * w_delta * ug(n as f64 * period)?;
    for k in 0..n {
        rebuilt += u0(delta + (n - k) as f64 * period)? * &w_period * ug(k as f64 * period)?;
    }
    let direct = ug(t)? - u0(t)?;
    Ok(linalg::opnorm(&(direct - rebuilt)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::constant_rotation;
    use crate::fock::build_basis;
    use crate::linalg::{max_abs, pauli_x, pauli_z, unitarity_defect};
    use crate::model::compute_constants;
    use std::f64::consts::PI;

    fn default_dynamics(n_cut: u32, g: f64) -> Dynamics {
        let spec = SystemSpec::new(vec![0.0, 1.0], pauli_z()).unwrap();
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let basis = build_basis(1, n_cut).unwrap();
        let s = constant_rotation(0.1, &pauli_x(), PI).unwrap();
        Dynamics::new(&spec, &modes, &basis, &s, g, 1).unwrap()
    }

    #[test]
    fn split_snaps_to_period_multiples() {
        assert_eq!(period_split(1.0, 0.1), (10, 0.0));
        assert_eq!(period_split(0.1, 0.1), (1, 0.0));
        assert_eq!(period_split(0.0, 0.1), (0, 0.0));
        let (n, d) = period_split(0.25, 0.1);
        assert_eq!(n, 2);
        assert!((d - 0.05).abs() < 1e-15);
    }

    #[test]
    fn free_uncontrolled_propagator_is_diagonal_closed_form() {
        let spec = SystemSpec::new(vec![0.0, 1.0], pauli_z()).unwrap();
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let basis = build_basis(1, 4).unwrap();
        let zero = ControlSchedule::zero(2, 0.3).unwrap();
        let pair = evolve(&spec, &modes, &basis, &zero, 0.0, 1.0, 1).unwrap();
        let diag = model::free_diagonal(&spec, &modes, &basis).unwrap();
        let want = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            diag.len(),
            diag.iter().map(|e| C64::from_polar(1.0, -e)),
        ));
        assert!(max_abs(&(pair.u_0 - want)) < 1e-10);
    }

    #[test]
    fn zero_coupling_gives_identical_propagators() {
        let d = default_dynamics(4, 0.0);
        let p = d.evolve(0.37).unwrap();
        assert_eq!(p.u_g, p.u_0);
        assert_eq!(weighted_deviation(&p, d.spec(), d.modes(), d.basis(), 0).unwrap(), 0.0);
        let p = default_dynamics(4, 1e-3).evolve(0.0).unwrap();
        assert_eq!(max_abs(&(&p.u_g - &p.u_0)), 0.0);
    }

    #[test]
    fn unitarity_cocycle_and_factorisation() {
        let d = default_dynamics(6, 0.05);
        let (r, s, t) = (0.03, 0.17, 0.41);
        for coupled in [false, true] {
            let lhs = d.propagator(coupled, t, s).unwrap() * d.propagator(coupled, s, r).unwrap();
            let rhs = d.propagator(coupled, t, r).unwrap();
            assert!(linalg::opnorm(&(lhs - &rhs)) < 1e-9);
            assert!(unitarity_defect(&rhs) < 1e-9);
            let fast = d.propagator_fast(coupled, 0.73).unwrap();
            let direct = d.propagator(coupled, 0.73, 0.0).unwrap();
            assert!(linalg::opnorm(&(fast - direct)) < 1e-9);
        }
        let fact = d.free_factorized(0.73).unwrap();
        let direct = d.propagator(false, 0.73, 0.0).unwrap();
        assert!(linalg::opnorm(&(fact - direct)) < 1e-9);
    }

    #[test]
    fn substeps_do_not_change_the_result() {
        let a = default_dynamics(5, 0.02);
        let b = Dynamics::new(a.spec(), a.modes(), a.basis(), a.schedule(), 0.02, 4).unwrap();
        let ua = a.propagator(true, 0.25, 0.0).unwrap();
        let ub = b.propagator(true, 0.25, 0.0).unwrap();
        assert!(linalg::opnorm(&(ua - ub)) < 1e-11);
    }

    #[test]
    fn uncoupled_propagator_commutes_with_theta() {
        let d = default_dynamics(6, 0.01);
        let u0 = d.propagator(false, 0.29, 0.0).unwrap();
        let th = linalg::from_real_diag(&model::composite_theta(d.spec(), d.modes(), d.basis(), 1).unwrap());
        assert!(linalg::opnorm(&linalg::commutator(&th, &u0)) < 1e-10);
    }

    #[test]
    fn periodicity_holds_and_fails_for_wrong_period() {
        let d = default_dynamics(5, 0.01);
        assert!(periodicity_check(&d, 1).unwrap().checks.iter().all(|c| c.measured == 0.0));
        assert!(periodicity_check(&d, 3).unwrap().passed());
        let spec = d.spec().clone();
        let two = ControlSchedule::new(
            0.1,
            vec![
                crate::control::Segment { duration: 0.04, hamiltonian: pauli_x() * c(20.0, 0.0) },
                crate::control::Segment { duration: 0.06, hamiltonian: CMat::zeros(2, 2) },
            ],
        )
        .unwrap();
        let d2 = Dynamics::new(&spec, d.modes(), d.basis(), &two, 0.01, 1).unwrap();
        let r = periodicity_check_with_period(&d2, 0.09, 3).unwrap();
        assert!(!r.passed());
        assert!(r.max_measured() > 1e-3);
    }

    #[test]
    fn w_integral_matches_direct_difference() {
        let d = default_dynamics(6, 1e-2);
        let fine = default_dynamics(8, 1e-2);
        let k = compute_constants(d.spec(), d.modes(), d.schedule(), 0).unwrap();
        let r = w_diagnostics(&d, &fine, &k, &[0.0, 0.03, 0.1], 0, 32).unwrap();
        assert!(r.passed(), "{r:#?}");
        let zero = default_dynamics(6, 0.0);
        assert_eq!(max_abs(&zero.w_direct(0.05).unwrap()), 0.0);
        assert_eq!(max_abs(&zero.w_integral(0.05, 8).unwrap()), 0.0);
    }

    #[test]
    fn telescoping_identity_is_exact() {
        let d = default_dynamics(6, 0.05);
        for t in [0.1, 0.35, 0.8] {
            assert!(telescoping_residual(&d, t).unwrap() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn key_estimate_scales_quadratically_when_decoupled() {
        let d = default_dynamics(6, 1e-3);
        let fine = default_dynamics(8, 1e-3);
        let k = compute_constants(d.spec(), d.modes(), d.schedule(), 0).unwrap();
        let r = key_decoupling_estimate_check(&d, &fine, &k, 0, 16).unwrap();
        assert!(r.check.passed(), "{r:?}");
        assert!(r.ratio > 3.0, "{r:?}");
        // g does not enter
        let r2 = key_decoupling_estimate_check(&d.with_g(0.2).unwrap(), &fine, &k, 0, 16).unwrap();
        assert_eq!(r.value, r2.value);
    }

    #[test]
    fn key_estimate_is_linear_without_control() {
        let d = default_dynamics(6, 1e-3);
        let zero = ControlSchedule::zero(2, 0.1).unwrap();
        let d0 = d.with_schedule(&zero).unwrap();
        let f0 = default_dynamics(8, 1e-3).with_schedule(&zero).unwrap();
        let k = compute_constants(d0.spec(), d0.modes(), d0.schedule(), 0).unwrap();
        let r = key_decoupling_estimate_check(&d0, &f0, &k, 0, 16).unwrap();
        assert!(r.ratio > 1.5 && r.ratio < 2.5, "{r:?}");
    }
}
