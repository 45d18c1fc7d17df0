//! The atom, its coupling to the field, and the constants of the decoherence bound.
//!
//! Composite operators act on `ℂᴺ ⊗ Fock` with the system index slow: the
//! basis vector `|s⟩ ⊗ |k⟩` sits at position `s·D + k`, `D` the Fock dimension.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::control::ControlSchedule;
use crate::error::{Error, Result};
use crate::fock::{self, FockBasis, ModeSet};
use crate::linalg::{self, c, CMat};
use crate::report::{Check, CheckReport};

const HERMITIAN_TOL: f64 = 1e-12;
const TIME_INDEPENDENCE_TOL: f64 = 1e-12;

/// `N`-level atom: strictly increasing energies `E_0 < … < E_{N−1}`, `E_0 ≥ 0`,
/// and a hermitian coupling matrix `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    energies: Vec<f64>,
    q: CMat,
}

impl SystemSpec {
    pub fn new(energies: Vec<f64>, q: CMat) -> Result<Self> {
        let n = energies.len();
        if n < 2 {
            return Err(Error::invalid("system.levels", format!("need at least 2 levels, got {n}")));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("system.energies", "energies must be finite"));
        }
        if energies[0] < 0.0 {
            return Err(Error::invalid("system.energies", format!("E_0 = {} is negative", energies[0])));
        }
        if let Some(k) = energies.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "system.energies",
                format!(
                    "energies must be strictly increasing: E_{} = {} >= E_{} = {}",
                    k,
                    energies[k],
                    k + 1,
                    energies[k + 1]
                ),
            ));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::invalid(
                "system.Q",
                format!("expected a {n}x{n} matrix, got {}x{}", q.nrows(), q.ncols()),
            ));
        }
        if linalg::hermitian_defect(&q) > HERMITIAN_TOL {
            return Err(Error::invalid("system.Q", "coupling matrix is not hermitian"));
        }
        Ok(SystemSpec { energies, q })
    }

    pub fn levels(&self) -> usize {
        self.energies.len()
    }

    /// Ascending energies `E_0, …, E_{N−1}`.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn q(&self) -> &CMat {
        &self.q
    }
}

/// `H_S = diag(E_{N−1}, …, E_1, E_0)`.
pub fn build_hs(spec: &SystemSpec) -> CMat {
    let desc: Vec<f64> = spec.energies.iter().rev().copied().collect();
    linalg::from_real_diag(&desc)
}

/// `X ⊗ 1_D`.
pub fn lift_system(x: &CMat, fock_dim: usize) -> CMat {
    linalg::kron(x, &linalg::identity(fock_dim))
}

/// `1_N ⊗ Y`.
pub fn lift_fock(levels: usize, y: &CMat) -> CMat {
    linalg::kron(&linalg::identity(levels), y)
}

/// `H_I = Q ⊗ φ(f)`, dense.
pub fn build_interaction(spec: &SystemSpec, modes: &ModeSet, basis: &FockBasis) -> Result<CMat> {
    let phi = fock::field_operator(modes, basis)?.to_dense();
    Ok(linalg::kron(&spec.q, &phi))
}

/// `H_S ⊗ 1 + 1 ⊗ H_f`, real diagonal.
pub fn free_diagonal(spec: &SystemSpec, modes: &ModeSet, basis: &FockBasis) -> Result<Vec<f64>> {
    let hf = basis.weighted_occupation(modes, 1.0)?;
    let mut out = Vec::with_capacity(spec.levels() * hf.len());
    for e in spec.energies.iter().rev() {
        out.extend(hf.iter().map(|x| e + x));
    }
    Ok(out)
}

/// Diagonal of `1 ⊗ Θ^m` on the composite space.
pub fn composite_theta(spec: &SystemSpec, modes: &ModeSet, basis: &FockBasis, m: i32) -> Result<Vec<f64>> {
    let th = basis.theta_diag(modes, m)?;
    Ok((0..spec.levels()).flat_map(|_| th.iter().copied()).collect())
}

fn check_schedule(spec: &SystemSpec, schedule: &ControlSchedule) -> Result<()> {
    if schedule.dim() != spec.levels() {
        return Err(Error::IncompatibleInputs(format!(
            "schedule acts on {} levels, system has {}",
            schedule.dim(),
            spec.levels()
        )));
    }
    Ok(())
}

/// `H_S ⊗ 1 + 1 ⊗ H_f + H_C(t) ⊗ 1 + g·H_I`, dense.
pub fn build_total(
    spec: &SystemSpec,
    modes: &ModeSet,
    basis: &FockBasis,
    schedule: &ControlSchedule,
    g: f64,
    t: f64,
) -> Result<CMat> {
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::invalid("dynamics.g", format!("coupling must be nonnegative, got {g}")));
    }
    check_schedule(spec, schedule)?;
    let diag = free_diagonal(spec, modes, basis)?;
    let mut h = lift_system(schedule.hamiltonian_at(t), basis.dim());
    for (i, d) in diag.iter().enumerate() {
        h[(i, i)] += c(*d, 0.0);
    }
    if g != 0.0 {
        h += build_interaction(spec, modes, basis)? * c(g, 0.0);
    }
    Ok(h)
}

/// Constants of the bound for a given weight order `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    #[serde(rename = "M_minus_half")]
    pub m_minus_half: f64,
    /// `M_n` for `n = 0, …, L+2` (`M_0 = 0`).
    #[serde(rename = "M_n")]
    pub m_n: Vec<f64>,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "opnorm_Q")]
    pub opnorm_q: f64,
    #[serde(rename = "opnorm_H_S")]
    pub opnorm_hs: f64,
    #[serde(rename = "sup_H_C")]
    pub sup_hc: f64,
    #[serde(rename = "L")]
    pub l: u32,
}

impl ModelConstants {
    pub fn m_at(&self, n: u32) -> f64 {
        self.m_n[n as usize]
    }
}

/// `M_{-1/2}`, `M_n` for `n ≤ L+2`, `M = M_{-1/2} + M_{L+2}`,
/// `C0 = 1 + ‖H_S‖ + sup‖H_C‖` and `‖Q‖`.
pub fn compute_constants(
    spec: &SystemSpec,
    modes: &ModeSet,
    schedule: &ControlSchedule,
    l: u32,
) -> Result<ModelConstants> {
    check_schedule(spec, schedule)?;
    let m_minus_half = modes.m_minus_half();
    let m_n: Vec<f64> = (0..=l + 2).map(|n| modes.m_n(n)).collect();
    let opnorm_hs = *spec.energies.last().expect("at least two levels");
    let sup_hc = schedule.sup_norm();
    Ok(ModelConstants {
        m_minus_half,
        m: m_minus_half + m_n[(l + 2) as usize],
        m_n,
        c0: 1.0 + opnorm_hs + sup_hc,
        opnorm_q: linalg::opnorm(&spec.q),
        opnorm_hs,
        sup_hc,
        l,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisVerdict {
    pub hypotheses: Vec<Hypothesis>,
    pub passed: bool,
}

impl HypothesisVerdict {
    pub fn failures(&self) -> impl Iterator<Item = &Hypothesis> {
        self.hypotheses.iter().filter(|h| !h.passed)
    }
}

impl fmt::Display for HypothesisVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.hypotheses.iter().map(|h| h.message.as_str()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Short decimal rendering: at most six decimals, trailing zeros removed.
pub fn short_number(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e6) {
        return format!("{x:.3e}");
    }
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// `g‖Q‖MT ≤ 1` and `residual ≤ tol`.
pub fn check_hypotheses(constants: &ModelConstants, g: f64, period: f64, residual: f64, tol: f64) -> HypothesisVerdict {
    let strength = g * constants.opnorm_q * constants.m * period;
    let s_ok = strength <= 1.0;
    let r_ok = residual <= tol;
    let hypotheses = vec![
        Hypothesis {
            name: "weak coupling".into(),
            value: strength,
            limit: 1.0,
            passed: s_ok,
            message: format!("g‖Q‖MT = {} {} 1", short_number(strength), if s_ok { "≤" } else { ">" }),
        },
        Hypothesis {
            name: "decoupling".into(),
            value: residual,
            limit: tol,
            passed: r_ok,
            message: format!("decoupling residual = {:.3e} {} {:.3e}", residual, if r_ok { "≤" } else { ">" }, tol),
        },
    ];
    HypothesisVerdict { passed: s_ok && r_ok, hypotheses }
}

/// Measured `‖Θ^ℓ H_I Θ^{−(ℓ+j)}‖` and `‖[Θ^{ℓ+j}, H(τ)] Θ^{−(ℓ+j)}‖` for
/// `ℓ ≤ L`, `j ∈ {1, 2}`, against `‖Q‖(M_{-1/2} + M_{ℓ+j})` and `g‖Q‖M_{ℓ+j}`.
///
/// Also checks that the commutator is the same at `τ = 0` and `τ = T/3` and
/// that `‖H_f Θ^{-1}‖ < 1`.
pub fn relative_bounds_check(
    spec: &SystemSpec,
    modes: &ModeSet,
    basis: &FockBasis,
    schedule: &ControlSchedule,
    g: f64,
    l: u32,
) -> Result<CheckReport> {
    let hi = build_interaction(spec, modes, basis)?;
    let h0 = build_total(spec, modes, basis, schedule, g, 0.0)?;
    let h3 = build_total(spec, modes, basis, schedule, g, schedule.period() / 3.0)?;
    let q_norm = linalg::opnorm(&spec.q);
    let m_half = modes.m_minus_half();
    let mut report = CheckReport::new(format!("relative bounds L={l}"));
    for ell in 0..=l {
        for j in 1..=2u32 {
            let n = ell + j;
            let left = composite_theta(spec, modes, basis, ell as i32)?;
            let right = composite_theta(spec, modes, basis, -(n as i32))?;
            let weighted = linalg::opnorm(&linalg::scale_rows_cols(&hi, &left, &right));
            report.push(Check::le(format!("|Theta^{ell} H_I Theta^-{n}|"), weighted, q_norm * (m_half + modes.m_n(n))));

            let th_n = composite_theta(spec, modes, basis, n as i32)?;
            let th_minus_n = composite_theta(spec, modes, basis, -(n as i32))?;
            // ([D, H] D^{-1})_{ij} = (d_i - d_j) H_ij / d_j, exactly zero on Fock-diagonal blocks
            let comm = |h: &CMat| {
                CMat::from_fn(h.nrows(), h.ncols(), |i, j| h[(i, j)] * ((th_n[i] - th_n[j]) * th_minus_n[j]))
            };
            let c0 = comm(&h0);
            let c3 = comm(&h3);
            report.push(Check::le(
                format!("|[Theta^{n},H(tau)] Theta^-{n}| l={ell}"),
                linalg::opnorm(&c0),
                g * q_norm * modes.m_n(n),
            ));
            let drift = linalg::max_abs(&(&c0 - &c3)) / linalg::max_abs(&c0).max(1.0);
            report.push(Check::le(format!("commutator time dependence n={n} l={ell}"), drift, TIME_INDEPENDENCE_TOL));
        }
    }
    let hf = fock::number_weighted(modes, basis, 1.0)?;
    let th_inv = basis.theta_diag(modes, -1)?;
    let ones = vec![1.0; basis.dim()];
    let hf_theta = hf.scale_rows_cols(&ones, &th_inv).opnorm();
    let mut check = Check::le("|H_f Theta^-1|", hf_theta, 1.0);
    if hf_theta >= 1.0 {
        check.status = crate::report::Status::Fail;
    }
    report.push(check);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{constant_rotation, ControlSchedule};
    use crate::fock::build_basis;
    use crate::linalg::{max_abs, pauli_x, pauli_z};
    use std::f64::consts::PI;

    fn pauli_spec() -> SystemSpec {
        SystemSpec::new(vec![0.0, 1.0], pauli_z()).unwrap()
    }

    #[test]
    fn hs_is_descending_diagonal() {
        let hs = build_hs(&pauli_spec());
        assert_eq!(hs, linalg::from_real_diag(&[1.0, 0.0]));
        let s3 = SystemSpec::new(vec![0.0, 1.0, 2.5], CMat::zeros(3, 3)).unwrap();
        assert!((linalg::opnorm(&build_hs(&s3)) - 2.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_or_negative_energies_rejected() {
        for e in [vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.1, 1.0]] {
            match SystemSpec::new(e, pauli_z()) {
                Err(Error::InvalidSpec { field, .. }) => assert_eq!(field, "system.energies"),
                other => panic!("unexpected {other:?}"),
            }
        }
        let non_herm = CMat::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]);
        assert!(SystemSpec::new(vec![0.0, 1.0], non_herm).is_err());
    }

    #[test]
    fn interaction_small_example() {
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let basis = build_basis(1, 1).unwrap();
        let hi = build_interaction(&pauli_spec(), &modes, &basis).unwrap();
        // Q ⊗ φ with φ = σ_x on {vacuum, one photon}
        let want = CMat::from_row_slice(
            4,
            4,
            &[
                c(0., 0.),
                c(1., 0.),
                c(0., 0.),
                c(0., 0.),
                c(1., 0.),
                c(0., 0.),
                c(0., 0.),
                c(0., 0.),
                c(0., 0.),
                c(0., 0.),
                c(0., 0.),
                c(-1., 0.),
                c(0., 0.),
                c(0., 0.),
                c(-1., 0.),
                c(0., 0.),
            ],
        );
        assert!(max_abs(&(hi - want)) < 1e-15);
    }

    #[test]
    fn interaction_norm_factorises() {
        let modes = ModeSet::single(1.3, 0.7).unwrap();
        let basis = build_basis(1, 6).unwrap();
        let spec = SystemSpec::new(vec![0.0, 1.0], pauli_z() * c(2.0, 0.0) + pauli_x()).unwrap();
        let hi = build_interaction(&spec, &modes, &basis).unwrap();
        let phi = fock::field_operator(&modes, &basis).unwrap().opnorm();
        assert!((linalg::opnorm(&hi) - linalg::opnorm(spec.q()) * phi).abs() < 1e-8);
        let zero = SystemSpec::new(vec![0.0, 1.0], CMat::zeros(2, 2)).unwrap();
        assert_eq!(max_abs(&build_interaction(&zero, &modes, &basis).unwrap()), 0.0);
    }

    #[test]
    fn total_hamiltonian_properties() {
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let basis = build_basis(1, 4).unwrap();
        let spec = pauli_spec();
        let zero = ControlSchedule::zero(2, 0.1).unwrap();
        let h = build_total(&spec, &modes, &basis, &zero, 0.0, 0.03).unwrap();
        let off: f64 = (0..h.nrows())
            .flat_map(|i| (0..h.ncols()).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| h[(i, j)].norm())
            .sum();
        assert_eq!(off, 0.0);
        // ground level ⊗ vacuum sits at index D (system index 1 is E_0)
        assert_eq!(h[(basis.dim(), basis.dim())].re, 0.0);

        let s = constant_rotation(0.1, &pauli_x(), PI).unwrap();
        let a = build_total(&spec, &modes, &basis, &s, 0.2, 0.013).unwrap();
        let b = build_total(&spec, &modes, &basis, &s, 0.2, 0.113).unwrap();
        assert_eq!(max_abs(&(&a - &b)), 0.0);
        assert!(linalg::hermitian_defect(&a) <= 1e-12);
        assert!(build_total(&spec, &modes, &basis, &s, -1.0, 0.0).is_err());
    }

    #[test]
    fn default_constants() {
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let s = constant_rotation(0.1, &pauli_x(), PI).unwrap();
        let k = compute_constants(&pauli_spec(), &modes, &s, 0).unwrap();
        assert!((k.m_minus_half - 4.0).abs() < 1e-14);
        assert!((k.m_at(2) - 12.0).abs() < 1e-14);
        assert!((k.m - 16.0).abs() < 1e-14);
        assert!((k.c0 - (2.0 + 10.0 * PI)).abs() < 1e-9);
        assert!((k.opnorm_q - 1.0).abs() < 1e-14);
        let json = serde_json::to_value(&k).unwrap();
        assert!(json.get("M").is_some() && json.get("C0").is_some() && json.get("M_minus_half").is_some());

        let none = ModeSet::single(1.0, 0.0).unwrap();
        assert_eq!(compute_constants(&pauli_spec(), &none, &s, 0).unwrap().m, 0.0);
    }

    #[test]
    fn hypothesis_verdicts() {
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let s = constant_rotation(0.1, &pauli_x(), PI).unwrap();
        let k = compute_constants(&pauli_spec(), &modes, &s, 0).unwrap();
        let ok = check_hypotheses(&k, 1e-3, 0.1, 0.0, 1e-9);
        assert!(ok.passed);
        assert!((ok.hypotheses[0].value - 1.6e-3).abs() < 1e-15);
        let bad = check_hypotheses(&k, 1.0, 0.1, 0.0, 1e-9);
        assert!(!bad.passed);
        assert_eq!(bad.hypotheses[0].message, "g‖Q‖MT = 1.6 > 1");
    }

    #[test]
    fn relative_bounds_on_default_scenario() {
        let modes = ModeSet::single(1.0, 1.0).unwrap();
        let basis = build_basis(1, 8).unwrap();
        let s = constant_rotation(0.1, &pauli_x(), PI).unwrap();
        let r = relative_bounds_check(&pauli_spec(), &modes, &basis, &s, 1e-3, 2).unwrap();
        assert!(r.passed(), "{r:#?}");
        let first = r.get("|Theta^0 H_I Theta^-1|").unwrap();
        assert!((first.bound - 8.0).abs() < 1e-14);
        assert!(first.measured < 8.0);
        let r0 = relative_bounds_check(&pauli_spec(), &modes, &basis, &s, 0.0, 0).unwrap();
        assert_eq!(r0.get("|[Theta^1,H(tau)] Theta^-1| l=0").unwrap().measured, 0.0);
    }

    #[test]
    fn theta_commutes_with_free_and_control_parts() {
        let modes = ModeSet::from_parts(&[0.7, 1.9], &[c(0.3, 0.1), c(-0.5, 0.2)]).unwrap();
        let basis = build_basis(2, 4).unwrap();
        let spec = SystemSpec::new(vec![0.0, 0.4, 1.3], CMat::zeros(3, 3)).unwrap();
        let k = CMat::from_fn(3, 3, |i, j| c((i + j) as f64, i as f64 - j as f64));
        let s = ControlSchedule::constant(0.5, k).unwrap();
        let h = build_total(&spec, &modes, &basis, &s, 0.0, 0.1).unwrap();
        let th = linalg::from_real_diag(&composite_theta(&spec, &modes, &basis, 1).unwrap());
        assert_eq!(max_abs(&linalg::commutator(&th, &h)), 0.0);
    }
}
