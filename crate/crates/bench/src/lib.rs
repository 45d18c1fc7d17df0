//! Fixtures shared by the criterion benches.

use ddlab_core::{CMat, Dynamics, Scenario, C64};

/// Dynamics of the default scenario at Fock cutoff `n_cut`.
pub fn default_dynamics(n_cut: u32) -> Dynamics {
    let sc = Scenario::default();
    let schedule = sc.schedule().expect("default schedule");
    sc.dynamics(&schedule, n_cut).expect("default dynamics")
}

/// Deterministic dense test matrix `-i·0.1·(H + H*)` with `H_jk = sin(j + 2k) + i cos(3j - k)`.
pub fn skew_hermitian(n: usize) -> CMat {
    let h = CMat::from_fn(n, n, |j, k| {
        let (j, k) = (j as f64, k as f64);
        C64::new((j + 2.0 * k).sin(), (3.0 * j - k).cos())
    });
    (&h + h.adjoint()) * C64::new(0.0, -0.1)
}
