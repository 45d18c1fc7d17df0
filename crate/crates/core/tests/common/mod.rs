#![allow(dead_code)]

use ddlab_core::fock::ModeSet;
use ddlab_core::linalg::c;
use ddlab_core::{CMat, C64};
use proptest::prelude::*;

/// Frequencies in `[0.1, 5]`, nonzero amplitudes in the unit disk, at most `max_modes` modes.
pub fn mode_set(max_modes: usize) -> impl Strategy<Value = ModeSet> {
    prop::collection::vec((0.1f64..5.0, 1e-3f64..=1.0, 0.0f64..std::f64::consts::TAU), 1..=max_modes).prop_map(|raw| {
        let freqs: Vec<f64> = raw.iter().map(|m| m.0).collect();
        let amps: Vec<C64> = raw.iter().map(|m| C64::from_polar(m.1, m.2)).collect();
        ModeSet::from_parts(&freqs, &amps).unwrap()
    })
}

/// Random hermitian `n×n` matrix with entries bounded by `scale`.
pub fn hermitian(n: usize, scale: f64) -> impl Strategy<Value = CMat> {
    prop::collection::vec(-scale..scale, 2 * n * n).prop_map(move |v| {
        let m = CMat::from_fn(n, n, |i, j| c(v[2 * (i * n + j)], v[2 * (i * n + j) + 1]));
        (&m + m.adjoint()) * c(0.5, 0.0)
    })
}
