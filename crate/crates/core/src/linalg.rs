//! Dense complex linear algebra used throughout the crate.
//!
//! Everything here works on [`CMat`] (`nalgebra::DMatrix<Complex64>`). The
//! matrix exponential is a fixed-order (13/13) Padé approximant with scaling and
//! squaring; operator norms are largest singular values.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Above this dimension [`opnorm`] switches from a dense SVD to power iteration.
pub const DENSE_NORM_LIMIT: usize = 2000;
pub const POWER_REL_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 10_000;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

pub fn from_real_diag(d: &[f64]) -> CMat {
    let n = d.len();
    let mut m = CMat::zeros(n, n);
    for (i, &x) in d.iter().enumerate() {
        m[(i, i)] = c(x, 0.0);
    }
    m
}

/// Kronecker product `a ⊗ b` (index of `a` slow, index of `b` fast).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// `‖A − A*‖_max`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    max_abs(&(a - a.adjoint()))
}

pub fn is_hermitian(a: &CMat, rel_tol: f64) -> bool {
    a.is_square() && hermitian_defect(a) <= rel_tol * max_abs(a).max(f64::MIN_POSITIVE)
}

/// Frobenius norm of `U*U − 1`; an upper bound on the operator-norm defect.
pub fn unitarity_defect(u: &CMat) -> f64 {
    let n = u.ncols();
    (u.adjoint() * u - identity(n)).norm()
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// `X_ij * left_i * right_j`: left/right multiplication by real diagonals.
pub fn scale_rows_cols(x: &CMat, left: &[f64], right: &[f64]) -> CMat {
    assert_eq!(x.nrows(), left.len());
    assert_eq!(x.ncols(), right.len());
    CMat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * (left[i] * right[j]))
}

/// Operator (spectral) norm: dense SVD up to [`DENSE_NORM_LIMIT`], power
/// iteration on `A*A` beyond.
pub fn opnorm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    if a.nrows().max(a.ncols()) <= DENSE_NORM_LIMIT {
        svd_norm(a)
    } else {
        power_norm(|v| a * v, |v| a.adjoint() * v, a.ncols(), POWER_REL_TOL, POWER_MAX_ITER)
    }
}

pub fn svd_norm(a: &CMat) -> f64 {
    a.singular_values().iter().fold(0.0_f64, |m, &s| m.max(s))
}

/// Largest singular value of a linear map given by its action and its adjoint
/// action, via power iteration on `A*A`.
pub fn power_norm<F, G>(apply: F, apply_adj: G, ncols: usize, rel_tol: f64, max_iter: usize) -> f64
where
    F: Fn(&CVec) -> CVec,
    G: Fn(&CVec) -> CVec,
{
    if ncols == 0 {
        return 0.0;
    }
    // Deterministic start with all components non-zero.
    let mut v = CVec::from_fn(ncols, |i, _| c(1.0 + 0.01 * (i % 7) as f64, 0.003 * (i % 5) as f64));
    let nv = v.norm();
    v /= c(nv, 0.0);
    let mut sigma2 = 0.0_f64;
    for _ in 0..max_iter {
        let w = apply_adj(&apply(&v));
        let lambda = w.norm();
        if lambda == 0.0 {
            return 0.0;
        }
        v = w / c(lambda, 0.0);
        if (lambda - sigma2).abs() <= rel_tol * lambda {
            sigma2 = lambda;
            break;
        }
        sigma2 = lambda;
    }
    sigma2.sqrt()
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &CMat) -> f64 {
    (0..a.ncols()).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the [13/13] Padé approximant.
pub fn expm(a: &CMat) -> CMat {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let norm = one_norm(a);
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let a = if s > 0 { a * c(0.5_f64.powi(s), 0.0) } else { a.clone() };
    let b = |k: usize| c(PADE13[k], 0.0);
    let id = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9)) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &id * b(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8)) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &id * b(0);
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `exp(−i·dt·H)`.
pub fn expm_evolution(h: &CMat, dt: f64) -> CMat {
    expm(&(h * c(0.0, -dt)))
}

/// `U^n` by repeated squaring.
pub fn matrix_power(u: &CMat, mut n: u64) -> CMat {
    let mut result = identity(u.nrows());
    let mut base = u.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Principal-ish logarithm of a unitary: returns hermitian `G` and a global
/// phase `c` with `U = e^{-ic} exp(−iG)`, choosing `c` so that `‖G‖` is minimal.
///
/// Uses simultaneous diagonalisation of the commuting hermitian parts of `U`.
pub fn unitary_generator(u: &CMat) -> Option<(CMat, f64)> {
    use std::f64::consts::PI;
    let n = u.nrows();
    let re = (u + u.adjoint()) * c(0.5, 0.0);
    let im = (u - u.adjoint()) * c(0.0, -0.5);
    // generic coefficients separate the joint eigenspaces
    let mix = &re + &im * c(std::f64::consts::SQRT_2, 0.0) + &re * &im * c(0.291_7, 0.0);
    let mix = (&mix + mix.adjoint()) * c(0.5, 0.0);
    let eig = mix.symmetric_eigen();
    let vecs = eig.eigenvectors;
    let mut phases: Vec<f64> = (0..n)
        .map(|k| {
            let v = vecs.column(k);
            (v.adjoint() * u * v)[(0, 0)].arg()
        })
        .collect();
    // Centre of the shortest arc containing every phase.
    let mut sorted = phases.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_gap = -1.0;
    let mut centre = 0.0;
    for k in 0..n {
        let a = sorted[k];
        let b = if k + 1 < n { sorted[k + 1] } else { sorted[0] + 2.0 * PI };
        let gap = b - a;
        if gap > best_gap {
            best_gap = gap;
            // arc runs from b to a + 2π
            centre = 0.5 * (b + a + 2.0 * PI);
        }
    }
    for p in phases.iter_mut() {
        let mut d = *p - centre;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d <= -PI {
            d += 2.0 * PI;
        }
        *p = d;
    }
    // U e^{-i centre} = Σ e^{i d_k} P_k = exp(−iG), G = −Σ d_k P_k
    let mut g = CMat::zeros(n, n);
    for (k, &d) in phases.iter().enumerate() {
        let v = vecs.column(k);
        g -= (v * v.adjoint()) * c(d, 0.0);
    }
    let g = (&g + g.adjoint()) * c(0.5, 0.0);
    let rebuilt = expm_evolution(&g, 1.0) * C64::from_polar(1.0, centre);
    if max_abs(&(rebuilt - u)) > 1e-9 {
        return None;
    }
    Some((g, -centre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Independent route for hermitian generators: spectral decomposition.
    fn expm_via_eigen(h: &CMat, dt: f64) -> CMat {
        let eig = h.clone().symmetric_eigen();
        let v = &eig.eigenvectors;
        let d = CMat::from_diagonal(&eig.eigenvalues.map(|e| C64::from_polar(1.0, -dt * e)));
        v * d * v.adjoint()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = CMat::zeros(3, 3);
        assert!(max_abs(&(expm(&z) - identity(3))) == 0.0);
    }

    #[test]
    fn pauli_rotation_closed_form() {
        // exp(−iπσx) = −1
        let u = expm_evolution(&pauli_x(), PI);
        assert!(max_abs(&(u + identity(2))) < 1e-14);
        // exp(−iθσx) = cosθ − i sinθ σx
        let th = 0.37;
        let u = expm_evolution(&pauli_x(), th);
        let want = identity(2) * c(th.cos(), 0.0) - pauli_x() * c(0.0, th.sin());
        assert!(max_abs(&(u - want)) < 1e-15);
    }

    #[test]
    fn agrees_with_spectral_route_for_large_norms() {
        let n = 6;
        let raw = CMat::from_fn(n, n, |i, j| c((i * 7 + j * 3) as f64 % 5.0 - 2.0, ((i + 2 * j) % 3) as f64 - 1.0));
        let h = (&raw + raw.adjoint()) * c(0.5, 0.0);
        for dt in [0.01, 1.0, 40.0] {
            let a = expm_evolution(&h, dt);
            let b = expm_via_eigen(&h, dt);
            assert!(max_abs(&(&a - &b)) < 1e-10, "dt = {dt}");
            assert!(unitarity_defect(&a) < 1e-11);
        }
    }

    #[test]
    fn power_iteration_matches_svd() {
        let n = 30;
        let a = CMat::from_fn(n, n, |i, j| c(((i * 13 + j * 5) % 11) as f64 - 5.0, ((i * j) % 7) as f64 * 0.1));
        let svd = svd_norm(&a);
        let pw = power_norm(|v| &a * v, |v| a.adjoint() * v, n, 1e-12, 10_000);
        assert!((svd - pw).abs() <= 1e-6 * svd, "{svd} vs {pw}");
    }

    #[test]
    fn matrix_power_by_squaring() {
        let u = expm_evolution(&pauli_y(), 0.1);
        let p = matrix_power(&u, 13);
        let want = expm_evolution(&pauli_y(), 1.3);
        assert!(max_abs(&(p - want)) < 1e-14);
        assert!(max_abs(&(matrix_power(&u, 0) - identity(2))) == 0.0);
    }

    #[test]
    fn generator_of_sigma_x_has_norm_half_pi() {
        let (g, _) = unitary_generator(&pauli_x()).unwrap();
        assert!((opnorm(&g) - PI / 2.0).abs() < 1e-12);
        let v = expm_evolution(&g, 1.0);
        // equal to σx up to a global phase
        let ph = v[(0, 1)] / pauli_x()[(0, 1)];
        assert!(max_abs(&(v - pauli_x() * ph)) < 1e-12);
    }

    #[test]
    fn kron_ordering_is_system_slow() {
        let k = kron(&pauli_z(), &identity(3));
        assert_eq!(k[(0, 0)], c(1.0, 0.0));
        assert_eq!(k[(3, 3)], c(-1.0, 0.0));
    }
}
