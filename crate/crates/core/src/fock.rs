//! Truncated multimode bosonic Fock space.
//!
//! The reservoir is a finite set of modes with frequencies `ω_j > 0` and complex
//! coupling amplitudes `f_j`. The Fock space is truncated by a global cutoff on
//! the total occupation `Σ n_j ≤ N_cut`; states are kept in graded
//! lexicographic order (total occupation ascending, then the occupation tuple
//! in ascending lexicographic order), so the vacuum is always index 0.
//!
//! Ladder operators are stored as compressed sparse rows. Creation operators
//! drop the matrix elements that would leave the truncated space, which makes
//! every operator here the compression `P A P` of its untruncated counterpart.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec, C64};
use crate::report::{Check, CheckReport};

/// `(row, col, value)` entry of a sparse operator.
pub type Triplet = (usize, usize, C64);

/// Default ceiling on the Fock basis size.
pub const DEFAULT_MAX_DIM: usize = 250_000;
/// Largest `n` accepted by [`check_commutator_identities`].
pub const MAX_IDENTITY_ORDER: u32 = 8;
/// Identity checks are exact up to floating round-off; this is the tolerance
/// on the deviation scaled by `max(1, ‖lhs‖_max)`.
pub const IDENTITY_TOL: f64 = 1e-12;

/// One reservoir mode: frequency `omega` and coupling amplitude `re + i·im`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub omega: f64,
    pub re: f64,
    pub im: f64,
}

impl Mode {
    pub fn amplitude(&self) -> C64 {
        c(self.re, self.im)
    }
}

/// Discretised reservoir: frequencies and coupling amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    modes: Vec<Mode>,
}

impl ModeSet {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("reservoir.modes", "at least one mode is required"));
        }
        for (j, m) in modes.iter().enumerate() {
            if !(m.omega.is_finite() && m.omega > 0.0) {
                return Err(Error::invalid(
                    format!("reservoir.modes[{j}].omega"),
                    format!("frequency must be strictly positive, got {}", m.omega),
                ));
            }
            if !(m.re.is_finite() && m.im.is_finite()) {
                return Err(Error::invalid(format!("reservoir.modes[{j}]"), "amplitude must be finite"));
            }
        }
        Ok(ModeSet { modes })
    }

    pub fn from_parts(frequencies: &[f64], amplitudes: &[C64]) -> Result<Self> {
        if frequencies.len() != amplitudes.len() {
            return Err(Error::IncompatibleInputs(format!(
                "{} frequencies vs {} amplitudes",
                frequencies.len(),
                amplitudes.len()
            )));
        }
        Self::new(frequencies.iter().zip(amplitudes).map(|(&omega, a)| Mode { omega, re: a.re, im: a.im }).collect())
    }

    /// A single mode with real amplitude.
    pub fn single(omega: f64, amplitude: f64) -> Result<Self> {
        Self::new(vec![Mode { omega, re: amplitude, im: 0.0 }])
    }

    pub fn count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.modes.iter().map(|m| m.omega)
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = C64> + '_ {
        self.modes.iter().map(Mode::amplitude)
    }

    /// `‖f‖₂`.
    pub fn norm(&self) -> f64 {
        self.amplitudes().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖(ω^p + 1) f‖₂`.
    pub fn weighted_norm(&self, p: f64) -> f64 {
        self.modes.iter().map(|m| (m.omega.powf(p) + 1.0).powi(2) * m.amplitude().norm_sqr()).sum::<f64>().sqrt()
    }

    /// The same frequencies with amplitudes `ω^p f`.
    pub fn scaled_by_frequency(&self, p: f64) -> ModeSet {
        ModeSet {
            modes: self
                .modes
                .iter()
                .map(|m| {
                    let s = m.omega.powf(p);
                    Mode { omega: m.omega, re: s * m.re, im: s * m.im }
                })
                .collect(),
        }
    }

    /// `M_{-1/2} = 2 ‖(ω^{-1/2} + 1) f‖₂`.
    pub fn m_minus_half(&self) -> f64 {
        2.0 * self.weighted_norm(-0.5)
    }

    /// `M_n = 2 Σ_{k=1}^{n} C(n,k) ‖(ω^k + 1) f‖₂`; the `k = 0` term is absent.
    pub fn m_n(&self, n: u32) -> f64 {
        2.0 * (1..=n)
            .map(|k| binomial(n as u64, k as u64) as f64 * self.weighted_norm(k as f64))
            .fold(0.0, |acc, x| acc + x)
    }
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

#[derive(Debug)]
struct BasisInner {
    mode_count: usize,
    cutoff: u32,
    states: Vec<Box<[u32]>>,
    totals: Vec<u32>,
    index: HashMap<Box<[u32]>, usize>,
    hash: String,
}

/// Occupation-number basis of the truncated Fock space. Cheap to clone.
#[derive(Debug, Clone)]
pub struct FockBasis {
    inner: Arc<BasisInner>,
}

impl PartialEq for FockBasis {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.mode_count == other.inner.mode_count && self.inner.cutoff == other.inner.cutoff)
    }
}

/// Enumerate all tuples with `Σ n_j ≤ N_cut` in graded lexicographic order.
pub fn build_basis(mode_count: usize, cutoff: u32) -> Result<FockBasis> {
    build_basis_with_limit(mode_count, cutoff, DEFAULT_MAX_DIM)
}

pub fn build_basis_with_limit(mode_count: usize, cutoff: u32, max_dim: usize) -> Result<FockBasis> {
    if mode_count == 0 {
        return Err(Error::invalid("truncation.modes", "mode count must be at least 1"));
    }
    if cutoff == 0 {
        return Err(Error::invalid("truncation.n_cut", "cutoff must be at least 1"));
    }
    let dim = binomial(cutoff as u64 + mode_count as u64, mode_count as u64);
    if dim > max_dim as u128 {
        return Err(Error::ResourceLimit(format!(
            "Fock dimension C({}, {}) = {} exceeds ceiling {}",
            cutoff as u64 + mode_count as u64,
            mode_count,
            dim,
            max_dim
        )));
    }
    let dim = dim as usize;
    let mut states: Vec<Box<[u32]>> = Vec::with_capacity(dim);
    let mut totals = Vec::with_capacity(dim);
    let mut buf = vec![0u32; mode_count];
    for total in 0..=cutoff {
        compositions(total, 0, &mut buf, &mut |s| {
            states.push(s.to_vec().into_boxed_slice());
            totals.push(total);
        });
    }
    debug_assert_eq!(states.len(), dim);
    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    let mut hasher = Sha256::new();
    hasher.update(format!("ddlab-fock-basis;J={mode_count};N={cutoff};graded-lex").as_bytes());
    for s in &states {
        for &n in s.iter() {
            hasher.update(n.to_le_bytes());
        }
    }
    let hash = hex::encode(&hasher.finalize()[..8]);

    Ok(FockBasis { inner: Arc::new(BasisInner { mode_count, cutoff, states, totals, index, hash }) })
}

/// Tuples of length `buf.len() - pos` summing to `remaining`, lexicographically ascending.
fn compositions(remaining: u32, pos: usize, buf: &mut [u32], emit: &mut impl FnMut(&[u32])) {
    let last = buf.len() - 1;
    if pos == last {
        buf[pos] = remaining;
        emit(buf);
        return;
    }
    for n in 0..=remaining {
        buf[pos] = n;
        compositions(remaining - n, pos + 1, buf, emit);
    }
}

impl FockBasis {
    pub fn mode_count(&self) -> usize {
        self.inner.mode_count
    }

    pub fn cutoff(&self) -> u32 {
        self.inner.cutoff
    }

    pub fn dim(&self) -> usize {
        self.inner.states.len()
    }

    pub fn state(&self, i: usize) -> &[u32] {
        &self.inner.states[i]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u32]> {
        self.inner.states.iter().map(|s| &s[..])
    }

    pub fn total(&self, i: usize) -> u32 {
        self.inner.totals[i]
    }

    pub fn index_of(&self, occupation: &[u32]) -> Option<usize> {
        self.inner.index.get(occupation).copied()
    }

    pub fn vacuum(&self) -> usize {
        0
    }

    /// Short content hash of the basis (mode count, cutoff, order).
    pub fn hash(&self) -> &str {
        &self.inner.hash
    }

    /// Indices of states with total occupation `≤ N_cut − margin`.
    pub fn protected(&self, margin: u32) -> Vec<usize> {
        let limit = self.cutoff().saturating_sub(margin);
        if margin > self.cutoff() {
            return Vec::new();
        }
        (0..self.dim()).filter(|&i| self.total(i) <= limit).collect()
    }

    /// `Σ_j n_j ω_j^p` for every basis state.
    pub fn weighted_occupation(&self, modes: &ModeSet, p: f64) -> Result<Vec<f64>> {
        self.ensure_compatible(modes)?;
        let w: Vec<f64> = modes.frequencies().map(|o| o.powf(p)).collect();
        Ok(self.states().map(|s| s.iter().zip(&w).map(|(&n, &wj)| n as f64 * wj).sum()).collect())
    }

    /// Diagonal of `Θ^m = (H_f + 1)^m`.
    pub fn theta_diag(&self, modes: &ModeSet, m: i32) -> Result<Vec<f64>> {
        Ok(self.weighted_occupation(modes, 1.0)?.into_iter().map(|e| (1.0 + e).powi(m)).collect())
    }

    fn ensure_compatible(&self, modes: &ModeSet) -> Result<()> {
        if modes.count() != self.mode_count() {
            return Err(Error::IncompatibleInputs(format!(
                "mode set has {} modes, basis has {}",
                modes.count(),
                self.mode_count()
            )));
        }
        Ok(())
    }
}

/// Sparse operator on a [`FockBasis`], compressed sparse row storage.
#[derive(Debug, Clone)]
pub struct FockOperator {
    basis: FockBasis,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    hermitian: bool,
}

impl FockOperator {
    /// Build from coordinate triplets; duplicates are summed, exact zeros dropped.
    pub fn from_triplets(basis: &FockBasis, mut triplets: Vec<(usize, usize, C64)>, hermitian: bool) -> Self {
        let dim = basis.dim();
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, col, v) in triplets {
            assert!(r < dim && col < dim, "triplet ({r}, {col}) outside dimension {dim}");
            if last == Some((r, col)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(col);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, col));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut op = FockOperator { basis: basis.clone(), row_ptr, cols, vals, hermitian };
        op.prune();
        op
    }

    pub fn diagonal(basis: &FockBasis, diag: &[f64]) -> Self {
        let t = diag.iter().enumerate().map(|(i, &d)| (i, i, c(d, 0.0))).collect();
        Self::from_triplets(basis, t, true)
    }

    fn prune(&mut self) {
        let dim = self.basis.dim();
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != C64::new(0.0, 0.0) {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim())
            .flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim(), self.dim());
        for (r, col, v) in self.triplets() {
            m[(r, col)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> FockOperator {
        let t = self.triplets().map(|(r, col, v)| (col, r, v.conj())).collect();
        FockOperator::from_triplets(&self.basis, t, self.hermitian)
    }

    pub fn add(&self, other: &FockOperator) -> FockOperator {
        assert_eq!(self.dim(), other.dim());
        let t = self.triplets().chain(other.triplets()).collect();
        FockOperator::from_triplets(&self.basis, t, self.hermitian && other.hermitian)
    }

    pub fn scale(&self, s: C64) -> FockOperator {
        let t = self.triplets().map(|(r, col, v)| (r, col, v * s)).collect();
        FockOperator::from_triplets(&self.basis, t, self.hermitian && s.im == 0.0)
    }

    /// `D_left · A · D_right` for real diagonals.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> FockOperator {
        let t = self.triplets().map(|(r, col, v)| (r, col, v * (left[r] * right[col]))).collect();
        FockOperator::from_triplets(&self.basis, t, false)
    }

    pub fn matvec(&self, x: &CVec) -> CVec {
        let mut y = CVec::zeros(self.dim());
        for r in 0..self.dim() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn adjoint_matvec(&self, x: &CVec) -> CVec {
        let mut y = CVec::zeros(self.dim());
        for r in 0..self.dim() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[k]] += self.vals[k].conj() * x[r];
            }
        }
        y
    }

    /// Largest singular value; dense SVD for small bases, sparse power iteration otherwise.
    pub fn opnorm(&self) -> f64 {
        if self.nnz() == 0 {
            return 0.0;
        }
        if self.dim() <= linalg::DENSE_NORM_LIMIT {
            linalg::svd_norm(&self.to_dense())
        } else {
            linalg::power_norm(
                |v| self.matvec(v),
                |v| self.adjoint_matvec(v),
                self.dim(),
                linalg::POWER_REL_TOL,
                linalg::POWER_MAX_ITER,
            )
        }
    }

    /// Sparse triplet dump: two header lines, then `row col re im` per nonzero.
    pub fn dump(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "# ddlab sparse triplets v1")?;
        writeln!(out, "# dim {} basis {} hermitian {}", self.dim(), self.basis.hash(), u8::from(self.hermitian))?;
        for (r, col, v) in self.triplets() {
            writeln!(out, "{r} {col} {:.16e} {:.16e}", v.re, v.im)?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dump is ASCII")
    }
}

/// Parse a triplet dump back into `(dim, basis hash, triplets)`.
pub fn parse_dump(text: &str) -> Option<(usize, String, Vec<Triplet>)> {
    let mut lines = text.lines();
    lines.next()?;
    let header: Vec<&str> = lines.next()?.split_whitespace().collect();
    let dim = header.get(2)?.parse().ok()?;
    let hash = header.get(4)?.to_string();
    let mut triplets = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return None;
        }
        triplets.push((f[0].parse().ok()?, f[1].parse().ok()?, c(f[2].parse().ok()?, f[3].parse().ok()?)));
    }
    Some((dim, hash, triplets))
}

/// Single-mode annihilator `a_j`.
pub fn mode_annihilator(basis: &FockBasis, j: usize) -> FockOperator {
    let mut t = Vec::new();
    let mut lowered = vec![0u32; basis.mode_count()];
    for (col, s) in basis.states().enumerate() {
        if s[j] == 0 {
            continue;
        }
        lowered.copy_from_slice(s);
        lowered[j] -= 1;
        let row = basis.index_of(&lowered).expect("lowered state is inside the truncation");
        t.push((row, col, c((s[j] as f64).sqrt(), 0.0)));
    }
    FockOperator::from_triplets(basis, t, false)
}

/// Single-mode creator `a_j*`, truncated at the cutoff.
pub fn mode_creator(basis: &FockBasis, j: usize) -> FockOperator {
    let mut t = Vec::new();
    let mut raised = vec![0u32; basis.mode_count()];
    for (col, s) in basis.states().enumerate() {
        if basis.total(col) >= basis.cutoff() {
            continue;
        }
        raised.copy_from_slice(s);
        raised[j] += 1;
        let row = basis.index_of(&raised).expect("raised state is below the cutoff");
        t.push((row, col, c(((s[j] + 1) as f64).sqrt(), 0.0)));
    }
    FockOperator::from_triplets(basis, t, false)
}

/// `a(f) = Σ_j conj(f_j) a_j`.
pub fn annihilator(modes: &ModeSet, basis: &FockBasis) -> Result<FockOperator> {
    basis.ensure_compatible(modes)?;
    let mut t = Vec::new();
    let mut lowered = vec![0u32; basis.mode_count()];
    for (col, s) in basis.states().enumerate() {
        for (j, f) in modes.amplitudes().enumerate() {
            if s[j] == 0 {
                continue;
            }
            lowered.copy_from_slice(s);
            lowered[j] -= 1;
            let row = basis.index_of(&lowered).expect("lowered state is inside the truncation");
            t.push((row, col, f.conj() * (s[j] as f64).sqrt()));
        }
    }
    Ok(FockOperator::from_triplets(basis, t, false))
}

/// `a*(f) = Σ_j f_j a_j*`, dropping elements that raise the total above `N_cut`.
pub fn creator(modes: &ModeSet, basis: &FockBasis) -> Result<FockOperator> {
    basis.ensure_compatible(modes)?;
    let mut t = Vec::new();
    let mut raised = vec![0u32; basis.mode_count()];
    for (col, s) in basis.states().enumerate() {
        if basis.total(col) >= basis.cutoff() {
            continue;
        }
        for (j, f) in modes.amplitudes().enumerate() {
            raised.copy_from_slice(s);
            raised[j] += 1;
            let row = basis.index_of(&raised).expect("raised state is below the cutoff");
            t.push((row, col, f * ((s[j] + 1) as f64).sqrt()));
        }
    }
    Ok(FockOperator::from_triplets(basis, t, false))
}

/// Field operator `φ(f) = a*(f) + a(f)`.
pub fn field_operator(modes: &ModeSet, basis: &FockBasis) -> Result<FockOperator> {
    let phi = creator(modes, basis)?.add(&annihilator(modes, basis)?);
    Ok(FockOperator { hermitian: true, ..phi })
}

/// `dΓ(ω^p)`: diagonal with entries `Σ_j n_j ω_j^p`. `p = 1` is the field energy `H_f`.
pub fn number_weighted(modes: &ModeSet, basis: &FockBasis, p: f64) -> Result<FockOperator> {
    Ok(FockOperator::diagonal(basis, &basis.weighted_occupation(modes, p)?))
}

/// `Θ^m = (H_f + 1)^m`; `m` may be negative.
pub fn theta_power(basis: &FockBasis, modes: &ModeSet, m: i32) -> Result<FockOperator> {
    Ok(FockOperator::diagonal(basis, &basis.theta_diag(modes, m)?))
}

/// Max deviation of `X` from `Y` over the given rows and columns.
fn restricted_deviation(x: &CMat, y: &CMat, rows: &[usize], cols: &[usize]) -> f64 {
    let mut dev = 0.0_f64;
    for &r in rows {
        for &col in cols {
            dev = dev.max((x[(r, col)] - y[(r, col)]).norm());
        }
    }
    dev
}

fn restricted_max(x: &CMat, rows: &[usize], cols: &[usize]) -> f64 {
    let mut m = 0.0_f64;
    for &r in rows {
        for &col in cols {
            m = m.max(x[(r, col)].norm());
        }
    }
    m
}

/// Canonical commutation relations on vectors with total occupation `≤ N_cut − 1`.
///
/// Returns the maximal violation of `[a_p, a_k] = 0`, `[a_p*, a_k*] = 0` and
/// `[a_p, a_k*] = δ_pk`.
pub fn check_ccr(basis: &FockBasis, modes: &ModeSet) -> Result<CheckReport> {
    basis.ensure_compatible(modes)?;
    if basis.cutoff() < 2 {
        return Err(Error::invalid("truncation.n_cut", "CCR check needs N_cut >= 2"));
    }
    let rows: Vec<usize> = (0..basis.dim()).collect();
    let cols = basis.protected(1);
    let j = basis.mode_count();
    let a: Vec<CMat> = (0..j).map(|p| mode_annihilator(basis, p).to_dense()).collect();
    let ad: Vec<CMat> = (0..j).map(|p| mode_creator(basis, p).to_dense()).collect();
    let id = linalg::identity(basis.dim());
    let zero = CMat::zeros(basis.dim(), basis.dim());
    let (mut aa, mut adad, mut aad) = (0.0_f64, 0.0_f64, 0.0_f64);
    for p in 0..j {
        for k in 0..j {
            aa = aa.max(restricted_deviation(&linalg::commutator(&a[p], &a[k]), &zero, &rows, &cols));
            adad = adad.max(restricted_deviation(&linalg::commutator(&ad[p], &ad[k]), &zero, &rows, &cols));
            let want = if p == k { &id } else { &zero };
            aad = aad.max(restricted_deviation(&linalg::commutator(&a[p], &ad[k]), want, &rows, &cols));
        }
    }
    let mut report = CheckReport::new("ccr");
    report.push(Check::le("[a_p,a_k]", aa, IDENTITY_TOL));
    report.push(Check::le("[a_p*,a_k*]", adad, IDENTITY_TOL));
    report.push(Check::le("[a_p,a_k*]-delta", aad, IDENTITY_TOL));
    Ok(report)
}

/// `[H_f, a*(f)] = a*(ωf)`, `[H_f, a(f)] = −a(ωf)` and the binomial expansions
/// of `Θ^n a^#(f) Θ^{-n}`, on the sub-basis with total occupation `≤ N_cut − n`.
///
/// Each check reports the maximal entrywise deviation divided by
/// `max(1, max entry of the left side)`.
pub fn check_commutator_identities(basis: &FockBasis, modes: &ModeSet, n: u32) -> Result<CheckReport> {
    basis.ensure_compatible(modes)?;
    if n > MAX_IDENTITY_ORDER {
        return Err(Error::invalid("n", format!("identity order {n} exceeds {MAX_IDENTITY_ORDER}")));
    }
    if n > basis.cutoff() {
        return Err(Error::invalid("truncation.n_cut", format!("N_cut must be at least n = {n}")));
    }
    let idx = basis.protected(n);
    let hf = number_weighted(modes, basis, 1.0)?.to_dense();
    let astar = creator(modes, basis)?.to_dense();
    let a = annihilator(modes, basis)?.to_dense();
    let omega_f = modes.scaled_by_frequency(1.0);
    let astar_w = creator(&omega_f, basis)?.to_dense();
    let a_w = annihilator(&omega_f, basis)?.to_dense();

    let scaled =
        |lhs: &CMat, rhs: &CMat| restricted_deviation(lhs, rhs, &idx, &idx) / restricted_max(lhs, &idx, &idx).max(1.0);

    let mut report = CheckReport::new(format!("commutator identities n={n}"));
    let lhs = linalg::commutator(&hf, &astar);
    report.push(Check::le("[H_f,a*(f)]=a*(wf)", scaled(&lhs, &astar_w), IDENTITY_TOL));
    let lhs = linalg::commutator(&hf, &a);
    report.push(Check::le("[H_f,a(f)]=-a(wf)", scaled(&lhs, &(-&a_w)), IDENTITY_TOL));

    let th_n = basis.theta_diag(modes, n as i32)?;
    let th_minus_n = basis.theta_diag(modes, -(n as i32))?;
    let lhs_star = linalg::scale_rows_cols(&astar, &th_n, &th_minus_n);
    let lhs_ann = linalg::scale_rows_cols(&a, &th_n, &th_minus_n);
    let ones = vec![1.0; basis.dim()];
    let mut rhs_star = CMat::zeros(basis.dim(), basis.dim());
    let mut rhs_ann = CMat::zeros(basis.dim(), basis.dim());
    for k in 0..=n {
        let binom = binomial(n as u64, k as u64) as f64;
        let fk = modes.scaled_by_frequency(k as f64);
        let th_minus_k = basis.theta_diag(modes, -(k as i32))?;
        let ck = creator(&fk, basis)?.to_dense();
        let ak = annihilator(&fk, basis)?.to_dense();
        rhs_star += linalg::scale_rows_cols(&ck, &ones, &th_minus_k) * c(binom, 0.0);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        rhs_ann += linalg::scale_rows_cols(&ak, &ones, &th_minus_k) * c(sign * binom, 0.0);
    }
    report.push(Check::le("Theta^n a*(f) Theta^-n expansion", scaled(&lhs_star, &rhs_star), IDENTITY_TOL));
    report.push(Check::le("Theta^n a(f) Theta^-n expansion", scaled(&lhs_ann, &rhs_ann), IDENTITY_TOL));
    Ok(report)
}

/// Measured norms of `a(f)Θ^{-1}`, `a*(f)Θ^{-1}`, `[Θ^n, a^#(f)]Θ^{-n}` against
/// `½M_{-1/2}` and `½M_n`. Compressions never exceed the untruncated norm, so
/// these hold exactly at every cutoff.
pub fn weighted_field_bounds(basis: &FockBasis, modes: &ModeSet, n: u32) -> Result<CheckReport> {
    basis.ensure_compatible(modes)?;
    let a = annihilator(modes, basis)?;
    let astar = creator(modes, basis)?;
    let ones = vec![1.0; basis.dim()];
    let th_inv = basis.theta_diag(modes, -1)?;
    let th_n = basis.theta_diag(modes, n as i32)?;
    let th_minus_n = basis.theta_diag(modes, -(n as i32))?;
    let half_m_half = 0.5 * modes.m_minus_half();
    let half_m_n = 0.5 * modes.m_n(n);

    // [Θ^n, A]Θ^{-n} = Θ^n A Θ^{-n} − A
    let commutator_norm =
        |op: &FockOperator| op.scale_rows_cols(&th_n, &th_minus_n).add(&op.scale(c(-1.0, 0.0))).opnorm();

    let mut report = CheckReport::new(format!("weighted field bounds n={n}"));
    report.push(Check::le("|a(f) Theta^-1|", a.scale_rows_cols(&ones, &th_inv).opnorm(), half_m_half));
    report.push(Check::le("|a*(f) Theta^-1|", astar.scale_rows_cols(&ones, &th_inv).opnorm(), half_m_half));
    report.push(Check::le("|[Theta^n,a*(f)] Theta^-n|", commutator_norm(&astar), half_m_n));
    report.push(Check::le("|[Theta^n,a(f)] Theta^-n|", commutator_norm(&a), half_m_n));
    Ok(report)
}

/// Human-readable basis listing, one `index: (n_1, …, n_J)` per line.
pub fn describe_basis(basis: &FockBasis) -> String {
    let mut s = String::new();
    for (i, st) in basis.states().enumerate() {
        let _ = writeln!(s, "{i}: {st:?}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_mode(f: C64) -> ModeSet {
        ModeSet::from_parts(&[1.0], &[f]).unwrap()
    }

    #[test]
    fn basis_dimensions() {
        assert_eq!(build_basis(1, 8).unwrap().dim(), 9);
        assert_eq!(build_basis(3, 4).unwrap().dim(), 35);
        assert!(matches!(build_basis(2, 0), Err(Error::InvalidSpec { .. })));
        assert!(matches!(build_basis(0, 3), Err(Error::InvalidSpec { .. })));
        assert!(matches!(build_basis_with_limit(6, 30, 1000), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn basis_order_is_graded_lex() {
        let b = build_basis(2, 2).unwrap();
        let states: Vec<Vec<u32>> = b.states().map(|s| s.to_vec()).collect();
        assert_eq!(states, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![0, 2], vec![1, 1], vec![2, 0]]);
        for (i, s) in b.states().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
        }
        assert_eq!(b.vacuum(), 0);
        assert_eq!(b.index_of(&[3, 0]), None);
    }

    #[test]
    fn annihilator_kills_vacuum_and_matrix_elements() {
        let b = build_basis(1, 4).unwrap();
        let a = annihilator(&one_mode(c(1.0, 0.0)), &b).unwrap();
        let vac = CVec::from_fn(b.dim(), |i, _| if i == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert_eq!(a.matvec(&vac).norm(), 0.0);
        assert_eq!(a.get(0, 1), c(1.0, 0.0));

        let a = annihilator(&one_mode(c(0.0, 2.0)), &b).unwrap();
        let v = a.get(1, 2);
        assert_abs_diff_eq!(v.re, 0.0);
        assert_abs_diff_eq!(v.im, -2.0 * 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn creator_is_truncated_adjoint() {
        let b = build_basis(2, 3).unwrap();
        let modes = ModeSet::from_parts(&[1.0, 2.5], &[c(0.3, -0.7), c(-1.1, 0.2)]).unwrap();
        let cr = creator(&modes, &b).unwrap();
        let an = annihilator(&modes, &b).unwrap().adjoint();
        let keep = b.protected(1);
        let d = restricted_deviation(&cr.to_dense(), &an.to_dense(), &(0..b.dim()).collect::<Vec<_>>(), &keep);
        assert_eq!(d, 0.0);
        assert_eq!(creator(&one_mode(c(1.0, 0.0)), &build_basis(1, 3).unwrap()).unwrap().get(1, 0), c(1.0, 0.0));
        // no row for N_cut + 1: the top state has an empty column
        let b1 = build_basis(1, 3).unwrap();
        let cr1 = creator(&one_mode(c(1.0, 0.0)), &b1).unwrap();
        assert!((0..b1.dim()).all(|r| cr1.get(r, 3) == c(0.0, 0.0)));
    }

    #[test]
    fn field_operator_single_mode_matrix() {
        let b = build_basis(1, 2).unwrap();
        let phi = field_operator(&one_mode(c(1.0, 0.0)), &b).unwrap();
        assert!(phi.is_hermitian());
        let d = phi.to_dense();
        assert!(linalg::hermitian_defect(&d) <= 1e-12);
        let s2 = 2f64.sqrt();
        let want = CMat::from_row_slice(
            3,
            3,
            &[c(0., 0.), c(1., 0.), c(0., 0.), c(1., 0.), c(0., 0.), c(s2, 0.), c(0., 0.), c(s2, 0.), c(0., 0.)],
        );
        assert!(linalg::max_abs(&(d - want)) < 1e-15);
    }

    #[test]
    fn vacuum_expectation_of_phi_squared_is_norm_squared() {
        let b = build_basis(3, 3).unwrap();
        let modes = ModeSet::from_parts(&[0.5, 1.0, 3.0], &[c(0.2, 0.1), c(-0.4, 0.0), c(0.0, 0.9)]).unwrap();
        let phi = field_operator(&modes, &b).unwrap().to_dense();
        let v = (&phi * &phi)[(0, 0)];
        assert_abs_diff_eq!(v.re, modes.norm().powi(2), epsilon = 1e-14);
        assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn number_weighted_entries() {
        let b = build_basis(2, 3).unwrap();
        let modes = ModeSet::from_parts(&[1.0, 2.0], &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let i = b.index_of(&[1, 1]).unwrap();
        assert_eq!(number_weighted(&modes, &b, 1.0).unwrap().get(i, i).re, 3.0);
        assert_eq!(number_weighted(&modes, &b, 2.0).unwrap().get(i, i).re, 5.0);
        assert_eq!(number_weighted(&modes, &b, 1.0).unwrap().get(0, 0).re, 0.0);
    }

    #[test]
    fn theta_powers() {
        let b = build_basis(2, 3).unwrap();
        let modes = ModeSet::from_parts(&[0.7, 2.0], &[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let t0 = theta_power(&b, &modes, 0).unwrap().to_dense();
        assert_eq!(t0, linalg::identity(b.dim()));
        assert_eq!(theta_power(&b, &modes, 1).unwrap().get(0, 0).re, 1.0);
        let p = theta_power(&b, &modes, 3).unwrap().to_dense() * theta_power(&b, &modes, -3).unwrap().to_dense();
        assert!(linalg::max_abs(&(p - linalg::identity(b.dim()))) <= 1e-15);
    }

    #[test]
    fn ccr_single_mode_and_boundary_artifact() {
        let b = build_basis(1, 8).unwrap();
        let modes = one_mode(c(1.0, 0.0));
        let r = check_ccr(&b, &modes).unwrap();
        assert!(r.passed(), "{r:?}");
        let a = mode_annihilator(&b, 0).to_dense();
        let ad = mode_creator(&b, 0).to_dense();
        let comm = linalg::commutator(&a, &ad);
        for n in 0..8 {
            assert_abs_diff_eq!(comm[(n, n)].re, 1.0, epsilon = 1e-12);
        }
        // truncation artifact at the boundary: ⟨N|[a,a*]|N⟩ = −N
        assert_abs_diff_eq!(comm[(8, 8)].re, -8.0, epsilon = 1e-12);
        assert!(check_ccr(&build_basis(1, 1).unwrap(), &modes).is_err());
    }

    #[test]
    fn ccr_disjoint_modes_commute_exactly() {
        let b = build_basis(2, 4).unwrap();
        let a1 = mode_annihilator(&b, 0).to_dense();
        let a2 = mode_annihilator(&b, 1).to_dense();
        assert_eq!(linalg::max_abs(&linalg::commutator(&a1, &a2)), 0.0);
    }

    #[test]
    fn identities_at_n_zero_and_one() {
        let b = build_basis(2, 5).unwrap();
        let modes = ModeSet::from_parts(&[0.3, 4.0], &[c(0.5, 0.5), c(-0.2, 0.1)]).unwrap();
        for n in [0, 1] {
            let r = check_commutator_identities(&b, &modes, n).unwrap();
            assert!(r.passed(), "{r:?}");
        }
        assert!(check_commutator_identities(&b, &modes, 6).is_err());
    }

    #[test]
    fn weighted_field_bounds_single_mode_values() {
        let modes = one_mode(c(1.0, 0.0));
        assert_abs_diff_eq!(modes.m_minus_half(), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(modes.m_n(1), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(modes.m_n(2), 12.0, epsilon = 1e-14);
        let b = build_basis(1, 8).unwrap();
        let r = weighted_field_bounds(&b, &modes, 2).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checks[0].bound, 2.0);
        assert!(r.checks[0].measured < 2.0);
        assert_eq!(r.checks[2].bound, 6.0);
    }

    #[test]
    fn zero_amplitude_gives_zero_norms() {
        let modes = one_mode(c(0.0, 0.0));
        let b = build_basis(1, 5).unwrap();
        let r = weighted_field_bounds(&b, &modes, 3).unwrap();
        assert!(r.passed());
        assert_eq!(r.max_measured(), 0.0);
    }

    #[test]
    fn mode_count_mismatch_is_rejected() {
        let b = build_basis(2, 3).unwrap();
        assert!(matches!(annihilator(&one_mode(c(1.0, 0.0)), &b), Err(Error::IncompatibleInputs(_))));
    }

    #[test]
    fn nonpositive_frequency_is_rejected() {
        assert!(ModeSet::single(0.0, 1.0).is_err());
        assert!(ModeSet::single(-1.0, 1.0).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let b = build_basis(2, 3).unwrap();
        let modes = ModeSet::from_parts(&[1.0, 2.0], &[c(0.3, -0.1), c(1.0, 0.5)]).unwrap();
        let phi = field_operator(&modes, &b).unwrap();
        let text = phi.dump_string();
        let (dim, hash, triplets) = parse_dump(&text).unwrap();
        assert_eq!(dim, b.dim());
        assert_eq!(hash, b.hash());
        let back = FockOperator::from_triplets(&b, triplets, true);
        assert_eq!(back.to_dense(), phi.to_dense());
    }
}
