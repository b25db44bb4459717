//! Dense Hilbert-space primitives on registers of spin-1/2 sites.
//!
//! Conventions used throughout the crate:
//!
//! * `|0⟩ = (1, 0)ᵀ` is the unexcited level and `|1⟩ = (0, 1)ᵀ` carries one
//!   excitation. `σ_z = diag(1, −1)`, so `σ_z|0⟩ = +|0⟩`.
//! * [`Pauli::Plus`] raises the excitation, `σ₊|0⟩ = |1⟩`, and
//!   [`Pauli::Minus`] lowers it. The number operator `(1 − σ_z)/2 = σ₊σ₋`
//!   counts excitations.
//! * Site 0 is the leftmost tensor factor, i.e. the most significant bit of a
//!   basis index.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

/// Largest register handled by the dense representation.
pub const DENSE_QUBIT_LIMIT: usize = 14;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Validation tolerances. The defaults are the ones used everywhere unless a
/// caller passes its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub hamiltonian_hermitian: f64,
    pub density_hermitian: f64,
    pub density_trace: f64,
    pub density_min_eigenvalue: f64,
    pub pure_norm: f64,
    pub impossible_outcome: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hamiltonian_hermitian: 1e-12,
            density_hermitian: 1e-10,
            density_trace: 1e-8,
            density_min_eigenvalue: 1e-8,
            pure_norm: 1e-10,
            impossible_outcome: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    Plus,
    Minus,
    Identity,
}

/// Single-site basis outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Zero,
    One,
}

impl Outcome {
    pub fn bit(self) -> usize {
        match self {
            Outcome::Zero => 0,
            Outcome::One => 1,
        }
    }
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(dim));
    }
    Ok(dim.trailing_zeros() as usize)
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Bit position of `site` inside a basis index of an `n_sites` register.
#[inline]
pub fn site_bit(site: usize, n_sites: usize) -> usize {
    n_sites - 1 - site
}

/// Basis index of the state with excitations on exactly `sites`.
pub fn basis_index(sites: &[usize], n_sites: usize) -> usize {
    sites.iter().fold(0, |acc, &s| acc | (1 << site_bit(s, n_sites)))
}

/// A square operator on an n-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct QOperator {
    n_qubits: usize,
    m: DMatrix<C64>,
}

impl QOperator {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let n_qubits = qubits_for_dim(m.nrows())?;
        Ok(QOperator { n_qubits, m })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0));
        Self::new(m)
    }

    pub fn identity(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        QOperator { n_qubits, m: DMatrix::identity(d, d) }
    }

    pub fn zeros(n_qubits: usize) -> Self {
        let d = 1 << n_qubits;
        QOperator { n_qubits, m: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        QOperator { n_qubits: self.n_qubits, m: self.m.adjoint() }
    }

    pub fn scale(&self, c: f64) -> Self {
        QOperator { n_qubits: self.n_qubits, m: &self.m * C64::new(c, 0.0) }
    }

    pub fn kron(&self, other: &QOperator) -> Self {
        QOperator { n_qubits: self.n_qubits + other.n_qubits, m: self.m.kronecker(&other.m) }
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermitian_deviation(&self) -> f64 {
        max_abs(&(&self.m - self.m.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn commutator(&self, other: &QOperator) -> Result<QOperator> {
        self.check_dim(other.dim())?;
        let m = &self.m * &other.m - &other.m * &self.m;
        Ok(QOperator { n_qubits: self.n_qubits, m })
    }

    /// Largest entry modulus.
    pub fn max_norm(&self) -> f64 {
        max_abs(&self.m)
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if self.dim() != got {
            return Err(Error::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Nonzero entries as `(row, col, value)`, row-major.
    pub fn nonzeros(&self) -> Vec<(usize, usize, C64)> {
        let d = self.dim();
        let mut out = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let z = self.m[(i, j)];
                if z != ZERO {
                    out.push((i, j, z));
                }
            }
        }
        out
    }
}

impl<'a> Mul<&'a QOperator> for &'a QOperator {
    type Output = QOperator;
    fn mul(self, rhs: &QOperator) -> QOperator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        QOperator { n_qubits: self.n_qubits, m: &self.m * &rhs.m }
    }
}

impl<'a> Add<&'a QOperator> for &'a QOperator {
    type Output = QOperator;
    fn add(self, rhs: &QOperator) -> QOperator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        QOperator { n_qubits: self.n_qubits, m: &self.m + &rhs.m }
    }
}

impl<'a> Sub<&'a QOperator> for &'a QOperator {
    type Output = QOperator;
    fn sub(self, rhs: &QOperator) -> QOperator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        QOperator { n_qubits: self.n_qubits, m: &self.m - &rhs.m }
    }
}

pub fn pauli(kind: Pauli) -> QOperator {
    let m = match kind {
        Pauli::X => DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        Pauli::Y => DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        Pauli::Z => DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
        // |1⟩⟨0|
        Pauli::Plus => DMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]),
        // |0⟩⟨1|
        Pauli::Minus => DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]),
        Pauli::Identity => DMatrix::identity(2, 2),
    };
    QOperator { n_qubits: 1, m }
}

/// Excitation projector `|1⟩⟨1|` on a single site.
pub fn number_operator() -> QOperator {
    &pauli(Pauli::Plus) * &pauli(Pauli::Minus)
}

/// Places a single-site operator at `site` of an `n_sites` register.
pub fn embed(op: &QOperator, site: usize, n_sites: usize) -> Result<QOperator> {
    if op.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: op.dim() });
    }
    if site >= n_sites {
        return Err(Error::SiteOutOfRange { site, n_sites });
    }
    if n_sites > DENSE_QUBIT_LIMIT {
        return Err(Error::SizeOverflow { qubits: n_sites, limit: DENSE_QUBIT_LIMIT });
    }
    let d = 1usize << n_sites;
    let bit = site_bit(site, n_sites);
    let mut m = DMatrix::zeros(d, d);
    for col in 0..d {
        let b = (col >> bit) & 1;
        for a in 0..2 {
            let z = op.m[(a, b)];
            if z != ZERO {
                let row = (col & !(1 << bit)) | (a << bit);
                m[(row, col)] = z;
            }
        }
    }
    Ok(QOperator { n_qubits: n_sites, m })
}

/// Total excitation number `Σᵢ |1⟩⟨1|ᵢ` (diagonal).
pub fn excitation_number(n_sites: usize) -> QOperator {
    let d = 1usize << n_sites;
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        m[(k, k)] = C64::new(k.count_ones() as f64, 0.0);
    }
    QOperator { n_qubits: n_sites, m }
}

/// Normalised state vector on an n-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct QPureState {
    n_qubits: usize,
    v: DVector<C64>,
}

impl QPureState {
    pub fn new(v: DVector<C64>) -> Result<Self> {
        Self::with_tolerance(v, Tolerances::default().pure_norm)
    }

    pub fn with_tolerance(v: DVector<C64>, tol: f64) -> Result<Self> {
        let n_qubits = qubits_for_dim(v.len())?;
        let norm2 = v.norm_squared();
        if (norm2 - 1.0).abs() > tol {
            return Err(Error::InvalidDensity(format!("state norm² = {norm2}")));
        }
        Ok(QPureState { n_qubits, v })
    }

    /// Normalises `v` before wrapping it.
    pub fn normalized(v: DVector<C64>) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::InvalidDensity("zero vector".into()));
        }
        Self::new(v / C64::new(n, 0.0))
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut v = DVector::zeros(1 << n_qubits);
        v[index] = ONE;
        QPureState { n_qubits, v }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.v
    }

    pub fn kron(&self, other: &QPureState) -> QPureState {
        QPureState { n_qubits: self.n_qubits + other.n_qubits, v: self.v.kronecker(&other.v) }
    }

    pub fn inner(&self, other: &QPureState) -> C64 {
        self.v.dotc(&other.v)
    }

    pub fn fidelity(&self, other: &QPureState) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn expectation(&self, op: &QOperator) -> C64 {
        self.v.dotc(&(op.matrix() * &self.v))
    }

    pub fn to_density(&self) -> QDensity {
        QDensity { n_qubits: self.n_qubits, m: &self.v * self.v.adjoint() }
    }

    /// Projects `site` onto `outcome`; returns the probability and the
    /// renormalised post-measurement state.
    pub fn project(&self, site: usize, outcome: Outcome) -> Result<(f64, QPureState)> {
        if site >= self.n_qubits {
            return Err(Error::SiteOutOfRange { site, n_sites: self.n_qubits });
        }
        let bit = site_bit(site, self.n_qubits);
        let mut v = self.v.clone();
        for (k, z) in v.iter_mut().enumerate() {
            if (k >> bit) & 1 != outcome.bit() {
                *z = ZERO;
            }
        }
        let p = v.norm_squared();
        if p <= Tolerances::default().impossible_outcome {
            return Err(Error::ImpossibleOutcome(p));
        }
        let v = v / C64::new(p.sqrt(), 0.0);
        Ok((p, QPureState { n_qubits: self.n_qubits, v }))
    }

    /// Drops `site` from a state in which it is known to sit in `outcome`.
    pub fn remove_site(&self, site: usize, outcome: Outcome) -> Result<QPureState> {
        if site >= self.n_qubits || self.n_qubits < 2 {
            return Err(Error::SiteOutOfRange { site, n_sites: self.n_qubits });
        }
        let n = self.n_qubits;
        let bit = site_bit(site, n);
        let low_mask = (1usize << bit) - 1;
        let mut v = DVector::zeros(1 << (n - 1));
        for (k, z) in v.iter_mut().enumerate() {
            let full = ((k & !low_mask) << 1) | (outcome.bit() << bit) | (k & low_mask);
            *z = self.v[full];
        }
        QPureState::normalized(v)
    }
}

/// Density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QDensity {
    n_qubits: usize,
    m: DMatrix<C64>,
}

impl QDensity {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        Self::with_tolerances(m, &Tolerances::default())
    }

    pub fn with_tolerances(m: DMatrix<C64>, tol: &Tolerances) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(m)?;
        rho.validate(tol)?;
        Ok(rho)
    }

    /// Wraps a matrix after checking only its shape.
    pub fn from_matrix_unchecked(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
        }
        let n_qubits = qubits_for_dim(m.nrows())?;
        Ok(QDensity { n_qubits, m })
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let d = 1usize << n_qubits;
        QDensity { n_qubits, m: DMatrix::identity(d, d) / C64::new(d as f64, 0.0) }
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let herm = max_abs(&(&self.m - self.m.adjoint()));
        if herm > tol.density_hermitian {
            return Err(Error::InvalidDensity(format!("hermiticity deviation {herm:.3e}")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > tol.density_trace {
            return Err(Error::InvalidDensity(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue();
        if min < -tol.density_min_eigenvalue {
            return Err(Error::InvalidDensity(format!("minimum eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.m + self.m.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.m.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn expectation(&self, op: &QOperator) -> Result<C64> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: op.dim() });
        }
        // Tr(ρO) = Σ_ij ρ_ij O_ji
        let mut acc = ZERO;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += self.m[(i, j)] * op.m[(j, i)];
            }
        }
        Ok(acc)
    }

    /// Conjugates by a unitary: `U ρ U†`.
    pub fn conjugate(&self, u: &QOperator) -> Result<QDensity> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: u.dim() });
        }
        Ok(QDensity { n_qubits: self.n_qubits, m: &u.m * &self.m * u.m.adjoint() })
    }

    pub fn kron(&self, other: &QDensity) -> QDensity {
        QDensity { n_qubits: self.n_qubits + other.n_qubits, m: self.m.kronecker(&other.m) }
    }
}

/// Traces out every site not in `keep`. Kept sites retain their relative
/// order, so the result's site 0 is the smallest kept index.
pub fn partial_trace(rho: &QDensity, keep: &[usize]) -> Result<QDensity> {
    let n = rho.n_qubits();
    if keep.is_empty() {
        return Err(Error::InvalidKeepSet("empty keep set".into()));
    }
    let mut kept = keep.to_vec();
    kept.sort_unstable();
    if kept.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidKeepSet(format!("duplicate sites in {keep:?}")));
    }
    if let Some(&bad) = kept.iter().find(|&&s| s >= n) {
        return Err(Error::SiteOutOfRange { site: bad, n_sites: n });
    }
    let env: Vec<usize> = (0..n).filter(|s| !kept.contains(s)).collect();
    let nk = kept.len();
    let dk = 1usize << nk;
    let de = 1usize << env.len();

    let spread = |sub: usize, sites: &[usize]| -> usize {
        let ns = sites.len();
        sites
            .iter()
            .enumerate()
            .filter(|(k, _)| (sub >> (ns - 1 - k)) & 1 == 1)
            .fold(0, |acc, (_, &s)| acc | (1 << site_bit(s, n)))
    };
    let kept_idx: Vec<usize> = (0..dk).map(|a| spread(a, &kept)).collect();
    let env_idx: Vec<usize> = (0..de).map(|e| spread(e, &env)).collect();

    let mut out = DMatrix::zeros(dk, dk);
    for a in 0..dk {
        for b in 0..dk {
            let mut acc = ZERO;
            for &e in &env_idx {
                acc += rho.m[(kept_idx[a] | e, kept_idx[b] | e)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(QDensity { n_qubits: nk, m: out })
}

/// Eigen-decomposition of a Hermitian operator with ascending eigenvalues.
/// Columns of the returned matrix are the matching eigenvectors.
pub fn eig_hermitian(op: &QOperator) -> Result<(Vec<f64>, DMatrix<C64>)> {
    eig_hermitian_matrix(op.matrix(), Tolerances::default().density_hermitian)
}

pub(crate) fn eig_hermitian_matrix(m: &DMatrix<C64>, tol: f64) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let scale = max_abs(m).max(1.0);
    let dev = max_abs(&(m - m.adjoint()));
    if dev > tol * scale {
        return Err(Error::NotHermitian(dev));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Projective measurement of `site` in the computational basis.
pub fn project_measure(state: &QDensity, site: usize, outcome: Outcome) -> Result<(f64, QDensity)> {
    let n = state.n_qubits();
    if site >= n {
        return Err(Error::SiteOutOfRange { site, n_sites: n });
    }
    let bit = site_bit(site, n);
    let d = state.dim();
    let keep = |k: usize| (k >> bit) & 1 == outcome.bit();
    let p: f64 = (0..d).filter(|&k| keep(k)).map(|k| state.m[(k, k)].re).sum();
    if p <= Tolerances::default().impossible_outcome {
        return Err(Error::ImpossibleOutcome(p));
    }
    let inv = C64::new(1.0 / p, 0.0);
    let m = DMatrix::from_fn(d, d, |i, j| if keep(i) && keep(j) { state.m[(i, j)] * inv } else { ZERO });
    Ok((p.min(1.0), QDensity { n_qubits: n, m }))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_single() -> impl Strategy<Value = QOperator> {
        proptest::collection::vec(-1.0f64..1.0, 8).prop_map(|v| {
            let m = DMatrix::from_fn(2, 2, |i, j| C64::new(v[2 * i + j], v[4 + 2 * i + j]));
            QOperator::new(m).unwrap()
        })
    }

    fn arb_density(n: usize) -> impl Strategy<Value = QDensity> {
        let d = 1usize << n;
        proptest::collection::vec(-1.0f64..1.0, 2 * d * d).prop_map(move |v| {
            let a = DMatrix::from_fn(d, d, |i, j| C64::new(v[i * d + j], v[d * d + i * d + j]));
            let m = &a * a.adjoint();
            let tr = m.trace();
            QDensity::new(m / tr).unwrap()
        })
    }

    fn random_unitary(v: &[f64], d: usize) -> QOperator {
        // Q factor of a random complex matrix
        let a = DMatrix::from_fn(d, d, |i, j| C64::new(v[i * d + j], v[d * d + i * d + j]));
        QOperator::new(a.qr().q()).unwrap()
    }

    proptest! {
        #[test]
        fn embeddings_on_distinct_sites_commute(a in arb_single(), b in arb_single(), i in 0usize..4, j in 0usize..4) {
            prop_assume!(i != j);
            let ea = embed(&a, i, 4).unwrap();
            let eb = embed(&b, j, 4).unwrap();
            prop_assert!(ea.commutator(&eb).unwrap().max_norm() < 1e-12);
        }

        #[test]
        fn partial_trace_preserves_trace_and_hermiticity(rho in arb_density(3), mask in 1usize..8) {
            let keep: Vec<usize> = (0..3).filter(|k| mask >> k & 1 == 1).collect();
            let r = partial_trace(&rho, &keep).unwrap();
            prop_assert!((r.trace() - rho.trace()).abs() < 1e-10);
            prop_assert!((r.matrix() - r.matrix().adjoint()).norm() < 1e-12);
            if keep.len() == 3 {
                prop_assert_eq!(&r, &rho);
            }
        }

        #[test]
        fn measurement_probabilities_sum_to_one(rho in arb_density(3), site in 0usize..3) {
            let p0 = project_measure(&rho, site, Outcome::Zero).map(|r| r.0).unwrap_or(0.0);
            let p1 = project_measure(&rho, site, Outcome::One).map(|r| r.0).unwrap_or(0.0);
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-10);
        }

        #[test]
        fn eigenvalues_invariant_under_unitary_conjugation(
            rho in arb_density(2),
            v in proptest::collection::vec(-1.0f64..1.0, 32),
        ) {
            let u = random_unitary(&v, 4);
            let h = QOperator::new(rho.matrix().clone()).unwrap();
            let hu = &(&u * &h) * &u.adjoint();
            let (w1, _) = eig_hermitian(&h).unwrap();
            let (w2, _) = eig_hermitian(&hu).unwrap();
            for (a, b) in w1.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
