//! Dephasing master equation
//!
//! ```text
//! dρ/dt = −i[H, ρ] + Σᵢ Γ (σ_zⁱ ρ σ_zⁱ − ρ)
//! ```
//!
//! with one σ_z channel per site at rate `Γ = 1/T₂`. Because σ_z is diagonal
//! the dissipator multiplies `ρ_ab` by `−2Γ·popcount(a ⊕ b)`: coherences
//! between states that differ on k sites decay at rate `2kΓ`.
//!
//! Both the flip-flop Hamiltonian and the dephasing conserve excitation
//! number, so a state supported on the 0- and 1-excitation sectors stays
//! there. [`SectorState`] stores exactly that block and [`evolve_sector`]
//! integrates it at `O(n²)` cost, against `O(4ⁿ)` for [`evolve`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::chain::{ChainSpec, CouplingGraph};
use crate::error::{Error, Result};
use crate::ode::Dopri5;
use crate::qops::{site_bit, QDensity, QOperator, Tolerances, DENSE_QUBIT_LIMIT};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const NEG_I: C64 = C64 { re: 0.0, im: -1.0 };

pub const DEFAULT_T2_S: f64 = 1e-3;

/// Pure dephasing with a common `T₂` on every site. `T₂ = ∞` disables it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub t2_s: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { t2_s: DEFAULT_T2_S }
    }
}

impl NoiseSpec {
    pub fn new(t2_s: f64) -> Result<Self> {
        if t2_s.is_nan() || t2_s <= 0.0 {
            return Err(Error::InvalidSpec(format!("T2 must be positive or infinite, got {t2_s}")));
        }
        Ok(NoiseSpec { t2_s })
    }

    pub fn from_ms(t2_ms: f64) -> Result<Self> {
        Self::new(t2_ms * 1e-3)
    }

    pub fn noiseless() -> Self {
        NoiseSpec { t2_s: f64::INFINITY }
    }

    /// Per-site rate `Γ = 1/T₂` in 1/s.
    pub fn rate(&self) -> f64 {
        if self.t2_s.is_infinite() {
            0.0
        } else {
            1.0 / self.t2_s
        }
    }
}

/// Integration settings shared by the full and sector paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveConfig {
    /// End of the window, in integration units.
    pub t_end: f64,
    /// Number of equally spaced stored states, both ends included.
    pub n_samples: usize,
    /// Length of one integration time unit in seconds. The Hamiltonian must
    /// be expressed in radians per unit, e.g. `1/κ` for dimensionless `κt`.
    pub seconds_per_unit: f64,
    pub integrator: Dopri5,
    pub max_trace_drift: f64,
}

impl EvolveConfig {
    pub fn new(t_end: f64, n_samples: usize, seconds_per_unit: f64) -> Self {
        EvolveConfig { t_end, n_samples, seconds_per_unit, integrator: Dopri5::default(), max_trace_drift: 1e-6 }
    }

    pub fn with_integrator(mut self, integrator: Dopri5) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn sample_times(&self) -> Vec<f64> {
        sample_grid(0.0, self.t_end, self.n_samples)
    }

    fn gamma(&self, noise: &NoiseSpec) -> f64 {
        noise.rate() * self.seconds_per_unit
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidSpec(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidSpec("need at least two samples".into()));
        }
        if !(self.seconds_per_unit.is_finite() && self.seconds_per_unit > 0.0) {
            return Err(Error::InvalidSpec("seconds_per_unit must be positive".into()));
        }
        Ok(())
    }
}

pub fn sample_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t0];
    }
    (0..n).map(|k| if k + 1 == n { t1 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 }).collect()
}

/// State restricted to the vacuum ⊕ single-excitation span.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorState {
    /// Vacuum population.
    pub block00: f64,
    /// `⟨vac|ρ|j⟩` for each single excitation `|j⟩`.
    pub block01: DVector<C64>,
    /// `⟨i|ρ|j⟩` within the single-excitation sector.
    pub block11: DMatrix<C64>,
}

impl SectorState {
    pub fn n_sites(&self) -> usize {
        self.block01.len()
    }

    pub fn trace(&self) -> f64 {
        self.block00 + self.block11.trace().re
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        let tr = self.trace();
        if (tr - 1.0).abs() > tol.density_trace {
            return Err(Error::InvalidDensity(format!("sector trace {tr}")));
        }
        let b = &self.block11;
        let herm = (b - b.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > tol.density_hermitian {
            return Err(Error::InvalidDensity(format!("block11 hermiticity deviation {herm:.3e}")));
        }
        // PSD of the full (1+n)×(1+n) block
        let full = self.compact_matrix();
        let h = (&full + full.adjoint()) * C64::new(0.5, 0.0);
        let min = nalgebra::SymmetricEigen::new(h).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -tol.density_min_eigenvalue {
            return Err(Error::InvalidDensity(format!("sector minimum eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// The `(1+n)×(1+n)` matrix on `span{vac, e_0, …, e_{n−1}}`.
    pub fn compact_matrix(&self) -> DMatrix<C64> {
        let n = self.n_sites();
        DMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
            (0, 0) => C64::new(self.block00, 0.0),
            (0, j) => self.block01[j - 1],
            (i, 0) => self.block01[i - 1].conj(),
            (i, j) => self.block11[(i - 1, j - 1)],
        })
    }

    pub fn to_density(&self) -> Result<QDensity> {
        let n = self.n_sites();
        if n > DENSE_QUBIT_LIMIT {
            return Err(Error::SizeOverflow { qubits: n, limit: DENSE_QUBIT_LIMIT });
        }
        let d = 1usize << n;
        let idx = |j: usize| 1usize << site_bit(j, n);
        let mut m = DMatrix::zeros(d, d);
        m[(0, 0)] = C64::new(self.block00, 0.0);
        for j in 0..n {
            m[(0, idx(j))] = self.block01[j];
            m[(idx(j), 0)] = self.block01[j].conj();
            for k in 0..n {
                m[(idx(j), idx(k))] = self.block11[(j, k)];
            }
        }
        QDensity::from_matrix_unchecked(m)
    }

    /// Extracts the sector block, failing if ρ has weight elsewhere.
    pub fn from_density(rho: &QDensity) -> Result<Self> {
        let n = rho.n_qubits();
        let m = rho.matrix();
        let d = rho.dim();
        let mut outside = 0.0f64;
        for a in 0..d {
            for b in 0..d {
                if a.count_ones() > 1 || b.count_ones() > 1 {
                    outside = outside.max(m[(a, b)].norm());
                }
            }
        }
        if outside > 1e-12 {
            return Err(Error::OutsideSectorSpan(outside));
        }
        let idx = |j: usize| 1usize << site_bit(j, n);
        Ok(SectorState {
            block00: m[(0, 0)].re,
            block01: DVector::from_fn(n, |j, _| m[(0, idx(j))]),
            block11: DMatrix::from_fn(n, n, |j, k| m[(idx(j), idx(k))]),
        })
    }

    /// Reduced state of local sites `a < b`, in the basis `|q_a q_b⟩`.
    pub fn pair_state(&self, a: usize, b: usize) -> Result<QDensity> {
        let n = self.n_sites();
        if a >= n || b >= n || a == b {
            return Err(Error::InvalidKeepSet(format!("pair ({a}, {b}) in {n} sites")));
        }
        let (a, b) = (a.min(b), a.max(b));
        let bl = &self.block11;
        let rest: f64 = (0..n).filter(|&j| j != a && j != b).map(|j| bl[(j, j)].re).sum();
        let mut m = DMatrix::zeros(4, 4);
        // |00⟩, |01⟩ (b excited), |10⟩ (a excited), |11⟩
        m[(0, 0)] = C64::new(self.block00 + rest, 0.0);
        m[(0, 1)] = self.block01[b];
        m[(0, 2)] = self.block01[a];
        m[(1, 0)] = self.block01[b].conj();
        m[(2, 0)] = self.block01[a].conj();
        m[(1, 1)] = bl[(b, b)];
        m[(2, 2)] = bl[(a, a)];
        m[(1, 2)] = bl[(b, a)];
        m[(2, 1)] = bl[(a, b)];
        QDensity::from_matrix_unchecked(m)
    }

    fn pack(&self) -> Vec<C64> {
        let n = self.n_sites();
        let mut y = Vec::with_capacity(1 + n + n * n);
        y.push(C64::new(self.block00, 0.0));
        y.extend(self.block01.iter());
        for i in 0..n {
            for j in 0..n {
                y.push(self.block11[(i, j)]);
            }
        }
        y
    }

    fn unpack(y: &[C64], n: usize) -> Self {
        SectorState {
            block00: y[0].re,
            block01: DVector::from_fn(n, |j, _| y[1 + j]),
            block11: DMatrix::from_fn(n, n, |i, j| y[1 + n + i * n + j]),
        }
    }
}

/// `|+⟩` on the left register, every other surviving site in `|0⟩`.
pub fn initial_transfer_sector(spec: &ChainSpec) -> Result<SectorState> {
    spec.validate()?;
    let n = spec.surviving_sites().len();
    let mut block01 = DVector::zeros(n);
    block01[0] = C64::new(0.5, 0.0);
    let mut block11 = DMatrix::zeros(n, n);
    block11[(0, 0)] = C64::new(0.5, 0.0);
    Ok(SectorState { block00: 0.5, block01, block11 })
}

pub fn initial_transfer_state(spec: &ChainSpec) -> Result<QDensity> {
    initial_transfer_sector(spec)?.to_density()
}

/// `−2·popcount(a ⊕ b)`: dissipator weights per unit rate.
fn dephasing_weights(d: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            w.push(-2.0 * (a ^ b).count_ones() as f64);
        }
    }
    w
}

struct FullGenerator {
    d: usize,
    h: Vec<(usize, usize, C64)>,
    weights: Vec<f64>,
    gamma: f64,
}

impl FullGenerator {
    fn new(h: &QOperator, gamma: f64) -> Self {
        let d = h.dim();
        FullGenerator { d, h: h.nonzeros(), weights: dephasing_weights(d), gamma }
    }

    /// Row-major `ρ` in, row-major `dρ/dt` out.
    fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.d;
        for (o, (r, w)) in out.iter_mut().zip(rho.iter().zip(&self.weights)) {
            *o = r * (self.gamma * w);
        }
        for &(r, c, v) in &self.h {
            let v = v * NEG_I;
            // −i Hρ: row r gets v·ρ[c, :]
            for j in 0..d {
                out[r * d + j] += v * rho[c * d + j];
            }
            // +i ρH: column c gets ρ[:, r]·H[r, c]
            for i in 0..d {
                out[i * d + c] -= v * rho[i * d + r];
            }
        }
    }
}

/// Right-hand side of the master equation for `H` (rad per unit time) and
/// per-site rate `gamma` (per unit time).
pub fn lindblad_rhs(rho: &QDensity, h: &QOperator, gamma: f64) -> Result<DMatrix<C64>> {
    if h.dim() != rho.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: h.dim() });
    }
    let d = rho.dim();
    let gen = FullGenerator::new(h, gamma);
    let flat: Vec<C64> = (0..d * d).map(|k| rho.matrix()[(k / d, k % d)]).collect();
    let mut out = vec![ZERO; d * d];
    gen.apply(&flat, &mut out);
    Ok(DMatrix::from_fn(d, d, |i, j| out[i * d + j]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryStates {
    Full(Vec<QDensity>),
    Sector(Vec<SectorState>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Sample times in integration units.
    pub times: Vec<f64>,
    pub seconds_per_unit: f64,
    /// Original site index of each register qubit.
    pub sites: Vec<usize>,
    pub states: TrajectoryStates,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times_s(&self) -> Vec<f64> {
        self.times.iter().map(|t| t * self.seconds_per_unit).collect()
    }

    pub fn local_index(&self, site: usize) -> Result<usize> {
        self.sites
            .iter()
            .position(|&s| s == site)
            .ok_or_else(|| Error::InvalidKeepSet(format!("site {site} is not present")))
    }

    pub fn density(&self, k: usize) -> Result<QDensity> {
        match &self.states {
            TrajectoryStates::Full(v) => Ok(v[k].clone()),
            TrajectoryStates::Sector(v) => v[k].to_density(),
        }
    }

    /// Two-site reduced state at sample `k`; sites are original indices.
    pub fn pair_state(&self, k: usize, a: usize, b: usize) -> Result<QDensity> {
        let (la, lb) = (self.local_index(a)?, self.local_index(b)?);
        match &self.states {
            TrajectoryStates::Full(v) => crate::qops::partial_trace(&v[k], &[la, lb]),
            TrajectoryStates::Sector(v) => v[k].pair_state(la, lb),
        }
    }
}

fn check_trace(t: f64, trace: f64, max: f64) -> Result<()> {
    let drift = (trace - 1.0).abs();
    if drift > max {
        return Err(Error::TraceDrift { t, drift });
    }
    Ok(())
}

/// Full-space integration. `h` is in radians per integration unit.
pub fn evolve(rho0: &QDensity, h: &QOperator, noise: &NoiseSpec, cfg: &EvolveConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let times = cfg.sample_times();
    let states = evolve_full_at(rho0, h, cfg.gamma(noise), 0.0, &times, cfg)?;
    Ok(Trajectory {
        times,
        seconds_per_unit: cfg.seconds_per_unit,
        sites: (0..rho0.n_qubits()).collect(),
        states: TrajectoryStates::Full(states),
    })
}

/// Full-space states at arbitrary ascending `times`, starting from `rho0` at `t0`.
pub fn evolve_full_at(
    rho0: &QDensity,
    h: &QOperator,
    gamma: f64,
    t0: f64,
    times: &[f64],
    cfg: &EvolveConfig,
) -> Result<Vec<QDensity>> {
    if h.dim() != rho0.dim() {
        return Err(Error::DimensionMismatch { expected: rho0.dim(), got: h.dim() });
    }
    if !h.is_hermitian(Tolerances::default().hamiltonian_hermitian * h.max_norm().max(1.0)) {
        return Err(Error::NotHermitian(h.hermitian_deviation()));
    }
    let d = rho0.dim();
    let gen = FullGenerator::new(h, gamma);
    let y0: Vec<C64> = (0..d * d).map(|k| rho0.matrix()[(k / d, k % d)]).collect();
    let mut out = Vec::with_capacity(times.len());
    cfg.integrator.integrate(
        |_, y, dy| gen.apply(y, dy),
        t0,
        &y0,
        times,
        |_, t, y| {
            let trace: f64 = (0..d).map(|k| y[k * d + k].re).sum();
            check_trace(t, trace, cfg.max_trace_drift)?;
            out.push(QDensity::from_matrix_unchecked(DMatrix::from_fn(d, d, |i, j| y[i * d + j]))?);
            Ok(())
        },
    )?;
    Ok(out)
}

struct SectorGenerator {
    n: usize,
    h: DMatrix<C64>,
    gamma: f64,
}

impl SectorGenerator {
    fn apply(&self, y: &[C64], out: &mut [C64]) {
        let n = self.n;
        let g = self.gamma;
        out[0] = ZERO;
        let v = &y[1..1 + n];
        let b = &y[1 + n..];
        // dv_j = i Σ_k v_k h_kj − 2Γ v_j
        for j in 0..n {
            let mut acc = ZERO;
            for k in 0..n {
                acc += v[k] * self.h[(k, j)];
            }
            out[1 + j] = C64::new(-acc.im, acc.re) - v[j] * (2.0 * g);
        }
        // dB = −i(hB − Bh) − 4Γ·offdiag(B)
        let ob = &mut out[1 + n..];
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.h[(i, k)] * b[k * n + j] - b[i * n + k] * self.h[(k, j)];
                }
                let mut val = acc * NEG_I;
                if i != j {
                    val -= b[i * n + j] * (4.0 * g);
                }
                ob[i * n + j] = val;
            }
        }
    }
}

/// Sector integration driven by a coupling graph.
pub fn evolve_sector(
    rho0: &SectorState,
    graph: &CouplingGraph,
    noise: &NoiseSpec,
    cfg: &EvolveConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if rho0.n_sites() != graph.n_sites() {
        return Err(Error::DimensionMismatch { expected: graph.n_sites(), got: rho0.n_sites() });
    }
    let h = graph.hopping_matrix(1.0 / cfg.seconds_per_unit);
    let times = cfg.sample_times();
    let states = evolve_sector_at(rho0, &h, cfg.gamma(noise), 0.0, &times, cfg)?;
    Ok(Trajectory {
        times,
        seconds_per_unit: cfg.seconds_per_unit,
        sites: graph.sites.clone(),
        states: TrajectoryStates::Sector(states),
    })
}

/// Sector states at arbitrary ascending `times`, starting at `t0`. `hopping`
/// is the single-excitation Hamiltonian in radians per unit.
pub fn evolve_sector_at(
    rho0: &SectorState,
    hopping: &DMatrix<C64>,
    gamma: f64,
    t0: f64,
    times: &[f64],
    cfg: &EvolveConfig,
) -> Result<Vec<SectorState>> {
    let n = rho0.n_sites();
    if hopping.nrows() != n || hopping.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: hopping.nrows() });
    }
    let gen = SectorGenerator { n, h: hopping.clone(), gamma };
    let mut out = Vec::with_capacity(times.len());
    cfg.integrator.integrate(
        |_, y, dy| gen.apply(y, dy),
        t0,
        &rho0.pack(),
        times,
        |_, t, y| {
            let s = SectorState::unpack(y, n);
            check_trace(t, s.trace(), cfg.max_trace_drift)?;
            out.push(s);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Quantity evaluated along a trajectory. Site arguments are original
/// chain indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Identity,
    TotalExcitation,
    Excitation(usize),
    SigmaZ(usize),
    Operator(QOperator),
}

pub fn observable_expectation(traj: &Trajectory, obs: &Observable) -> Result<Vec<f64>> {
    let local = |s: usize| traj.local_index(s);
    let mut out = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let value = match (&traj.states, obs) {
            (TrajectoryStates::Sector(v), Observable::Identity) => v[k].trace(),
            (TrajectoryStates::Sector(v), Observable::TotalExcitation) => v[k].block11.trace().re,
            (TrajectoryStates::Sector(v), Observable::Excitation(s)) => {
                let j = local(*s)?;
                v[k].block11[(j, j)].re
            }
            (TrajectoryStates::Sector(v), Observable::SigmaZ(s)) => {
                let j = local(*s)?;
                v[k].trace() - 2.0 * v[k].block11[(j, j)].re
            }
            (_, obs) => {
                let rho = traj.density(k)?;
                let n = rho.n_qubits();
                let op = match obs {
                    Observable::Operator(op) => op.clone(),
                    Observable::Identity => QOperator::identity(n),
                    Observable::TotalExcitation => crate::qops::excitation_number(n),
                    Observable::Excitation(s) => crate::qops::embed(&crate::qops::number_operator(), local(*s)?, n)?,
                    Observable::SigmaZ(s) => {
                        crate::qops::embed(&crate::qops::pauli(crate::qops::Pauli::Z), local(*s)?, n)?
                    }
                };
                rho.expectation(&op)?.re
            }
        };
        out.push(value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_coupling_graph, build_geometry};
    use crate::qops::{embed, excitation_number, pauli, Pauli, QPureState};
    use approx::assert_abs_diff_eq;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    /// Brute-force Lindblad generator with explicit σ_z matrices.
    fn oracle_rhs(rho: &DMatrix<C64>, h: &DMatrix<C64>, gamma: f64) -> DMatrix<C64> {
        let n = rho.nrows().trailing_zeros() as usize;
        let mut out = (h * rho - rho * h) * NEG_I;
        for i in 0..n {
            let l = embed(&pauli(Pauli::Z), i, n).unwrap().into_matrix();
            let ll = l.adjoint() * &l;
            out += (&l * rho * l.adjoint() - (&ll * rho + rho * &ll) * c(0.5)) * c(gamma);
        }
        out
    }

    #[test]
    fn rhs_trivial_cases() {
        let rho = QDensity::maximally_mixed(3);
        let r = lindblad_rhs(&rho, &QOperator::zeros(3), 0.0).unwrap();
        assert_eq!(r.norm(), 0.0);
        let spec = ChainSpec::new(1);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let h = g.dense_hamiltonian(g.kappa_angular).unwrap();
        let r = lindblad_rhs(&rho, &h, 0.3).unwrap();
        assert!(r.norm() < 1e-14);
        assert!(lindblad_rhs(&QDensity::maximally_mixed(2), &h, 0.1).is_err());
    }

    #[test]
    fn rhs_single_qubit_dephasing() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = QPureState::new(DVector::from_vec(vec![c(s), c(s)])).unwrap().to_density();
        let gamma = 0.7;
        let r = lindblad_rhs(&plus, &QOperator::zeros(1), gamma).unwrap();
        assert_abs_diff_eq!(r[(0, 1)].re, -2.0 * gamma * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r[(0, 0)].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_matches_brute_force_oracle() {
        let spec = ChainSpec::new(2).with_nnn(true);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let h = g.dense_hamiltonian(g.kappa_angular).unwrap();
        // a generic full-rank state
        let a =
            DMatrix::from_fn(16, 16, |i, j| C64::new(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i + 2 * j) % 5) as f64));
        let m = &a * a.adjoint();
        let tr = m.trace();
        let rho = QDensity::new(m / tr).unwrap();
        let got = lindblad_rhs(&rho, &h, 0.37).unwrap();
        let want = oracle_rhs(rho.matrix(), h.matrix(), 0.37);
        assert!((&got - &want).norm() < 1e-12);
        assert!(got.trace().norm() < 1e-12);
        assert!((&got - got.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn initial_states() {
        let rho = initial_transfer_state(&ChainSpec::new(3)).unwrap();
        assert_eq!(rho.dim(), 32);
        let m = rho.matrix();
        let nonzero: Vec<(usize, usize)> =
            (0..32).flat_map(|a| (0..32).map(move |b| (a, b))).filter(|&(a, b)| m[(a, b)].norm() > 0.0).collect();
        assert_eq!(nonzero, vec![(0, 0), (0, 16), (16, 0), (16, 16)]);
        for (a, b) in nonzero {
            assert_abs_diff_eq!(m[(a, b)].re, 0.5, epsilon = 1e-15);
        }
        let rho1 = initial_transfer_state(&ChainSpec::new(1)).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = QPureState::new(DVector::from_vec(vec![c(s), c(s)])).unwrap();
        let want = plus.kron(&QPureState::basis(2, 0)).to_density();
        assert!((rho1.matrix() - want.matrix()).norm() < 1e-15);

        let sec = initial_transfer_sector(&ChainSpec::new(6)).unwrap();
        assert_eq!(sec.block00, 0.5);
        assert_eq!(sec.block01.iter().filter(|z| z.norm() > 0.0).count(), 1);
        assert_eq!(sec.block01[0], c(0.5));
        assert_eq!(sec.block11[(0, 0)], c(0.5));
        assert_eq!(sec.block11.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn sector_round_trip_and_rejection() {
        let sec = initial_transfer_sector(&ChainSpec::new(2)).unwrap();
        let rho = sec.to_density().unwrap();
        assert_eq!(SectorState::from_density(&rho).unwrap(), sec);
        let two = QPureState::basis(4, 0b0011).to_density();
        assert!(matches!(SectorState::from_density(&two), Err(Error::OutsideSectorSpan(_))));
    }

    #[test]
    fn closed_form_single_qubit_dephasing() {
        let t2 = 1e-3;
        let noise = NoiseSpec::new(t2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rho0 = QPureState::new(DVector::from_vec(vec![c(s), c(s)])).unwrap().to_density();
        let cfg = EvolveConfig::new(3.0 * t2, 301, 1.0);
        let traj = evolve(&rho0, &QOperator::zeros(1), &noise, &cfg).unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            let got = traj.density(k).unwrap().matrix()[(0, 1)].re;
            let want = 0.5 * (-2.0 * t / t2).exp();
            assert!((got - want).abs() <= 1e-6 * want, "t={t}");
        }
    }

    #[test]
    fn unitary_limit_keeps_purity() {
        let spec = ChainSpec::new(2);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let h = g.dense_hamiltonian(g.kappa_angular).unwrap();
        let rho0 = initial_transfer_state(&spec).unwrap();
        let traj =
            evolve(&rho0, &h, &NoiseSpec::noiseless(), &EvolveConfig::new(20.0, 101, 1.0 / g.kappa_angular)).unwrap();
        for k in 0..traj.len() {
            assert!((traj.density(k).unwrap().purity() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noiseless_sector_is_schrodinger() {
        // M = 2: the single-excitation amplitudes evolve as exp(−iht)·e₀
        let spec = ChainSpec::new(2);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let h = g.hopping_matrix(g.kappa_angular);
        let cfg = EvolveConfig::new(10.0, 11, 1.0 / g.kappa_angular);
        let traj = evolve_sector(&initial_transfer_sector(&spec).unwrap(), &g, &NoiseSpec::noiseless(), &cfg).unwrap();
        let (w, v) = crate::qops::eig_hermitian_matrix(&h, 1e-12).unwrap();
        let TrajectoryStates::Sector(states) = &traj.states else { panic!() };
        for (t, s) in traj.times.iter().zip(states) {
            let phases =
                DMatrix::from_diagonal(&DVector::from_iterator(4, w.iter().map(|e| C64::new(0.0, -e * t).exp())));
            let u = &v * phases * v.adjoint();
            let psi = u.column(0).into_owned();
            let want = (&psi * psi.adjoint()) * c(0.5);
            assert!((&s.block11 - want).norm() < 1e-7);
        }
    }

    #[test]
    fn excitation_number_and_positivity_preserved() {
        let spec = ChainSpec::new(3).with_lost([2]);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let h = g.dense_hamiltonian(g.kappa_angular).unwrap();
        let noise = NoiseSpec::from_ms(0.05).unwrap();
        let cfg = EvolveConfig::new(30.0, 31, 1.0 / g.kappa_angular);
        let traj = evolve(&initial_transfer_state(&spec).unwrap(), &h, &noise, &cfg).unwrap();
        let nexc = observable_expectation(&traj, &Observable::Operator(excitation_number(4))).unwrap();
        for (k, v) in nexc.iter().enumerate() {
            assert!((v - 0.5).abs() < 1e-6);
            let rho = traj.density(k).unwrap();
            assert!(rho.min_eigenvalue() > -1e-7);
            assert!((rho.matrix() - rho.matrix().adjoint()).norm() < 1e-10);
        }
    }

    #[test]
    fn observables_at_start() {
        let spec = ChainSpec::new(3);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let cfg = EvolveConfig::new(5.0, 6, 1.0 / g.kappa_angular);
        let sec = evolve_sector(&initial_transfer_sector(&spec).unwrap(), &g, &NoiseSpec::default(), &cfg).unwrap();
        let full = evolve(
            &initial_transfer_state(&spec).unwrap(),
            &g.dense_hamiltonian(g.kappa_angular).unwrap(),
            &NoiseSpec::default(),
            &cfg,
        )
        .unwrap();
        for traj in [&sec, &full] {
            let id = observable_expectation(traj, &Observable::Identity).unwrap();
            assert!(id.iter().all(|v| (v - 1.0).abs() < 1e-9));
            assert_abs_diff_eq!(observable_expectation(traj, &Observable::TotalExcitation).unwrap()[0], 0.5);
            assert_abs_diff_eq!(observable_expectation(traj, &Observable::SigmaZ(4)).unwrap()[0], 1.0);
            assert_abs_diff_eq!(observable_expectation(traj, &Observable::SigmaZ(0)).unwrap()[0], 0.0);
        }
        let a = observable_expectation(&sec, &Observable::Excitation(4)).unwrap();
        let b = observable_expectation(&full, &Observable::Excitation(4)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!(observable_expectation(&sec, &Observable::Excitation(9)).is_err());
    }

    #[test]
    fn twenty_site_chain_runs() {
        let spec = ChainSpec::new(20);
        let g = build_coupling_graph(&spec, &build_geometry(&spec).unwrap()).unwrap();
        let cfg = EvolveConfig::new(40.0 * 22.0 / 5.0, 2001, 1.0 / g.kappa_angular);
        let traj = evolve_sector(&initial_transfer_sector(&spec).unwrap(), &g, &NoiseSpec::default(), &cfg).unwrap();
        let TrajectoryStates::Sector(states) = &traj.states else { panic!() };
        assert_eq!(states.len(), 2001);
        assert_eq!(states[0].n_sites(), 22);
        states.last().unwrap().validate(&Tolerances::default()).unwrap();
    }

    #[test]
    fn noise_spec() {
        assert_eq!(NoiseSpec::noiseless().rate(), 0.0);
        assert_eq!(NoiseSpec::default().rate(), 1000.0);
        assert!(NoiseSpec::new(0.0).is_err());
        assert!(NoiseSpec::new(-1.0).is_err());
    }
}
