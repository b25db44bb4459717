//! Two-qubit entanglement and the register–register E_m scan.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::chain::{build_coupling_graph, build_geometry, ChainSpec, CouplingGraph};
use crate::error::{Error, Result};
use crate::lindblad::{
    evolve, evolve_full_at, evolve_sector, evolve_sector_at, initial_transfer_sector, sample_grid, EvolveConfig,
    NoiseSpec, Trajectory, TrajectoryStates,
};
use crate::ode::Dopri5;
use crate::output::{Cell, Table};
use crate::qops::{eig_hermitian_matrix, QDensity, Tolerances, DENSE_QUBIT_LIMIT};

/// Eigenvalues of `√ρ ρ̃ √ρ` more negative than this are not rounding noise.
const CLAMP: f64 = 1e-10;

fn spin_flip(rho: &DMatrix<C64>) -> DMatrix<C64> {
    // σ_y⊗σ_y is the anti-diagonal [-1, 1, 1, -1] pattern up to sign: its
    // (i, 3−i) entries are (−1, 1, 1, −1)
    let s = [-1.0, 1.0, 1.0, -1.0];
    DMatrix::from_fn(4, 4, |i, j| rho[(3 - i, 3 - j)].conj() * (s[i] * s[j]))
}

/// Wootters concurrence of a two-qubit density matrix.
pub fn concurrence(rho: &QDensity) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::DimensionMismatch { expected: 4, got: rho.dim() });
    }
    rho.validate(&Tolerances::default())?;
    let m = rho.matrix();
    let (w, v) = eig_hermitian_matrix(m, 1e-10)?;
    let sq: Vec<f64> = w.iter().map(|&x| x.max(0.0).sqrt()).collect();
    let sqrt_rho = &v
        * DMatrix::from_fn(4, 4, |i, j| if i == j { C64::new(sq[i], 0.0) } else { C64::new(0.0, 0.0) })
        * v.adjoint();
    let r = &sqrt_rho * spin_flip(m) * &sqrt_rho;
    let (mu, _) = eig_hermitian_matrix(&r, 1e-8)?;
    let mut lam = Vec::with_capacity(4);
    for x in mu {
        if x < -CLAMP {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {x:.3e} in concurrence product")));
        }
        lam.push(x.max(0.0).sqrt());
    }
    lam.sort_by(|a, b| b.total_cmp(a));
    Ok((lam[0] - lam[1] - lam[2] - lam[3]).clamp(0.0, 1.0))
}

fn binary_entropy(x: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() };
    term(x) + term(1.0 - x)
}

/// `E_F(C) = h((1 + √(1−C²))/2)`, base-2 entropy.
pub fn eof_from_concurrence(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    binary_entropy((1.0 + (1.0 - c * c).sqrt()) / 2.0).clamp(0.0, 1.0)
}

pub fn eof(rho: &QDensity) -> Result<f64> {
    Ok(eof_from_concurrence(concurrence(rho)?))
}

/// Register pair (first and last site) at every stored sample.
pub fn register_pair_state(traj: &Trajectory) -> Result<Vec<QDensity>> {
    let (&a, &b) = match (traj.sites.first(), traj.sites.last()) {
        (Some(a), Some(b)) if a != b => (a, b),
        _ => return Err(Error::InvalidKeepSet("trajectory has fewer than two sites".into())),
    };
    (0..traj.len()).map(|k| traj.pair_state(k, a, b)).collect()
}

/// Dimensionless window `κt ∈ [0, 8(M+2)]`: several end-to-end transit times.
pub fn default_window(m_chain: usize) -> f64 {
    40.0 * (m_chain as f64 + 2.0) / 5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolutionMode {
    /// Sector reduction; exact for the transfer initial state.
    #[default]
    Sector,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    /// Window end in `κt`; `None` uses [`default_window`].
    pub t_end: Option<f64>,
    pub n_samples: usize,
    pub tau_tol: f64,
    /// Double the window once if the maximum lands in its last 5%.
    pub auto_extend: bool,
    pub mode: EvolutionMode,
    pub integrator: Dopri5,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            t_end: None,
            n_samples: 2001,
            tau_tol: 1e-4,
            auto_extend: true,
            mode: EvolutionMode::Sector,
            integrator: Dopri5::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub m_chain: usize,
    pub lost_sites: Vec<usize>,
    /// Argmax in `κt`.
    pub tau_star: f64,
    pub tau_star_s: f64,
    pub e_m: f64,
    pub concurrence: f64,
    /// Best value on the sample grid before refinement.
    pub coarse_max: f64,
    pub t_end: f64,
    pub extended: bool,
    /// False when the maximum sits on a window edge.
    pub interior: bool,
    pub seconds_per_unit: f64,
    /// `(κt, E_F)` on the sample grid.
    #[serde(skip)]
    pub curve: Vec<(f64, f64)>,
}

impl EmResult {
    pub fn curve_table(&self) -> Table {
        let mut t = Table::new(&["tau", "t_s", "e_f"], 1);
        for &(tau, e) in &self.curve {
            t.rows.push(vec![Cell::Float(tau), Cell::Float(tau * self.seconds_per_unit), Cell::Float(e)]);
        }
        t
    }
}

struct Integrand<'a> {
    graph: &'a CouplingGraph,
    noise: &'a NoiseSpec,
    cfg: EvolveConfig,
    mode: EvolutionMode,
}

impl Integrand<'_> {
    fn trajectory(&self) -> Result<Trajectory> {
        let sector = initial_transfer_sector_for(self.graph);
        match self.mode {
            EvolutionMode::Sector => evolve_sector(&sector, self.graph, self.noise, &self.cfg),
            EvolutionMode::Full => {
                let h = self.graph.dense_hamiltonian(self.graph.kappa_angular)?;
                let mut traj = evolve(&sector.to_density()?, &h, self.noise, &self.cfg)?;
                traj.sites = self.graph.sites.clone();
                Ok(traj)
            }
        }
    }

    /// Register concurrence at `times`, restarting from sample `k` of `traj`.
    fn concurrence_from(&self, traj: &Trajectory, k: usize, times: &[f64]) -> Result<Vec<f64>> {
        let t0 = traj.times[k];
        let gamma = self.noise.rate() * self.cfg.seconds_per_unit;
        let n = self.graph.n_sites();
        let pairs: Vec<QDensity> = match &traj.states {
            TrajectoryStates::Sector(v) => {
                let h = self.graph.hopping_matrix(self.graph.kappa_angular);
                evolve_sector_at(&v[k], &h, gamma, t0, times, &self.cfg)?
                    .iter()
                    .map(|s| s.pair_state(0, n - 1))
                    .collect::<Result<_>>()?
            }
            TrajectoryStates::Full(v) => {
                let h = self.graph.dense_hamiltonian(self.graph.kappa_angular)?;
                evolve_full_at(&v[k], &h, gamma, t0, times, &self.cfg)?
                    .iter()
                    .map(|r| crate::qops::partial_trace(r, &[0, n - 1]))
                    .collect::<Result<_>>()?
            }
        };
        pairs.iter().map(concurrence).collect()
    }
}

fn initial_transfer_sector_for(graph: &CouplingGraph) -> crate::lindblad::SectorState {
    // same state as `initial_transfer_sector`, sized from the graph
    let n = graph.n_sites();
    let mut s = crate::lindblad::SectorState {
        block00: 0.5,
        block01: nalgebra::DVector::zeros(n),
        block11: DMatrix::zeros(n, n),
    };
    s.block01[0] = C64::new(0.5, 0.0);
    s.block11[(0, 0)] = C64::new(0.5, 0.0);
    s
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximisation of `f` on `[a, b]` down to width `tol`.
/// Returns the best `(x, f(x))` seen.
pub(crate) fn golden_max<F>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut best = if f2 > f1 { (x2, f2) } else { (x1, f1) };
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
            if f1 > best.1 || (f1 == best.1 && x1 < best.0) {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    Ok(best)
}

pub fn max_entanglement_scan(spec: &ChainSpec, noise: &NoiseSpec) -> Result<EmResult> {
    max_entanglement_scan_with(spec, noise, &ScanConfig::default())
}

pub fn max_entanglement_scan_with(spec: &ChainSpec, noise: &NoiseSpec, cfg: &ScanConfig) -> Result<EmResult> {
    let geometry = build_geometry(spec)?;
    let graph = build_coupling_graph(spec, &geometry)?;
    if cfg.mode == EvolutionMode::Full && graph.n_sites() > DENSE_QUBIT_LIMIT {
        return Err(Error::SizeOverflow { qubits: graph.n_sites(), limit: DENSE_QUBIT_LIMIT });
    }
    debug_assert_eq!(initial_transfer_sector(spec)?, initial_transfer_sector_for(&graph));
    let seconds_per_unit = 1.0 / graph.kappa_angular;
    let mut t_end = cfg.t_end.unwrap_or_else(|| default_window(spec.m_chain));
    let mut extended = false;
    loop {
        let integrand = Integrand {
            graph: &graph,
            noise,
            cfg: EvolveConfig::new(t_end, cfg.n_samples, seconds_per_unit).with_integrator(cfg.integrator),
            mode: cfg.mode,
        };
        let traj = integrand.trajectory()?;
        let conc: Vec<f64> = register_pair_state(&traj)?.iter().map(concurrence).collect::<Result<_>>()?;
        // smallest maximising index
        let mut k = 0;
        for (i, &c) in conc.iter().enumerate() {
            if c > conc[k] {
                k = i;
            }
        }
        let n = conc.len();
        if cfg.auto_extend && !extended && k as f64 >= 0.95 * (n - 1) as f64 {
            t_end *= 2.0;
            extended = true;
            continue;
        }
        let coarse_c = conc[k];
        let (mut tau, mut c_best) = (traj.times[k], coarse_c);
        if coarse_c > 0.0 {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            let (x, c) = golden_max(
                |t| {
                    if t <= traj.times[lo] {
                        return Ok(conc[lo]);
                    }
                    Ok(integrand.concurrence_from(&traj, lo, &[t])?[0])
                },
                traj.times[lo],
                traj.times[hi],
                cfg.tau_tol,
            )?;
            if c > c_best {
                tau = x;
                c_best = c;
            }
        }
        let curve: Vec<(f64, f64)> =
            traj.times.iter().zip(&conc).map(|(&t, &c)| (t, eof_from_concurrence(c))).collect();
        return Ok(EmResult {
            m_chain: spec.m_chain,
            lost_sites: spec.lost_sites.iter().copied().collect(),
            tau_star: tau,
            tau_star_s: tau * seconds_per_unit,
            e_m: eof_from_concurrence(c_best),
            concurrence: c_best,
            coarse_max: eof_from_concurrence(coarse_c),
            t_end,
            extended,
            interior: k > 0 && k + 1 < n,
            seconds_per_unit,
            curve,
        });
    }
}

/// Register pair state at `tau` (κt) for the transfer protocol.
pub fn pair_state_at(spec: &ChainSpec, noise: &NoiseSpec, tau: f64) -> Result<QDensity> {
    let geometry = build_geometry(spec)?;
    let graph = build_coupling_graph(spec, &geometry)?;
    let cfg = EvolveConfig::new(tau.max(f64::MIN_POSITIVE), 2, 1.0 / graph.kappa_angular);
    let h = graph.hopping_matrix(graph.kappa_angular);
    let gamma = noise.rate() * cfg.seconds_per_unit;
    let s0 = initial_transfer_sector_for(&graph);
    let s = evolve_sector_at(&s0, &h, gamma, 0.0, &[tau], &cfg)?.remove(0);
    s.pair_state(0, graph.n_sites() - 1)
}

pub fn eof_series(traj: &Trajectory) -> Result<Vec<f64>> {
    register_pair_state(traj)?.iter().map(eof).collect()
}

/// Uniform grid helper mirroring the scan's sampling.
pub fn scan_times(spec: &ChainSpec, cfg: &ScanConfig) -> Vec<f64> {
    sample_grid(0.0, cfg.t_end.unwrap_or_else(|| default_window(spec.m_chain)), cfg.n_samples)
}
