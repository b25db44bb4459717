//! Chain geometry and the flip-flop Hamiltonian of a register–chain–register
//! line.
//!
//! Sites are numbered `0..=M+1`: site 0 and site `M+1` are the NV registers,
//! `1..=M` are the nitrogen chain spins. Couplings follow the dipolar law
//! `κ·(r/d)³`, with the register gap chosen so that the register coupling is
//! `δ`.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qops::{site_bit, QOperator, DENSE_QUBIT_LIMIT};
use crate::seed::derive_seed;

pub const DEFAULT_SPACING_NM: f64 = 10.0;
pub const DEFAULT_DELTA_RATIO: f64 = 0.9;
pub const DEFAULT_KAPPA_HZ: f64 = 26e3;
pub const MAX_RESAMPLES: usize = 100;

/// Gaussian spacing disorder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disorder {
    pub variance_nm2: f64,
    pub seed: u64,
    /// Also perturb the two register gaps.
    #[serde(default)]
    pub include_register_gaps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub m_chain: usize,
    pub spacing_nm: f64,
    pub delta_ratio: f64,
    pub kappa_hz: f64,
    pub include_nnn: bool,
    pub lost_sites: BTreeSet<usize>,
    pub disorder: Option<Disorder>,
}

impl ChainSpec {
    pub fn new(m_chain: usize) -> Self {
        ChainSpec {
            m_chain,
            spacing_nm: DEFAULT_SPACING_NM,
            delta_ratio: DEFAULT_DELTA_RATIO,
            kappa_hz: DEFAULT_KAPPA_HZ,
            include_nnn: true,
            lost_sites: BTreeSet::new(),
            disorder: None,
        }
    }

    pub fn with_lost<I: IntoIterator<Item = usize>>(mut self, lost: I) -> Self {
        self.lost_sites = lost.into_iter().collect();
        self
    }

    pub fn with_delta_ratio(mut self, delta_ratio: f64) -> Self {
        self.delta_ratio = delta_ratio;
        self
    }

    pub fn with_nnn(mut self, include_nnn: bool) -> Self {
        self.include_nnn = include_nnn;
        self
    }

    pub fn with_disorder(mut self, disorder: Disorder) -> Self {
        self.disorder = Some(disorder);
        self
    }

    /// Total site count including both registers, before losses.
    pub fn n_sites(&self) -> usize {
        self.m_chain + 2
    }

    pub fn right_register(&self) -> usize {
        self.m_chain + 1
    }

    /// Original indices of the sites that are present.
    pub fn surviving_sites(&self) -> Vec<usize> {
        (0..self.n_sites()).filter(|s| !self.lost_sites.contains(s)).collect()
    }

    /// `κ` as an angular frequency, rad/s.
    pub fn kappa_angular(&self) -> f64 {
        2.0 * PI * self.kappa_hz
    }

    /// Register–chain distance giving a register coupling of `δ`.
    pub fn register_gap_nm(&self) -> f64 {
        self.spacing_nm * (1.0 / self.delta_ratio).cbrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_chain == 0 {
            return Err(Error::InvalidSpec("chain needs at least one spin (M ≥ 1)".into()));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.spacing_nm) {
            return Err(Error::InvalidSpec(format!("spacing must be positive, got {}", self.spacing_nm)));
        }
        if !positive(self.kappa_hz) {
            return Err(Error::InvalidSpec(format!("kappa must be positive, got {}", self.kappa_hz)));
        }
        if !(positive(self.delta_ratio) && self.delta_ratio <= 1.0) {
            return Err(Error::InvalidSpec(format!("delta/kappa must lie in (0, 1], got {}", self.delta_ratio)));
        }
        if self.lost_sites.len() > 2 {
            return Err(Error::InvalidSpec("at most two lost spins are supported".into()));
        }
        if let Some(&s) = self.lost_sites.iter().find(|&&s| s == 0 || s > self.m_chain) {
            return Err(Error::InvalidSpec(format!("lost site {s} is not a chain spin in 1..={}", self.m_chain)));
        }
        let lost: Vec<usize> = self.lost_sites.iter().copied().collect();
        if lost.windows(2).any(|w| w[1] == w[0] + 1) {
            return Err(Error::InvalidSpec(format!("adjacent lost spins {lost:?} are not supported")));
        }
        if let Some(d) = &self.disorder {
            if !(d.variance_nm2.is_finite() && d.variance_nm2 >= 0.0) {
                return Err(Error::InvalidSpec(format!("disorder variance must be ≥ 0, got {}", d.variance_nm2)));
            }
        }
        Ok(())
    }
}

/// Collinear site positions in nm, registers included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub positions_nm: Vec<f64>,
    /// Non-positive spacings redrawn during disorder sampling.
    #[serde(default)]
    pub resamples: usize,
}

impl Geometry {
    pub fn distance_nm(&self, i: usize, j: usize) -> f64 {
        (self.positions_nm[j] - self.positions_nm[i]).abs()
    }

    pub fn spacings_nm(&self) -> Vec<f64> {
        self.positions_nm.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

fn draw_spacing(normal: &Normal<f64>, rng: &mut ChaCha8Rng, resamples: &mut usize) -> Result<f64> {
    for _ in 0..=MAX_RESAMPLES {
        let s = normal.sample(rng);
        if s > 0.0 {
            return Ok(s);
        }
        *resamples += 1;
    }
    Err(Error::Sampling(format!("no positive spacing after {MAX_RESAMPLES} resamples")))
}

pub fn build_geometry(spec: &ChainSpec) -> Result<Geometry> {
    spec.validate()?;
    let m = spec.m_chain;
    let gap = spec.register_gap_nm();
    let mut spacings = vec![spec.spacing_nm; m + 1];
    spacings[0] = gap;
    spacings[m] = gap;
    let mut resamples = 0;
    if let Some(d) = spec.disorder.filter(|d| d.variance_nm2 > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(d.seed, "chain-spacing", &[m as u64]));
        let chain_normal =
            Normal::new(spec.spacing_nm, d.variance_nm2.sqrt()).map_err(|e| Error::Sampling(e.to_string()))?;
        for s in spacings.iter_mut().take(m).skip(1) {
            *s = draw_spacing(&chain_normal, &mut rng, &mut resamples)?;
        }
        if d.include_register_gaps {
            let reg_normal = Normal::new(gap, d.variance_nm2.sqrt()).map_err(|e| Error::Sampling(e.to_string()))?;
            spacings[0] = draw_spacing(&reg_normal, &mut rng, &mut resamples)?;
            spacings[m] = draw_spacing(&reg_normal, &mut rng, &mut resamples)?;
        }
    }
    let mut positions_nm = Vec::with_capacity(m + 2);
    positions_nm.push(0.0);
    for s in spacings {
        positions_nm.push(positions_nm.last().unwrap() + s);
    }
    Ok(Geometry { positions_nm, resamples })
}

/// Dipolar coupling `κ·(r/d)³` in rad/s.
pub fn coupling_from_distance(d_nm: f64, spec: &ChainSpec) -> Result<f64> {
    if !(d_nm.is_finite() && d_nm > 0.0) {
        return Err(Error::InvalidSpec(format!("distance must be positive, got {d_nm}")));
    }
    Ok(spec.kappa_angular() * (spec.spacing_nm / d_nm).powi(3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Nearest,
    NextNearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Original site indices, `i < j`.
    pub i: usize,
    pub j: usize,
    pub kind: EdgeKind,
    pub distance_nm: f64,
    pub strength_rad_s: f64,
}

/// Couplings among the surviving sites.
///
/// Each spin couples to its nearest and (optionally) second-nearest *present*
/// neighbour, so a lost spin is bridged by its two neighbours. The interaction
/// range spans two lattice sites with next-nearest couplings and one without;
/// consecutive present spins further apart than that break the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingGraph {
    pub sites: Vec<usize>,
    pub kappa_angular: f64,
    pub edges: Vec<Edge>,
}

pub fn build_coupling_graph(spec: &ChainSpec, geometry: &Geometry) -> Result<CouplingGraph> {
    spec.validate()?;
    if geometry.positions_nm.len() != spec.n_sites() {
        return Err(Error::DimensionMismatch { expected: spec.n_sites(), got: geometry.positions_nm.len() });
    }
    let sites = spec.surviving_sites();
    let reach = if spec.include_nnn { 2 } else { 1 };
    if let Some(w) = sites.windows(2).find(|w| w[1] - w[0] > reach) {
        return Err(Error::DisconnectedGraph(format!("no coupling path between sites {} and {}", w[0], w[1])));
    }
    let mut edges = Vec::new();
    for a in 0..sites.len() {
        for (offset, kind) in [(1, EdgeKind::Nearest), (2, EdgeKind::NextNearest)] {
            if offset == 2 && !spec.include_nnn {
                continue;
            }
            if let Some(&j) = sites.get(a + offset) {
                let i = sites[a];
                let d = geometry.distance_nm(i, j);
                edges.push(Edge { i, j, kind, distance_nm: d, strength_rad_s: coupling_from_distance(d, spec)? });
            }
        }
    }
    Ok(CouplingGraph { sites, kappa_angular: spec.kappa_angular(), edges })
}

impl CouplingGraph {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    /// Position of an original site index within the surviving register.
    pub fn local_index(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.sites.len();
        if n == 0 {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for e in &self.edges {
            if let (Some(a), Some(b)) = (self.local_index(e.i), self.local_index(e.j)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra] = rb;
            }
        }
        let root = find(&mut parent, 0);
        (0..n).all(|k| find(&mut parent, k) == root)
    }

    /// Hopping matrix on the single-excitation sector, in units of `scale`
    /// rad/s (pass `1.0` for rad/s, `kappa_angular` for dimensionless).
    pub fn hopping_matrix(&self, scale: f64) -> DMatrix<C64> {
        let n = self.n_sites();
        let mut h = DMatrix::zeros(n, n);
        for e in &self.edges {
            let (a, b) = (self.local_index(e.i).unwrap(), self.local_index(e.j).unwrap());
            let s = C64::new(e.strength_rad_s / scale, 0.0);
            h[(a, b)] += s;
            h[(b, a)] += s;
        }
        h
    }

    /// Full-space Hamiltonian `Σ J_ij (σ₊ⁱσ₋ʲ + σ₋ⁱσ₊ʲ)` in units of `scale`.
    pub fn dense_hamiltonian(&self, scale: f64) -> Result<QOperator> {
        let n = self.n_sites();
        if n > DENSE_QUBIT_LIMIT {
            return Err(Error::SizeOverflow { qubits: n, limit: DENSE_QUBIT_LIMIT });
        }
        let d = 1usize << n;
        let mut m = DMatrix::zeros(d, d);
        for e in &self.edges {
            let bi = site_bit(self.local_index(e.i).unwrap(), n);
            let bj = site_bit(self.local_index(e.j).unwrap(), n);
            let s = C64::new(e.strength_rad_s / scale, 0.0);
            for k in 0..d {
                if ((k >> bi) & 1) != ((k >> bj) & 1) {
                    m[(k ^ (1 << bi) ^ (1 << bj), k)] += s;
                }
            }
        }
        QOperator::new(m)
    }

    pub fn to_json(&self, geometry: &Geometry) -> Result<String> {
        let doc = GeometryDocument { positions_nm: geometry.positions_nm.clone(), graph: self.clone() };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Inspection document: positions in nm, couplings in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDocument {
    pub positions_nm: Vec<f64>,
    pub graph: CouplingGraph,
}

impl GeometryDocument {
    /// Parses and checks internal consistency: increasing positions, edges
    /// between listed sites, and strengths following the stored distances.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GeometryDocument = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let p = &doc.positions_nm;
        if p.is_empty() || p.iter().any(|x| !x.is_finite()) || p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("positions must be finite and strictly increasing".into()));
        }
        let g = &doc.graph;
        if g.sites.iter().any(|&s| s >= p.len()) || g.sites.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sites must be increasing indices into positions".into()));
        }
        for e in &g.edges {
            if e.i >= e.j || !g.sites.contains(&e.i) || !g.sites.contains(&e.j) {
                return Err(Error::Config(format!("edge ({}, {}) references unknown sites", e.i, e.j)));
            }
            let d = p[e.j] - p[e.i];
            if (d - e.distance_nm).abs() > 1e-9 * d.max(1.0) {
                return Err(Error::Config(format!("edge ({}, {}) distance disagrees with positions", e.i, e.j)));
            }
        }
        // every edge obeys s = κ (r/d)³, so s·d³ is shared
        let moments: Vec<f64> = g.edges.iter().map(|e| e.strength_rad_s * e.distance_nm.powi(3)).collect();
        if moments.iter().any(|m| !(m.is_finite() && *m > 0.0))
            || moments.windows(2).any(|w| (w[1] - w[0]).abs() > 1e-9 * w[0])
        {
            return Err(Error::Config("edge strengths do not follow the r⁻³ law".into()));
        }
        if !(g.kappa_angular.is_finite() && g.kappa_angular > 0.0) {
            return Err(Error::Config("kappa_angular must be positive".into()));
        }
        Ok(doc)
    }
}

/// Dense Hamiltonian of the chain in rad/s, with the surviving-site map.
pub fn build_chain_hamiltonian(spec: &ChainSpec) -> Result<(QOperator, Vec<usize>)> {
    let geometry = build_geometry(spec)?;
    let graph = build_coupling_graph(spec, &geometry)?;
    Ok((graph.dense_hamiltonian(1.0)?, graph.sites))
}

/// `sin(π/2N) > 1/(M + 20√10/3)`: the outer registers of an N-branch star
/// with chains of length M stay far enough apart.
pub fn validate_star_geometry(n_outer: usize, m_chain: usize) -> bool {
    let lhs = (PI / (2.0 * n_outer as f64)).sin();
    let rhs = 1.0 / (m_chain as f64 + 20.0 * 10f64.sqrt() / 3.0);
    lhs > rhs
}

/// All `n_lost`-subsets of `1..=m_chain` with no two adjacent members, in
/// lexicographic order.
pub fn loss_configurations(m_chain: usize, n_lost: usize) -> Vec<Vec<usize>> {
    fn extend(start: usize, m: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for s in start..=m {
            cur.push(s);
            extend(s + 2, m, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n_lost == 0 {
        return vec![vec![]];
    }
    extend(1, m_chain, n_lost, &mut Vec::new(), &mut out);
    out
}
