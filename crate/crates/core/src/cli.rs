//! Command-line front end.
//!
//! Every parameter is a flat `key = value` entry. Values come from the
//! built-in defaults, then an optional `--config` file, then flags
//! (`--t2-ms 1` sets `t2_ms`). Keys a subcommand does not use are rejected.
//!
//! Exit codes: 0 success, 2 configuration error, 3 physics rejection (star
//! geometry, disconnected chain, degenerate ground state), 4 numerical
//! failure. Errors are a single JSON line on stderr.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::chain::{build_coupling_graph, build_geometry, validate_star_geometry, ChainSpec};
use crate::entangle::{default_window, max_entanglement_scan_with, EvolutionMode, ScanConfig};
use crate::error::{Error, ErrorClass, Result};
use crate::experiments::{self as ex, FitPoint, GradientSpec};
use crate::lindblad::{
    evolve, evolve_sector, initial_transfer_sector, observable_expectation, EvolveConfig, NoiseSpec, Observable,
};
use crate::output::{config_hash, write_json, Cell, Manifest, Table};
use crate::qops::{eig_hermitian, Outcome};
use crate::star::{
    build_star_hamiltonian, dicke_state, star_spectrum_analytic, w_state_protocol, StarConvention, StarSpec,
};

pub const OUT_ENV: &str = "SPINSTAR_OUT";
const DEFAULT_OUT: &str = "spinstar-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Spectrum,
    Wstate,
    Evolve,
    Scan,
    Sweep,
    Fit,
    Disorder,
    Loss,
    Gradient,
}

use Command::*;

impl Command {
    pub const ALL: [Command; 9] = [Spectrum, Wstate, Evolve, Scan, Sweep, Fit, Disorder, Loss, Gradient];

    pub fn name(self) -> &'static str {
        match self {
            Spectrum => "spectrum",
            Wstate => "wstate",
            Evolve => "evolve",
            Scan => "scan",
            Sweep => "sweep",
            Fit => "fit",
            Disorder => "disorder",
            Loss => "loss",
            Gradient => "gradient",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }

    fn about(self) -> &'static str {
        match self {
            Spectrum => "Star Hamiltonian spectrum: analytic (j, m) branches and numeric eigenvalues",
            Wstate => "Central-spin measurement on the odd-N star ground state",
            Evolve => "Dephased transfer dynamics of one register-chain-register branch",
            Scan => "E_F(tau) curve and maximal entanglement E_m for one chain",
            Sweep => "E_m versus chain length and T2",
            Fit => "Exponential fit E_m = c exp(-a (1/T2)^b M) over an (M, T2) grid",
            Disorder => "Monte Carlo E_m under Gaussian spacing disorder",
            Loss => "E_m averaged over one- and two-spin loss configurations",
            Gradient => "Magnetic-field-gradient sensing with distributed pairs",
        }
    }

    fn uses_chain(self) -> bool {
        !matches!(self, Spectrum | Wstate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Usize,
    Float,
    UsizeList,
    T2List,
    Bool,
    Mode,
    Convention,
    Outcome,
    FloatOrAuto,
}

struct KeyDef {
    name: &'static str,
    kind: Kind,
    help: &'static str,
    used_by: &'static [Command],
}

const CHAIN_CMDS: &[Command] = &[Evolve, Scan, Sweep, Fit, Disorder, Loss, Gradient];

const KEYS: &[KeyDef] = &[
    KeyDef { name: "n", kind: Kind::Usize, help: "number of outer spins N", used_by: &Command::ALL },
    KeyDef { name: "coupling", kind: Kind::Float, help: "star coupling lambda", used_by: &[Spectrum, Wstate] },
    KeyDef {
        name: "convention",
        kind: Kind::Convention,
        help: "star normalisation: ladder | pauli",
        used_by: &[Spectrum, Wstate],
    },
    KeyDef { name: "outcome", kind: Kind::Outcome, help: "central-spin outcome: 0 | 1 | both", used_by: &[Wstate] },
    KeyDef { name: "m", kind: Kind::UsizeList, help: "chain length(s) M", used_by: CHAIN_CMDS },
    KeyDef { name: "lost", kind: Kind::UsizeList, help: "lost chain sites (empty for none)", used_by: &[Evolve, Scan] },
    KeyDef { name: "n_lost", kind: Kind::UsizeList, help: "numbers of lost spins to study", used_by: &[Loss] },
    KeyDef { name: "t2_ms", kind: Kind::T2List, help: "dephasing time(s) T2 in ms, or inf", used_by: CHAIN_CMDS },
    KeyDef { name: "r_nm", kind: Kind::Float, help: "chain spacing r in nm", used_by: CHAIN_CMDS },
    KeyDef { name: "delta_ratio", kind: Kind::Float, help: "register coupling delta/kappa", used_by: CHAIN_CMDS },
    KeyDef {
        name: "kappa_khz",
        kind: Kind::Float,
        help: "chain coupling kappa in kHz at spacing r",
        used_by: CHAIN_CMDS,
    },
    KeyDef { name: "nnn", kind: Kind::Bool, help: "include next-nearest-neighbour couplings", used_by: CHAIN_CMDS },
    KeyDef { name: "samples", kind: Kind::Usize, help: "time samples per integration", used_by: CHAIN_CMDS },
    KeyDef {
        name: "t_end",
        kind: Kind::FloatOrAuto,
        help: "window end in kappa*t, or auto = 8(M+2)",
        used_by: CHAIN_CMDS,
    },
    KeyDef { name: "mode", kind: Kind::Mode, help: "state representation: sector | full", used_by: &[Evolve, Scan] },
    KeyDef { name: "variance_nm2", kind: Kind::Float, help: "spacing variance sigma^2 in nm^2", used_by: &[Disorder] },
    KeyDef { name: "runs", kind: Kind::Usize, help: "Monte Carlo runs per M", used_by: &[Disorder] },
    KeyDef { name: "g_x", kind: Kind::Float, help: "field gradient along x, T/m", used_by: &[Gradient] },
    KeyDef { name: "g_y", kind: Kind::Float, help: "field gradient along y, T/m", used_by: &[Gradient] },
    KeyDef { name: "d_nm", kind: Kind::Float, help: "register pair separation D in nm", used_by: &[Gradient] },
    KeyDef {
        name: "phase_span_pi",
        kind: Kind::Float,
        help: "sampled gamma*G*D*t range, in units of pi",
        used_by: &[Gradient],
    },
    KeyDef { name: "gradient_samples", kind: Kind::Usize, help: "coherence samples", used_by: &[Gradient] },
    KeyDef { name: "seed", kind: Kind::Usize, help: "top-level random seed", used_by: &Command::ALL },
];

fn default_value(cmd: Command, key: &str) -> &'static str {
    match (cmd, key) {
        (_, "n") => "3",
        (_, "coupling") => "1",
        (_, "convention") => "ladder",
        (_, "outcome") => "both",
        (Evolve | Scan, "m") => "3",
        (Sweep | Fit, "m") => "3,5,7,9,11",
        (Disorder, "m") => "3,5,7",
        (Loss, "m") => "3,4,5,6,7,8",
        (Gradient, "m") => "3,7",
        (_, "lost") => "",
        (_, "n_lost") => "1,2",
        (Fit, "t2_ms") => "0.5,1,2",
        (_, "t2_ms") => "1",
        (_, "r_nm") => "10",
        (_, "delta_ratio") => "0.9",
        (_, "kappa_khz") => "26",
        (_, "nnn") => "true",
        (_, "samples") => "2001",
        (_, "t_end") => "auto",
        (_, "mode") => "sector",
        (_, "variance_nm2") => "0.25",
        (_, "runs") => "100",
        (_, "g_x") => "10",
        (_, "g_y") => "0",
        (_, "d_nm") => "100",
        (_, "phase_span_pi") => "4",
        (_, "gradient_samples") => "401",
        (_, "seed") => "0",
        _ => "",
    }
}

fn keys_for(cmd: Command) -> impl Iterator<Item = &'static KeyDef> {
    KEYS.iter().filter(move |k| k.used_by.contains(&cmd))
}

/// Parses a flat `key = value` document. Blank lines and `#` comments are
/// ignored; duplicate keys are an error.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || !k.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            return Err(Error::Config(format!("line {}: invalid key `{k}`", lineno + 1)));
        }
        if out.iter().any(|(ek, _)| ek == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Comma-separated list of non-negative integers; empty input is an empty list.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("`{t}` is not a non-negative integer"))))
        .collect()
}

/// Comma-separated positive reals in ms; `inf` disables dephasing.
pub fn parse_t2_list(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| match t.trim() {
            "inf" | "infinity" => Ok(f64::INFINITY),
            t => t.parse::<f64>().map_err(|_| Error::Config(format!("`{t}` is not a T2 value"))),
        })
        .collect::<Result<_>>()?;
    if v.is_empty() || v.iter().any(|x| x.is_nan() || *x <= 0.0) {
        return Err(Error::Config(format!("T2 values must be positive, got `{s}`")));
    }
    Ok(v)
}

fn check_value(kind: Kind, key: &str, v: &str) -> Result<()> {
    let bad = || Error::Config(format!("invalid value `{v}` for `{key}`"));
    let finite = |x: f64| if x.is_finite() { Ok(()) } else { Err(bad()) };
    match kind {
        Kind::Usize => v.parse::<u64>().map(|_| ()).map_err(|_| bad()),
        Kind::Float => finite(v.parse::<f64>().map_err(|_| bad())?),
        Kind::FloatOrAuto if v == "auto" => Ok(()),
        Kind::FloatOrAuto => {
            let x = v.parse::<f64>().map_err(|_| bad())?;
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(bad())
            }
        }
        Kind::UsizeList => parse_usize_list(v).map(|_| ()),
        Kind::T2List => parse_t2_list(v).map(|_| ()),
        Kind::Bool => v.parse::<bool>().map(|_| ()).map_err(|_| bad()),
        Kind::Mode => matches!(v, "sector" | "full").then_some(()).ok_or_else(bad),
        Kind::Convention => matches!(v, "ladder" | "pauli").then_some(()).ok_or_else(bad),
        Kind::Outcome => matches!(v, "0" | "1" | "both").then_some(()).ok_or_else(bad),
    }
}

/// A fully resolved parameter set for one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub params: BTreeMap<String, String>,
    /// Output directory; not part of the echoed configuration.
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        let params =
            keys_for(command).map(|k| (k.name.to_string(), default_value(command, k.name).to_string())).collect();
        RunConfig { command, params, out_dir: None }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "out" {
            self.out_dir = Some(PathBuf::from(value));
            return Ok(());
        }
        let def = keys_for(self.command)
            .find(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}` for `{}`", self.command.name())))?;
        let value = value.trim();
        check_value(def.kind, key, value)?;
        self.params.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Defaults overlaid with a config document. A `command` entry, if
    /// present, must match.
    pub fn from_text(command: Command, text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new(command);
        for (k, v) in parse_config_text(text)? {
            if k == "command" {
                if Command::from_name(&v)? != command {
                    return Err(Error::Config(format!("config is for `{v}`, not `{}`", command.name())));
                }
                continue;
            }
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn from_map(command: Command, map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::new(command);
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Canonical document: `command` first, then keys in sorted order.
    pub fn to_text(&self) -> String {
        let mut s = format!("command = {}\n", self.command.name());
        for (k, v) in &self.params {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_text())
    }

    fn get(&self, key: &str) -> &str {
        self.params.get(key).map(String::as_str).unwrap_or("")
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.get(key).parse().map_err(|_| Error::Config(format!("invalid `{key}`")))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.get(key).parse().map_err(|_| Error::Config(format!("invalid `{key}`")))
    }

    fn seed(&self) -> Result<u64> {
        self.get("seed").parse().map_err(|_| Error::Config("invalid `seed`".into()))
    }

    fn ms(&self) -> Result<Vec<usize>> {
        let ms = parse_usize_list(self.get("m"))?;
        if ms.is_empty() || ms.contains(&0) {
            return Err(Error::Config("`m` needs at least one chain length ≥ 1".into()));
        }
        Ok(ms)
    }

    fn single_m(&self) -> Result<usize> {
        match self.ms()?.as_slice() {
            [m] => Ok(*m),
            _ => Err(Error::Config(format!("`{}` takes a single `m`", self.command.name()))),
        }
    }

    fn t2s_s(&self) -> Result<Vec<f64>> {
        Ok(parse_t2_list(self.get("t2_ms"))?.into_iter().map(|t| t * 1e-3).collect())
    }

    fn single_noise(&self) -> Result<NoiseSpec> {
        match self.t2s_s()?.as_slice() {
            [t] => NoiseSpec::new(*t),
            _ => Err(Error::Config(format!("`{}` takes a single `t2_ms`", self.command.name()))),
        }
    }

    fn base_chain(&self) -> Result<ChainSpec> {
        let mut spec = ChainSpec::new(1);
        spec.spacing_nm = self.f64("r_nm")?;
        spec.delta_ratio = self.f64("delta_ratio")?;
        spec.kappa_hz = self.f64("kappa_khz")? * 1e3;
        spec.include_nnn = self.get("nnn") == "true";
        Ok(spec)
    }

    fn scan_config(&self) -> Result<ScanConfig> {
        let samples = self.usize("samples")?;
        if samples < 3 {
            return Err(Error::Config("`samples` must be at least 3".into()));
        }
        let t_end = match self.get("t_end") {
            "auto" => None,
            v => Some(v.parse().map_err(|_| Error::Config("invalid `t_end`".into()))?),
        };
        let mode = if self.get("mode") == "full" { EvolutionMode::Full } else { EvolutionMode::Sector };
        Ok(ScanConfig { t_end, n_samples: samples, mode, ..ScanConfig::default() })
    }

    fn star(&self) -> Result<StarSpec> {
        let conv = if self.get("convention") == "pauli" { StarConvention::Pauli } else { StarConvention::Ladder };
        Ok(StarSpec::new(self.usize("n")?, self.f64("coupling")?).with_convention(conv))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

struct Emitter {
    dir: PathBuf,
    files: Vec<String>,
    notes: Vec<String>,
}

impl Emitter {
    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        t.write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        write_json(&self.dir.join(name), v)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

pub fn resolve_out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs a configuration and writes its outputs plus `manifest.json`.
pub fn run(cfg: &RunConfig, jobs: Option<usize>) -> Result<RunOutcome> {
    let start = Instant::now();
    for (k, v) in &cfg.params {
        let def = KEYS.iter().find(|d| d.name == k).ok_or_else(|| Error::Config(format!("unknown key `{k}`")))?;
        check_value(def.kind, k, v)?;
    }
    if cfg.command.uses_chain() {
        let n = cfg.usize("n")?;
        if n == 0 {
            return Err(Error::Config("`n` must be at least 1".into()));
        }
        for m in cfg.ms()? {
            if !validate_star_geometry(n, m) {
                return Err(Error::GeometryViolation { n_outer: n, m_chain: m });
            }
        }
    }
    let dir = resolve_out_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut em = Emitter { dir: dir.clone(), files: Vec::new(), notes: Vec::new() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cfg, &mut em))?;

    em.files.sort();
    let manifest = Manifest {
        command: cfg.command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed()?,
        config: cfg.params.clone(),
        config_hash: cfg.hash(),
        files: em.files,
        notes: em.notes,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    std::fs::write(dir.join("manifest.json"), manifest.to_json()? + "\n")
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    Ok(RunOutcome { out_dir: dir, manifest })
}

fn dispatch(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    match cfg.command {
        Spectrum => run_spectrum(cfg, em),
        Wstate => run_wstate(cfg, em),
        Evolve => run_evolve(cfg, em),
        Scan => run_scan(cfg, em),
        Sweep | Fit => run_sweep(cfg, em),
        Disorder => run_disorder(cfg, em),
        Loss => run_loss(cfg, em),
        Gradient => run_gradient(cfg, em),
    }
}

fn run_spectrum(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let spec = cfg.star()?;
    let mut t = Table::new(&["j", "m", "sign", "energy", "multiplicity"], 3);
    for b in star_spectrum_analytic(&spec) {
        t.push(vec![b.j().into(), b.m().into(), Cell::Int(b.sign as i64), b.energy.into(), b.multiplicity.into()])?;
    }
    em.table("spectrum.csv", &t)?;
    let (w, _) = eig_hermitian(&build_star_hamiltonian(&spec)?)?;
    let mut n = Table::new(&["index", "energy"], 1);
    for (k, e) in w.iter().enumerate() {
        n.push(vec![k.into(), (*e).into()])?;
    }
    em.table("spectrum_numeric.csv", &n)
}

fn run_wstate(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let spec = cfg.star()?;
    let n = spec.n_outer;
    let outcomes: Vec<Outcome> = match cfg.get("outcome") {
        "0" => vec![Outcome::Zero],
        "1" => vec![Outcome::One],
        _ => vec![Outcome::Zero, Outcome::One],
    };
    let mut t = Table::new(&["outcome", "probability", "dicke_excitations", "fidelity"], 1);
    for o in outcomes {
        let (p, state) = w_state_protocol(&spec, o)?;
        let k = if o == Outcome::Zero { n.div_ceil(2) } else { n / 2 };
        let f = state.fidelity(&dicke_state(n, k)?);
        t.push(vec![o.bit().into(), p.into(), k.into(), f.into()])?;
    }
    em.table("wstate.csv", &t)
}

fn chain_spec(cfg: &RunConfig) -> Result<ChainSpec> {
    Ok(ex::spec_for(&cfg.base_chain()?, cfg.single_m()?).with_lost(parse_usize_list(cfg.get("lost"))?))
}

fn run_evolve(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let spec = chain_spec(cfg)?;
    let noise = cfg.single_noise()?;
    let sc = cfg.scan_config()?;
    let geometry = build_geometry(&spec)?;
    let graph = build_coupling_graph(&spec, &geometry)?;
    std::fs::write(em.dir.join("geometry.json"), graph.to_json(&geometry)? + "\n")?;
    em.files.push("geometry.json".into());
    let ec = EvolveConfig::new(
        sc.t_end.unwrap_or_else(|| default_window(spec.m_chain)),
        sc.n_samples,
        1.0 / graph.kappa_angular,
    );
    let s0 = initial_transfer_sector(&spec)?;
    let mut traj = match sc.mode {
        EvolutionMode::Sector => evolve_sector(&s0, &graph, &noise, &ec)?,
        EvolutionMode::Full => evolve(&s0.to_density()?, &graph.dense_hamiltonian(graph.kappa_angular)?, &noise, &ec)?,
    };
    traj.sites = graph.sites.clone();
    let mut header = vec!["tau".to_string(), "t_s".into(), "trace".into()];
    header.extend(graph.sites.iter().map(|s| format!("n_{s}")));
    header.push("e_f".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&header_refs, 1);
    let trace = observable_expectation(&traj, &Observable::Identity)?;
    let pops: Vec<Vec<f64>> = graph
        .sites
        .iter()
        .map(|&s| observable_expectation(&traj, &Observable::Excitation(s)))
        .collect::<Result<_>>()?;
    let ef = crate::entangle::eof_series(&traj)?;
    for k in 0..traj.len() {
        let mut row: Vec<Cell> =
            vec![traj.times[k].into(), (traj.times[k] * traj.seconds_per_unit).into(), trace[k].into()];
        row.extend(pops.iter().map(|p| Cell::Float(p[k])));
        row.push(ef[k].into());
        t.push(row)?;
    }
    em.table("evolve.csv", &t)
}

#[derive(Serialize)]
struct ScanSummary<'a> {
    m: usize,
    lost: &'a [usize],
    t2_ms: &'a str,
    tau_star: f64,
    tau_star_s: f64,
    e_m: f64,
    concurrence: f64,
    coarse_max: f64,
    t_end: f64,
    extended: bool,
    interior: bool,
    seed: u64,
    spec: &'a ChainSpec,
}

fn run_scan(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let spec = chain_spec(cfg)?;
    let noise = cfg.single_noise()?;
    let r = max_entanglement_scan_with(&spec, &noise, &cfg.scan_config()?)?;
    em.table("fig3.csv", &ex::fig_curves(&[(noise.t2_s, r.clone())]))?;
    if !r.interior {
        em.notes.push("maximum lies on the edge of the scan window".into());
    }
    em.json(
        "scan.json",
        &ScanSummary {
            m: r.m_chain,
            lost: &r.lost_sites,
            t2_ms: cfg.get("t2_ms"),
            tau_star: r.tau_star,
            tau_star_s: r.tau_star_s,
            e_m: r.e_m,
            concurrence: r.concurrence,
            coarse_max: r.coarse_max,
            t_end: r.t_end,
            extended: r.extended,
            interior: r.interior,
            seed: cfg.seed()?,
            spec: &spec,
        },
    )
}

fn run_sweep(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let grid = ex::sweep_grid(&cfg.ms()?, &cfg.base_chain()?, &cfg.t2s_s()?, cfg.usize("n")?, &cfg.scan_config()?)?;
    em.table("fig4b.csv", &ex::fig4b(&grid))?;
    if cfg.command == Sweep {
        return em.table("fig4a.csv", &ex::fig_curves(&grid));
    }
    let pts: Vec<FitPoint> = grid.iter().map(|(t2, r)| FitPoint { m: r.m_chain, t2_s: *t2, e_m: r.e_m }).collect();
    let fit = ex::fit_exponential(&pts)?;
    if fit.excluded > 0 {
        em.notes.push(format!("{} non-positive E_m values excluded from the fit", fit.excluded));
    }
    em.json(
        "fit.json",
        &json!({ "a": fit.a, "b": fit.b, "prefactor": fit.prefactor, "residual": fit.residual,
        "n_points": fit.n_points, "excluded": fit.excluded, "t2_unit": "s" }),
    )
}

fn run_disorder(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let rows = ex::disorder_monte_carlo(
        &cfg.ms()?,
        &cfg.base_chain()?,
        cfg.usize("runs")?,
        cfg.f64("variance_nm2")?,
        &cfg.single_noise()?,
        cfg.seed()?,
        &cfg.scan_config()?,
    )?;
    em.table("fig6.csv", &ex::fig6(&rows))?;
    em.table("fig6_runs.csv", &ex::fig6_runs(&rows))
}

fn run_loss(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let base = cfg.base_chain()?;
    let noise = cfg.single_noise()?;
    let sc = cfg.scan_config()?;
    let mut reports = Vec::new();
    for m in cfg.ms()? {
        for k in parse_usize_list(cfg.get("n_lost"))? {
            let rep = ex::loss_study(m, k, &base, &noise, &sc)?;
            if rep.configs.is_empty() {
                em.notes.push(format!("M={m}, {k}-loss: zero configurations"));
            }
            reports.push(rep);
        }
    }
    em.table("fig7b.csv", &ex::fig7b(&reports))?;
    em.table("fig7cd.csv", &ex::fig7cd(&reports))?;
    em.table("loss.csv", &ex::loss_summary(&reports))
}

fn run_gradient(cfg: &RunConfig, em: &mut Emitter) -> Result<()> {
    let base = cfg.base_chain()?;
    let noise = cfg.single_noise()?;
    let sc = cfg.scan_config()?;
    let (gx, gy, d) = (cfg.f64("g_x")?, cfg.f64("g_y")?, cfg.f64("d_nm")?);
    let samples = cfg.usize("gradient_samples")?;
    if !(d > 0.0) || (gx == 0.0 && gy == 0.0) || samples < 8 {
        return Err(Error::Config("gradient needs d_nm > 0, a nonzero gradient and at least 8 samples".into()));
    }
    let grad = GradientSpec::with_phase_span(gx, gy, d, cfg.f64("phase_span_pi")? * PI, samples);
    let fit_json = |pair: &crate::qops::QDensity| -> Result<serde_json::Value> {
        let sx = ex::gradient_coherence(pair, &grad, (d, 0.0), (0.0, 0.0))?;
        let sy = ex::gradient_coherence(pair, &grad, (0.0, d), (0.0, 0.0))?;
        let one = |s: &[f64]| match ex::estimate_gradient(&grad.times, s, grad.gamma, d) {
            Ok(e) => json!({ "g": e.g, "amplitude": e.amplitude, "rms_residual": e.rms_residual }),
            Err(e) => json!({ "error": e.kind(), "message": e.to_string() }),
        };
        Ok(json!({ "x": one(&sx), "y": one(&sy) }))
    };
    let ideal = ex::ideal_pair();
    let mut series = vec![(0usize, 1.0, ex::gradient_coherence(&ideal, &grad, (d, 0.0), (0.0, 0.0))?)];
    let mut per_m = vec![json!({ "m": 0, "pair": "ideal", "estimate": fit_json(&ideal)? })];
    let pairs: Vec<_> = {
        use rayon::prelude::*;
        cfg.ms()?
            .par_iter()
            .map(|&m| Ok((m, ex::distributed_pair(m, &base, &noise, &sc)?)))
            .collect::<Result<Vec<_>>>()?
    };
    for (m, (r, pair)) in pairs {
        let s = ex::gradient_coherence(&pair, &grad, (d, 0.0), (0.0, 0.0))?;
        per_m.push(json!({ "m": m, "e_m": r.e_m, "tau_star": r.tau_star, "coherence_amplitude": 2.0 * pair.matrix()[(2, 1)].norm(),
            "estimate": fit_json(&pair)? }));
        series.push((m, r.e_m, s));
    }
    em.table("fig8b.csv", &ex::fig8b(&series, &grad))?;
    em.json("gradient.json", &json!({ "g_x": gx, "g_y": gy, "d_nm": d, "gamma": grad.gamma, "pairs": per_m }))
}

fn error_line(e: &Error) -> String {
    let class = match e.class() {
        ErrorClass::Config => "config",
        ErrorClass::Physics => "physics",
        ErrorClass::Numerical => "numerical",
    };
    json!({ "error": class, "kind": e.kind(), "message": e.to_string() }).to_string()
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Physics => 3,
        ErrorClass::Numerical => 4,
    }
}

fn build_cli() -> clap::Command {
    let mut app = clap::Command::new("spinstar")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Entanglement distribution over star networks of dipolar-coupled spin chains")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Command::ALL {
        let mut sub = clap::Command::new(cmd.name())
            .about(cmd.about())
            .arg(clap::Arg::new("config").long("config").value_name("FILE").help("flat key = value config file"))
            .arg(
                clap::Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .help(format!("output directory [default: ${OUT_ENV} or ./{DEFAULT_OUT}]")),
            )
            .arg(
                clap::Arg::new("jobs")
                    .long("jobs")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize))
                    .help("worker threads [default: all cores]"),
            );
        for k in keys_for(cmd) {
            sub = sub.arg(
                clap::Arg::new(k.name)
                    .long(k.name.replace('_', "-"))
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .help(format!("{} [default: {}]", k.help, default_value(cmd, k.name))),
            );
        }
        app = app.subcommand(sub);
    }
    app
}

/// Parses arguments into a configuration plus the requested worker count.
pub fn config_from_args<I, T>(args: I) -> std::result::Result<(RunConfig, Option<usize>), CliExit>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = build_cli().try_get_matches_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => CliExit::Info(e.to_string()),
            _ => CliExit::Fail(Error::Config(e.to_string().lines().next().unwrap_or("usage error").to_string())),
        }
    })?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let command = Command::from_name(name).map_err(CliExit::Fail)?;
    let mut cfg = match sub.get_one::<String>("config") {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliExit::Fail(Error::Config(format!("{path}: {e}"))))?;
            RunConfig::from_text(command, &text).map_err(CliExit::Fail)?
        }
        None => RunConfig::new(command),
    };
    for k in keys_for(command) {
        if let Some(v) = sub.get_one::<String>(k.name) {
            cfg.set(k.name, v).map_err(CliExit::Fail)?;
        }
    }
    if let Some(out) = sub.get_one::<String>("out") {
        cfg.out_dir = Some(PathBuf::from(out));
    }
    Ok((cfg, sub.get_one::<usize>("jobs").copied()))
}

#[derive(Debug)]
pub enum CliExit {
    /// Help or version text; exit 0.
    Info(String),
    Fail(Error),
}

pub fn main() -> i32 {
    match config_from_args(std::env::args_os()) {
        Err(CliExit::Info(text)) => {
            print!("{text}");
            0
        }
        Err(CliExit::Fail(e)) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
        Ok((cfg, jobs)) => match run(&cfg, jobs) {
            Ok(outcome) => {
                println!("{}", outcome.out_dir.join("manifest.json").display());
                0
            }
            Err(e) => {
                eprintln!("{}", error_line(&e));
                exit_code(&e)
            }
        },
    }
}

/// Reads back a run's manifest and rebuilds its configuration.
pub fn config_from_manifest(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let m = Manifest::from_json(&text)?;
    RunConfig::from_map(Command::from_name(&m.command)?, &m.config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_documents() {
        let kv = parse_config_text("# comment\n m = 3,5 \n\nt2_ms=1 # trailing\n").unwrap();
        assert_eq!(kv, vec![("m".to_string(), "3,5".to_string()), ("t2_ms".to_string(), "1".to_string())]);
        assert!(parse_config_text("m 3").is_err());
        assert!(parse_config_text("m = 1\nm = 2").is_err());
        assert!(parse_config_text("M = 1").is_err());
    }

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg = RunConfig::new(Disorder);
        assert_eq!(cfg.get("r_nm"), "10");
        assert_eq!(cfg.get("delta_ratio"), "0.9");
        assert_eq!(cfg.get("kappa_khz"), "26");
        assert_eq!(cfg.get("t2_ms"), "1");
        assert_eq!(cfg.get("runs"), "100");
        assert_eq!(cfg.get("variance_nm2"), "0.25");
        assert_eq!(cfg.get("n"), "3");
        assert!(RunConfig::from_text(Scan, "runs = 5").is_err());
        assert!(RunConfig::from_text(Scan, "bogus = 5").is_err());
        assert!(RunConfig::from_text(Scan, "m = x").is_err());
        assert!(RunConfig::from_text(Scan, "t2_ms = -1").is_err());
        assert!(RunConfig::from_text(Scan, "command = sweep").is_err());
        assert!(RunConfig::from_text(Scan, "command = scan\nt2_ms = inf").is_ok());
    }

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig::from_text(Loss, "m = 3,4\nn_lost = 2\nnnn = true").unwrap();
        assert_eq!(RunConfig::from_text(Loss, &cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::from_map(Loss, &cfg.params).unwrap(), cfg);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        std::fs::write(&path, "m = 5\nt2_ms = 2\n").unwrap();
        let (cfg, jobs) =
            config_from_args(["spinstar", "scan", "--config", path.to_str().unwrap(), "--t2-ms", "0.5", "--jobs", "2"])
                .unwrap();
        assert_eq!(cfg.get("m"), "5");
        assert_eq!(cfg.get("t2_ms"), "0.5");
        assert_eq!(jobs, Some(2));
        assert!(matches!(config_from_args(["spinstar", "scan", "--runs", "3"]), Err(CliExit::Fail(_))));
        assert!(matches!(config_from_args(["spinstar", "scan", "--help"]), Err(CliExit::Info(_))));
    }

    #[test]
    fn help_lists_every_key_with_default() {
        for cmd in Command::ALL {
            let mut app = build_cli();
            let help = app.find_subcommand_mut(cmd.name()).unwrap().render_long_help().to_string();
            for k in keys_for(cmd) {
                assert!(help.contains(&format!("--{}", k.name.replace('_', "-"))), "{} {}", cmd.name(), k.name);
                assert!(help.contains(&format!("[default: {}]", default_value(cmd, k.name))));
            }
        }
    }

    #[test]
    fn exit_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::GeometryViolation { n_outer: 38, m_chain: 3 }), 3);
        assert_eq!(exit_code(&Error::StepUnderflow(1.0)), 4);
        let line = error_line(&Error::DisconnectedGraph("a".into()));
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "physics");
    }
}
