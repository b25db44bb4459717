//! Spin-star model: one central spin coupled to N outer spins by a flip-flop
//! interaction, `H = λ(σ₀₊J₋ + σ₀₋J₊)` with `J± = Σ_outer σ±`.
//!
//! The central spin is site 0 of the register, outer spins are sites 1..=N.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::qops::{site_bit, Outcome, QOperator, QPureState, DENSE_QUBIT_LIMIT};

/// Normalisation of the star coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StarConvention {
    /// `λ(σ₀₊J₋ + σ₀₋J₊)`; the analytic spectrum applies verbatim.
    #[default]
    Ladder,
    /// `λ(σ₀ₓΣσᵢₓ + σ₀ᵧΣσᵢᵧ)`, which is twice the ladder form.
    Pauli,
}

impl StarConvention {
    pub fn factor(self) -> f64 {
        match self {
            StarConvention::Ladder => 1.0,
            StarConvention::Pauli => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarSpec {
    pub n_outer: usize,
    pub coupling: f64,
    pub convention: StarConvention,
}

impl StarSpec {
    pub fn new(n_outer: usize, coupling: f64) -> Self {
        StarSpec { n_outer, coupling, convention: StarConvention::Ladder }
    }

    pub fn with_convention(mut self, convention: StarConvention) -> Self {
        self.convention = convention;
        self
    }

    fn effective_coupling(&self) -> f64 {
        self.coupling * self.convention.factor()
    }

    fn validate(&self) -> Result<()> {
        if self.n_outer == 0 {
            return Err(Error::InvalidSpec("star needs at least one outer spin".into()));
        }
        if !(self.coupling.is_finite() && self.coupling >= 0.0) {
            return Err(Error::InvalidSpec(format!("coupling must be finite and ≥ 0, got {}", self.coupling)));
        }
        if self.n_outer + 1 > DENSE_QUBIT_LIMIT {
            return Err(Error::SizeOverflow { qubits: self.n_outer + 1, limit: DENSE_QUBIT_LIMIT });
        }
        Ok(())
    }

    fn validate_positive(&self) -> Result<()> {
        self.validate()?;
        if self.coupling <= 0.0 {
            return Err(Error::InvalidSpec("ground states need a positive coupling".into()));
        }
        Ok(())
    }
}

pub fn build_star_hamiltonian(spec: &StarSpec) -> Result<QOperator> {
    spec.validate()?;
    let n = spec.n_outer + 1;
    let d = 1usize << n;
    let lambda = C64::new(spec.effective_coupling(), 0.0);
    let c = site_bit(0, n);
    let mut m = DMatrix::zeros(d, d);
    for k in 0..d {
        for outer in 1..n {
            let o = site_bit(outer, n);
            let (cb, ob) = ((k >> c) & 1, (k >> o) & 1);
            // σ₀₊σᵢ₋ and its conjugate both swap one excitation across the pair
            if cb != ob {
                let flipped = k ^ (1 << c) ^ (1 << o);
                m[(flipped, k)] += lambda;
            }
        }
    }
    QOperator::new(m)
}

/// One `(j, m, ±)` branch of the analytic spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumBranch {
    /// Twice the total outer angular momentum.
    pub two_j: u32,
    /// Twice the magnetic number of the `|0⟩|j,m⟩` component.
    pub two_m: i32,
    pub sign: i8,
    pub energy: f64,
    /// Number of independent spin-j multiplets among the N outer spins.
    pub multiplicity: usize,
}

impl SpectrumBranch {
    pub fn j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    pub fn m(&self) -> f64 {
        self.two_m as f64 / 2.0
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of spin-j multiplets when coupling `n` spin-1/2 sites.
pub fn multiplet_count(n: usize, two_j: u32) -> usize {
    let two_j = two_j as usize;
    if two_j > n || !(n - two_j).is_multiple_of(2) {
        return 0;
    }
    let k = (n - two_j) / 2;
    binomial(n, k) - if k == 0 { 0 } else { binomial(n, k - 1) }
}

/// Analytic spectrum `E = ±λ√((j+m)(j−m+1))` over every allowed `(j, m)`.
///
/// For each multiplet `m` runs over `−j..=j`; the `m = −j` branch pairs the two
/// uncoupled zero-energy states `|0⟩|j,−j⟩` and `|1⟩|j,j⟩`.
pub fn star_spectrum_analytic(spec: &StarSpec) -> Vec<SpectrumBranch> {
    let n = spec.n_outer;
    let lambda = spec.effective_coupling();
    let mut out = Vec::new();
    let mut two_j = n as u32;
    loop {
        let mult = multiplet_count(n, two_j);
        let mut two_m = -(two_j as i32);
        while two_m <= two_j as i32 {
            let j = two_j as f64 / 2.0;
            let m = two_m as f64 / 2.0;
            let e = lambda * ((j + m) * (j - m + 1.0)).max(0.0).sqrt();
            for sign in [-1i8, 1] {
                out.push(SpectrumBranch { two_j, two_m, sign, energy: sign as f64 * e, multiplicity: mult });
            }
            two_m += 2;
        }
        if two_j < 2 {
            break;
        }
        two_j -= 2;
    }
    out
}

/// Flattened, ascending eigenvalue multiset of the analytic spectrum.
pub fn analytic_eigenvalues(spec: &StarSpec) -> Vec<f64> {
    let mut v: Vec<f64> =
        star_spectrum_analytic(spec).iter().flat_map(|b| std::iter::repeat_n(b.energy, b.multiplicity)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Dicke state: equal superposition of all `n`-bit strings with `k` ones.
pub fn dicke_state(n: usize, k: usize) -> Result<QPureState> {
    if n == 0 || k > n {
        return Err(Error::InvalidSpec(format!("dicke state needs 0 ≤ k ≤ n, n ≥ 1 (n={n}, k={k})")));
    }
    if n > DENSE_QUBIT_LIMIT {
        return Err(Error::SizeOverflow { qubits: n, limit: DENSE_QUBIT_LIMIT });
    }
    let amp = C64::new(1.0 / (binomial(n, k) as f64).sqrt(), 0.0);
    let v = DVector::from_fn(1 << n, |idx, _| if idx.count_ones() as usize == k { amp } else { C64::new(0.0, 0.0) });
    QPureState::new(v)
}

/// A state `|j, m⟩` of the outer spins. Only the fully symmetric multiplet
/// `j = N/2` is constructed here, which is the one the ground states live in.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveState {
    pub two_j: u32,
    pub two_m: i32,
    pub state: QPureState,
}

impl CollectiveState {
    pub fn symmetric(n: usize, two_m: i32) -> Result<Self> {
        if two_m.unsigned_abs() as usize > n || (n as i32 + two_m) % 2 != 0 {
            return Err(Error::InvalidSpec(format!("m = {}/2 not allowed for {n} spins", two_m)));
        }
        let k = ((n as i32 + two_m) / 2) as usize;
        Ok(CollectiveState { two_j: n as u32, two_m, state: dicke_state(n, k)? })
    }
}

/// Collective spin operators `(S_z, S_+, S_-, S²)` of `n` spins with `S = σ/2`.
pub fn collective_operators(n: usize) -> Result<[QOperator; 4]> {
    use crate::qops::{embed, pauli, Pauli};
    let mut sz = QOperator::zeros(n);
    let mut sp = QOperator::zeros(n);
    let mut sm = QOperator::zeros(n);
    for i in 0..n {
        sz = &sz + &embed(&pauli(Pauli::Z), i, n)?;
        sp = &sp + &embed(&pauli(Pauli::Plus), i, n)?;
        sm = &sm + &embed(&pauli(Pauli::Minus), i, n)?;
    }
    // σ_z = +1 on |0⟩; the excitation |1⟩ is spin up, so S_z = −Σσ_z/2
    let sz = sz.scale(-0.5);
    let s2 = &(&(&sp * &sm) + &(&sm * &sp)).scale(0.5) + &(&sz * &sz);
    Ok([sz, sp, sm, s2])
}

fn star_eigenstate(n_outer: usize, two_m: i32) -> Result<QPureState> {
    let upper = CollectiveState::symmetric(n_outer, two_m)?;
    let lower = CollectiveState::symmetric(n_outer, two_m - 2)?;
    let zero = QPureState::basis(1, 0).kron(&upper.state);
    let one = QPureState::basis(1, 1).kron(&lower.state);
    let v = (zero.amplitudes() - one.amplitudes()) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    QPureState::new(v)
}

/// Ground states of the star. Odd N gives the single `m = 1/2` state; even N
/// gives the degenerate pair, `m = 0` first then `m = 1`.
pub fn ground_states(spec: &StarSpec) -> Result<Vec<QPureState>> {
    spec.validate_positive()?;
    let n = spec.n_outer;
    if n % 2 == 1 {
        Ok(vec![star_eigenstate(n, 1)?])
    } else {
        Ok(vec![star_eigenstate(n, 0)?, star_eigenstate(n, 2)?])
    }
}

/// Measures the central spin of the odd-N ground state and returns the outcome
/// probability with the resulting outer-spin state.
pub fn w_state_protocol(spec: &StarSpec, central_outcome: Outcome) -> Result<(f64, QPureState)> {
    spec.validate_positive()?;
    if spec.n_outer.is_multiple_of(2) {
        return Err(Error::DegenerateGroundState);
    }
    let ground = ground_states(spec)?.remove(0);
    let (p, post) = ground.project(0, central_outcome)?;
    Ok((p, post.remove_site(0, central_outcome)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qops::{eig_hermitian, excitation_number, partial_trace, project_measure};
    use approx::assert_abs_diff_eq;

    fn spectrum(spec: &StarSpec) -> Vec<f64> {
        eig_hermitian(&build_star_hamiltonian(spec).unwrap()).unwrap().0
    }

    #[test]
    fn single_outer_spin() {
        let w = spectrum(&StarSpec::new(1, 1.0));
        for (a, b) in w.iter().zip([-1.0, 0.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let g = ground_states(&StarSpec::new(1, 1.0)).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // (|01⟩ − |10⟩)/√2
        let singlet = DVector::from_vec(vec![0.0, s, -s, 0.0].into_iter().map(|x| C64::new(x, 0.0)).collect());
        assert_abs_diff_eq!(g[0].fidelity(&QPureState::new(singlet).unwrap()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn three_outer_spins() {
        let spec = StarSpec::new(3, 1.0);
        let w = spectrum(&spec);
        assert_eq!(w.len(), 16);
        assert_abs_diff_eq!(w[0], -2.0, epsilon = 1e-12);
        let allowed = [0.0, 1.0, -1.0, 3f64.sqrt(), -(3f64.sqrt()), 2.0, -2.0];
        for e in &w {
            assert!(allowed.iter().any(|a| (a - e).abs() < 1e-9), "unexpected eigenvalue {e}");
        }
        let b =
            star_spectrum_analytic(&spec).into_iter().find(|b| b.two_j == 3 && b.two_m == 1 && b.sign == 1).unwrap();
        assert_abs_diff_eq!(b.energy, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_coupling_is_zero_matrix() {
        let h = build_star_hamiltonian(&StarSpec::new(2, 0.0)).unwrap();
        assert_eq!(h.max_norm(), 0.0);
        assert!(ground_states(&StarSpec::new(2, 0.0)).is_err());
    }

    #[test]
    fn lowest_branch_is_zero() {
        for b in star_spectrum_analytic(&StarSpec::new(4, 1.3)) {
            if b.two_m == -(b.two_j as i32) {
                assert_eq!(b.energy, 0.0);
            }
        }
    }

    #[test]
    fn five_outer_spins_full_spectrum() {
        let spec = StarSpec::new(5, 2.0);
        let numeric = spectrum(&spec);
        let analytic = analytic_eigenvalues(&spec);
        assert_eq!(numeric.len(), 64);
        assert_eq!(analytic.len(), 64);
        for (a, b) in numeric.iter().zip(&analytic) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn pauli_convention_doubles_spectrum() {
        let ladder = spectrum(&StarSpec::new(3, 1.0));
        let pauli = spectrum(&StarSpec::new(3, 1.0).with_convention(StarConvention::Pauli));
        for (a, b) in ladder.iter().zip(&pauli) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-12);
        }
        // and matches σ₀ₓΣσᵢₓ + σ₀ᵧΣσᵢᵧ built from Pauli matrices directly
        use crate::qops::{embed, pauli as p, Pauli};
        let mut h = QOperator::zeros(4);
        for i in 1..4 {
            let xx = &embed(&p(Pauli::X), 0, 4).unwrap() * &embed(&p(Pauli::X), i, 4).unwrap();
            let yy = &embed(&p(Pauli::Y), 0, 4).unwrap() * &embed(&p(Pauli::Y), i, 4).unwrap();
            h = &h + &(&xx + &yy);
        }
        let built = build_star_hamiltonian(&StarSpec::new(3, 1.0).with_convention(StarConvention::Pauli)).unwrap();
        assert!((&h - &built).max_norm() < 1e-14);
    }

    #[test]
    fn dicke_examples() {
        let s3 = 1.0 / 3f64.sqrt();
        let d32 = dicke_state(3, 2).unwrap();
        for idx in [0b011, 0b101, 0b110] {
            assert_abs_diff_eq!(d32.amplitudes()[idx].re, s3, epsilon = 1e-15);
        }
        let d31 = dicke_state(3, 1).unwrap();
        for idx in [0b001, 0b010, 0b100] {
            assert_abs_diff_eq!(d31.amplitudes()[idx].re, s3, epsilon = 1e-15);
        }
        assert_eq!(dicke_state(4, 0).unwrap(), QPureState::basis(4, 0));
        assert!(dicke_state(3, 4).is_err());
    }

    #[test]
    fn collective_states_are_eigenstates() {
        for n in 1..=5usize {
            let [sz, _, _, s2] = collective_operators(n).unwrap();
            let mut two_m = -(n as i32);
            while two_m <= n as i32 {
                let c = CollectiveState::symmetric(n, two_m).unwrap();
                let j = n as f64 / 2.0;
                let v = c.state.amplitudes();
                let jz = sz.matrix() * v - v * C64::new(two_m as f64 / 2.0, 0.0);
                let jj = s2.matrix() * v - v * C64::new(j * (j + 1.0), 0.0);
                assert!(jz.norm() < 1e-10 && jj.norm() < 1e-10);
                two_m += 2;
            }
        }
    }

    #[test]
    fn ground_state_eq5_for_three() {
        let g = ground_states(&StarSpec::new(3, 1.0)).unwrap();
        assert_eq!(g.len(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2 / 3f64.sqrt();
        // |0⟩|3/2,1/2⟩ has central bit 0 and two outer excitations
        for idx in [0b0011, 0b0101, 0b0110] {
            assert_abs_diff_eq!(g[0].amplitudes()[idx].re, s, epsilon = 1e-15);
        }
        for idx in [0b1001, 0b1010, 0b1100] {
            assert_abs_diff_eq!(g[0].amplitudes()[idx].re, -s, epsilon = 1e-15);
        }
    }

    #[test]
    fn ground_states_have_minimal_energy() {
        for n in 1..=7 {
            let spec = StarSpec::new(n, 0.7);
            let h = build_star_hamiltonian(&spec).unwrap();
            let e0 = eig_hermitian(&h).unwrap().0[0];
            let gs = ground_states(&spec).unwrap();
            assert_eq!(gs.len(), if n % 2 == 1 { 1 } else { 2 });
            for g in &gs {
                assert_abs_diff_eq!(g.expectation(&h).re, e0, epsilon = 1e-9);
            }
            if gs.len() == 2 {
                assert_abs_diff_eq!(gs[0].inner(&gs[1]).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn excitation_number_commutes() {
        for n in 1..=6 {
            let h = build_star_hamiltonian(&StarSpec::new(n, 1.0)).unwrap();
            let nexc = excitation_number(n + 1);
            assert!(h.commutator(&nexc).unwrap().max_norm() < 1e-12);
        }
    }

    #[test]
    fn w_state_protocol_outcomes() {
        let spec = StarSpec::new(3, 1.0);
        let (p0, s0) = w_state_protocol(&spec, Outcome::Zero).unwrap();
        assert_abs_diff_eq!(p0, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s0.fidelity(&dicke_state(3, 2).unwrap()), 1.0, epsilon = 1e-12);
        let (p1, s1) = w_state_protocol(&spec, Outcome::One).unwrap();
        assert_abs_diff_eq!(p1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.fidelity(&dicke_state(3, 1).unwrap()), 1.0, epsilon = 1e-12);

        let (p, s) = w_state_protocol(&StarSpec::new(5, 1.0), Outcome::Zero).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fidelity(&dicke_state(5, 3).unwrap()), 1.0, epsilon = 1e-12);

        assert_eq!(w_state_protocol(&StarSpec::new(4, 1.0), Outcome::Zero), Err(Error::DegenerateGroundState));
    }

    #[test]
    fn density_measurement_matches_pure_protocol() {
        let g = ground_states(&StarSpec::new(3, 1.0)).unwrap().remove(0);
        let (p, post) = project_measure(&g.to_density(), 0, Outcome::Zero).unwrap();
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        let outer = partial_trace(&post, &[1, 2, 3]).unwrap();
        let w = dicke_state(3, 2).unwrap().to_density();
        assert!((outer.matrix() - w.matrix()).norm() < 1e-12);
    }

    #[test]
    fn multiplicities_cover_hilbert_space() {
        for n in 1..=10usize {
            let total: usize = (0..=n as u32).map(|tj| multiplet_count(n, tj) * (tj as usize + 1)).sum();
            assert_eq!(total, 1 << n);
        }
    }
}
