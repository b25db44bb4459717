//! Entanglement distribution over a star network of dipolar-coupled spin chains.
//!
//! The crate is organised bottom-up:
//!
//! * [`qops`] holds the dense Hilbert-space primitives (Pauli matrices,
//!   embeddings, partial trace, Hermitian diagonalisation, measurement).
//! * [`star`] builds the spin-star Hamiltonian, its analytic spectrum, ground
//!   states and the W-state measurement protocol.
//! * [`chain`] turns a chain description into geometry, dipolar couplings and
//!   the flip-flop Hamiltonian, including disorder and lost spins.
//! * [`lindblad`] integrates the dephasing master equation, either on the full
//!   Hilbert space or on the 0+1 excitation sector.
//! * [`entangle`] computes concurrence, entanglement of formation and the
//!   maximum-entanglement scan over transfer time.
//! * [`experiments`] drives the sweeps, fits, Monte Carlo studies and the
//!   field-gradient sensing protocol.
//! * [`cli`] is the command-line front end.

pub mod chain;
pub mod cli;
pub mod entangle;
pub mod error;
pub mod experiments;
pub mod lindblad;
pub mod ode;
pub mod output;
pub mod qops;
pub mod seed;
pub mod star;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
