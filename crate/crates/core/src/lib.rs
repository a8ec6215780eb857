//! Simulation and optimization of few-qubit atomic-clock protocols.
//!
//! A passive clock steers a noisy local oscillator by repeatedly preparing N
//! entangled qubits, letting an oscillator phase error accumulate for a probe
//! period T, projecting onto a measurement basis, and applying a per-outcome
//! frequency correction. Everything is confined to the (N+1)-dimensional
//! fully symmetric (Dicke) subspace, which keeps exact state-vector
//! simulation cheap up to a few tens of qubits.
//!
//! Module layout:
//!
//! - [`symstate`]: states, phase evolution, collective rotations, and
//!   projective measurement in the symmetric subspace.
//! - [`noise`]: flicker (1/f) frequency-noise synthesis calibrated to a flat
//!   1 Hz Allan deviation, plus Allan statistics.
//! - [`protocols`]: the protocol families (Ramsey, GHZ, spin-squeezed,
//!   sine/Fourier), the flat real-parameter encoding of a general protocol,
//!   and Gaussian-prior correction initialization.
//! - [`simulator`]: the closed-loop servo Monte Carlo and instability
//!   estimation.
//! - [`search`]: Nelder-Mead refinement of known families and the
//!   random-restart search over the full parameter space.
//!
//! All randomness flows from explicit 64-bit seeds through ChaCha8, so every
//! result in the crate is reproducible bit for bit.

pub mod noise;
pub mod protocols;
pub mod search;
pub mod simulator;
pub mod symstate;

pub use num_complex::Complex64;
