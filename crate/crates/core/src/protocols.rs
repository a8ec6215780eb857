//! Clock protocol construction and parameterization.
//!
//! A protocol is an initial symmetric state, a measurement basis, one
//! frequency correction per outcome, and a probe period. This module builds
//! the analytic families (Ramsey, GHZ, the Gaussian-envelope spin-squeezed
//! states, and the sine-state/Fourier-basis protocol), initializes
//! corrections from a Gaussian prior over frequency errors, and maps any
//! protocol to and from the flat real vector the numerical search operates
//! on: 2N+1 reals for the state, N^2+N for the basis (one angle and one
//! phase per two-level plane rotation, which covers the unitary group
//! modulo per-row phases), N+1 corrections, and one probe period, for
//! N^2+4N+3 in total.

use ndarray::Array2;
use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

use crate::symstate::{
    collective_rotation, outcome_probabilities, MeasurementBasis, SymStateError, SymmetricState,
    NORM_TOL,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    State(#[from] SymStateError),
    #[error("{family} protocol requires at least {min} qubits, got {got}")]
    TooFewQubits { family: &'static str, min: usize, got: usize },
    #[error("squeezing parameter kappa must be > 0, got {0}")]
    KappaNotPositive(f64),
    #[error("probe period must be positive and finite, got {0}")]
    BadProbePeriod(f64),
    #[error("probe period decoded to 0 (degenerate protocol)")]
    DegenerateProbePeriod,
    #[error("corrections must have one entry per outcome ({expected}), got {got}")]
    WrongCorrectionsCount { expected: usize, got: usize },
    #[error("an {n}-qubit parameter vector has {expected} reals, got {got}")]
    WrongParamCount { n: usize, expected: usize, got: usize },
    #[error("prior frequency sigma must be > 0, got {0}")]
    PriorNotPositive(f64),
}

/// A complete clock protocol: what to prepare, how to measure, and how to
/// steer the oscillator on each outcome.
#[derive(Debug, Clone)]
pub struct ClockProtocol {
    n: usize,
    psi1: SymmetricState,
    basis: MeasurementBasis,
    corrections: Vec<f64>,
    probe_period: f64,
}

impl ClockProtocol {
    /// Validate and assemble a protocol. The state must be normalized, the
    /// basis orthonormal (enforced by [`MeasurementBasis`]), the correction
    /// list must have one entry per outcome, and the probe period must be a
    /// positive finite number of seconds.
    pub fn new(
        psi1: SymmetricState,
        basis: MeasurementBasis,
        corrections: Vec<f64>,
        probe_period: f64,
    ) -> Result<Self, ProtocolError> {
        let n = psi1.qubits();
        if basis.qubits() != n {
            return Err(SymStateError::DimensionMismatch(n, basis.qubits()).into());
        }
        if !psi1.is_normalized(NORM_TOL) {
            return Err(SymStateError::NotNormalized(psi1.norm().powi(2)).into());
        }
        if corrections.len() != n + 1 {
            return Err(ProtocolError::WrongCorrectionsCount {
                expected: n + 1,
                got: corrections.len(),
            });
        }
        if !(probe_period.is_finite() && probe_period > 0.0) {
            return Err(ProtocolError::BadProbePeriod(probe_period));
        }
        Ok(Self { n, psi1, basis, corrections, probe_period })
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn psi1(&self) -> &SymmetricState {
        &self.psi1
    }

    pub fn basis(&self) -> &MeasurementBasis {
        &self.basis
    }

    /// Per-outcome frequency corrections in Hz.
    pub fn corrections(&self) -> &[f64] {
        &self.corrections
    }

    /// Probe (free-evolution) period T in seconds.
    pub fn probe_period(&self) -> f64 {
        self.probe_period
    }

    pub fn with_corrections(&self, corrections: Vec<f64>) -> Result<Self, ProtocolError> {
        Self::new(self.psi1.clone(), self.basis.clone(), corrections, self.probe_period)
    }

    pub fn with_probe_period(&self, probe_period: f64) -> Result<Self, ProtocolError> {
        Self::new(self.psi1.clone(), self.basis.clone(), self.corrections.clone(), probe_period)
    }

    /// Outcome probabilities of the evolved state at oscillator phase `phi`.
    pub fn probabilities_at(&self, phi: f64) -> Vec<f64> {
        outcome_probabilities(&self.psi1.evolve_phase(phi), &self.basis)
            .expect("protocol state and basis match by construction")
    }
}

/// Default prior on the oscillator phase spread used when initializing
/// corrections: sigma_phi = 1 rad, i.e. sigma_f = 1/(2 pi T).
pub const DEFAULT_PRIOR_PHASE_RAD: f64 = 1.0;

fn default_prior_sigma_f(probe_period: f64) -> f64 {
    DEFAULT_PRIOR_PHASE_RAD / (2.0 * PI * probe_period)
}

/// Ramsey's protocol: every qubit in (|0> - i|1>)/sqrt(2), measured by a
/// collective pi/2 rotation about the Bloch-sphere y-axis followed by
/// excitation counting.
pub fn ramsey_protocol(n: usize, probe_period: f64) -> Result<ClockProtocol, ProtocolError> {
    if n < 1 {
        return Err(ProtocolError::TooFewQubits { family: "ramsey", min: 1, got: n });
    }
    let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let psi1 = SymmetricState::product(n, inv, Complex64::new(0.0, -inv.re))?;
    let basis = MeasurementBasis::from_rotation(&collective_rotation(n, FRAC_PI_2))?;
    with_default_corrections(psi1, basis, probe_period)
}

/// GHZ protocol: (|N,0> + |N,N>)/sqrt(2) measured against the two parity
/// states (|N,0> +- |N,N>)/sqrt(2); the remaining outcomes are Dicke states
/// the evolved state never reaches.
pub fn ghz_protocol(n: usize, probe_period: f64) -> Result<ClockProtocol, ProtocolError> {
    if n < 2 {
        return Err(ProtocolError::TooFewQubits { family: "ghz", min: 2, got: n });
    }
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    let mut plus = vec![Complex64::new(0.0, 0.0); n + 1];
    plus[0] = Complex64::new(inv, 0.0);
    plus[n] = Complex64::new(inv, 0.0);
    let mut minus = plus.clone();
    minus[n] = -minus[n];

    let psi1 = SymmetricState::new(plus.clone())?;
    let mut vectors = vec![SymmetricState::new(plus)?, SymmetricState::new(minus)?];
    vectors.extend((1..n).map(|m| SymmetricState::dicke(n, m)));
    let basis = MeasurementBasis::new(vectors)?;
    with_default_corrections(psi1, basis, probe_period)
}

/// Gaussian-envelope spin-squeezed state: amplitude at excitation number
/// k = m + N/2 proportional to (-1)^k exp(-(m/kappa)^2), with m running in
/// unit steps from -N/2 to N/2. The (-1)^k convention differs from an
/// (-1)^m one by a global phase only.
pub fn squeezed_state(n: usize, kappa: f64) -> Result<SymmetricState, ProtocolError> {
    if n < 1 {
        return Err(ProtocolError::TooFewQubits { family: "squeezed", min: 1, got: n });
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(ProtocolError::KappaNotPositive(kappa));
    }
    let half = n as f64 / 2.0;
    // Shift exponents by the largest one so the envelope survives kappa -> 0
    // instead of underflowing to an all-zero vector.
    let min_sq = (0..=n).map(|k| (k as f64 - half).powi(2)).fold(f64::INFINITY, f64::min);
    let amp = (0..=n)
        .map(|k| {
            let m = k as f64 - half;
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            Complex64::new(sign * ((min_sq - m * m) / (kappa * kappa)).exp(), 0.0)
        })
        .collect();
    Ok(SymmetricState::new(amp)?.normalize()?)
}

/// Squeezed-state protocol: the Gaussian-envelope state read out by a
/// collective pi/2 rotation and excitation counting.
///
/// The squeezed state's mean spin lies along the Bloch x-axis (the Ramsey
/// state's lies along y), so the counting rotation here is about the x-axis;
/// rotating about y would give outcome curves that are even in phi and carry
/// no sign information. The x-rotation is the y-rotation conjugated by
/// quarter-turn phase evolutions.
pub fn squeezed_protocol(
    n: usize,
    kappa: f64,
    probe_period: f64,
) -> Result<ClockProtocol, ProtocolError> {
    let psi1 = squeezed_state(n, kappa)?;
    let basis = MeasurementBasis::from_projection_rows(&x_rotation(n, FRAC_PI_2))?;
    with_default_corrections(psi1, basis, probe_period)
}

/// Collective rotation about the Bloch-sphere x-axis as a complex matrix on
/// Dicke amplitudes: X(theta) = E(pi/2) R_y(theta) E(-pi/2) with
/// E(alpha) = diag(e^{-i m alpha}).
fn x_rotation(n: usize, theta: f64) -> Array2<Complex64> {
    let rot = collective_rotation(n, theta);
    Array2::from_shape_fn((n + 1, n + 1), |(j, m)| {
        let left = Complex64::from_polar(1.0, -(j as f64) * FRAC_PI_2);
        let right = Complex64::from_polar(1.0, (m as f64) * FRAC_PI_2);
        left * rot[(j, m)] * right
    })
}

/// Sine-envelope initial state: amp_m = sqrt(2/(N+1)) sin(pi (m+1/2)/(N+1)).
pub fn buzek_state(n: usize) -> Result<SymmetricState, ProtocolError> {
    if n < 1 {
        return Err(ProtocolError::TooFewQubits { family: "buzek", min: 1, got: n });
    }
    let dim = (n + 1) as f64;
    let amp = (0..=n)
        .map(|m| {
            let x = (2.0 / dim).sqrt() * (PI * (m as f64 + 0.5) / dim).sin();
            Complex64::new(x, 0.0)
        })
        .collect();
    Ok(SymmetricState::new(amp)?.normalize()?)
}

/// Fourier measurement basis |a_j>_m = e^{i m phi(j)}/sqrt(N+1) with
/// phi(j) = 2 pi (j + 1/2 if half_shift)/(N+1); exactly orthonormal.
pub fn buzek_basis(n: usize, half_shift: bool) -> Result<MeasurementBasis, ProtocolError> {
    if n < 1 {
        return Err(ProtocolError::TooFewQubits { family: "buzek", min: 1, got: n });
    }
    let dim = (n + 1) as f64;
    let shift = if half_shift { 0.5 } else { 0.0 };
    let vectors = (0..=n)
        .map(|j| {
            let phi_j = 2.0 * PI * (j as f64 + shift) / dim;
            let amp = (0..=n)
                .map(|m| Complex64::from_polar(1.0 / dim.sqrt(), m as f64 * phi_j))
                .collect();
            SymmetricState::new(amp)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MeasurementBasis::new(vectors)?)
}

/// The sine-state/Fourier-basis protocol. `half_shift` selects the basis
/// phases offset by half a step, the better choice when N is odd.
pub fn buzek_protocol(
    n: usize,
    half_shift: bool,
    probe_period: f64,
) -> Result<ClockProtocol, ProtocolError> {
    let psi1 = buzek_state(n)?;
    let basis = buzek_basis(n, half_shift)?;
    with_default_corrections(psi1, basis, probe_period)
}

fn with_default_corrections(
    psi1: SymmetricState,
    basis: MeasurementBasis,
    probe_period: f64,
) -> Result<ClockProtocol, ProtocolError> {
    if !(probe_period.is_finite() && probe_period > 0.0) {
        return Err(ProtocolError::BadProbePeriod(probe_period));
    }
    let n = psi1.qubits();
    let skeleton = ClockProtocol::new(psi1, basis, vec![0.0; n + 1], probe_period)?;
    let corrections = init_corrections(&skeleton, default_prior_sigma_f(probe_period))?;
    skeleton.with_corrections(corrections)
}

/// Number of quadrature nodes for [`init_corrections`].
const PRIOR_GRID_POINTS: usize = 2001;

/// Initialize per-outcome corrections as the posterior-mean frequency under
/// a Gaussian prior: correction_j = E[f | outcome j] with
/// f ~ N(0, prior_sigma_f) and likelihood p_j(2 pi f T), evaluated by
/// trapezoidal quadrature on [-5 sigma, 5 sigma]. Outcomes with prior mass
/// below 1e-12 (unreachable ones) get correction 0.
pub fn init_corrections(
    protocol: &ClockProtocol,
    prior_sigma_f: f64,
) -> Result<Vec<f64>, ProtocolError> {
    if !(prior_sigma_f.is_finite() && prior_sigma_f > 0.0) {
        return Err(ProtocolError::PriorNotPositive(prior_sigma_f));
    }
    let outcomes = protocol.qubits() + 1;
    let t = protocol.probe_period();
    let span = 5.0 * prior_sigma_f;
    let step = 2.0 * span / (PRIOR_GRID_POINTS - 1) as f64;

    let mut weighted_f = vec![0.0; outcomes];
    let mut mass = vec![0.0; outcomes];
    for i in 0..PRIOR_GRID_POINTS {
        let f = -span + step * i as f64;
        let endpoint = i == 0 || i == PRIOR_GRID_POINTS - 1;
        let trapezoid = if endpoint { 0.5 } else { 1.0 };
        let gauss = (-0.5 * (f / prior_sigma_f).powi(2)).exp()
            / (prior_sigma_f * (2.0 * PI).sqrt());
        let weight = trapezoid * step * gauss;
        let probs = protocol.probabilities_at(2.0 * PI * f * t);
        for (j, p) in probs.into_iter().enumerate() {
            weighted_f[j] += weight * f * p;
            mass[j] += weight * p;
        }
    }
    Ok((0..outcomes)
        .map(|j| if mass[j] < 1e-12 { 0.0 } else { weighted_f[j] / mass[j] })
        .collect())
}

/// The flat real-parameter encoding of an N-qubit protocol, of length
/// N^2 + 4N + 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub n: usize,
    pub reals: Vec<f64>,
}

impl ParamVector {
    /// N^2 + 4N + 3.
    pub fn expected_len(n: usize) -> usize {
        n * n + 4 * n + 3
    }

    pub fn new(n: usize, reals: Vec<f64>) -> Result<Self, ProtocolError> {
        let expected = Self::expected_len(n);
        if reals.len() != expected {
            return Err(ProtocolError::WrongParamCount { n, expected, got: reals.len() });
        }
        Ok(Self { n, reals })
    }
}

/// Decode a flat parameter vector into a protocol.
///
/// Layout: [state: 2N+1][basis planes: N^2+N][corrections: N+1][T: 1].
/// The state block is one real amplitude for m = 0 (fixing the global
/// phase) and re/im pairs for m = 1..N, normalized on decode; the norm
/// redundancy is the one real by which this parameterization exceeds the
/// minimal one. Each basis plane (i, j) contributes a mixing angle and a
/// relative phase; composing the plane rotations from the identity spans
/// every measurement basis once per choice of per-row phases, which carry
/// no probability and are not parameterized. The probe period is decoded
/// through an absolute value so the search never sees a boundary at 0.
pub fn decode_params(params: &ParamVector) -> Result<ClockProtocol, ProtocolError> {
    let n = params.n;
    let expected = ParamVector::expected_len(n);
    if params.reals.len() != expected {
        return Err(ProtocolError::WrongParamCount { n, expected, got: params.reals.len() });
    }
    let p = &params.reals;

    let mut amp = Vec::with_capacity(n + 1);
    amp.push(Complex64::new(p[0], 0.0));
    for m in 1..=n {
        amp.push(Complex64::new(p[2 * m - 1], p[2 * m]));
    }
    let psi1 = SymmetricState::new(amp)?.normalize()?;

    let mut unitary = Array2::eye(n + 1);
    let mut idx = 2 * n + 1;
    for_each_plane(n, |i, j| {
        let theta = p[idx];
        let psi = p[idx + 1];
        idx += 2;
        apply_plane_rotation(&mut unitary, i, j, theta, psi);
    });
    let basis = basis_from_rows(&unitary)?;

    let corrections = p[idx..idx + n + 1].to_vec();
    idx += n + 1;
    let probe_period = p[idx].abs();
    if probe_period == 0.0 {
        return Err(ProtocolError::DegenerateProbePeriod);
    }

    ClockProtocol::new(psi1, basis, corrections, probe_period)
}

/// Encode a protocol into a flat vector such that [`decode_params`]
/// reproduces its outcome-probability curves, corrections, and probe period.
/// Amplitude-level equality is not promised: the state's global phase and
/// the basis rows' phases are gauge the encoding deliberately drops.
pub fn encode_params(protocol: &ClockProtocol) -> ParamVector {
    let n = protocol.qubits();
    let mut reals = Vec::with_capacity(ParamVector::expected_len(n));

    let amp = protocol.psi1().amplitudes();
    let gauge = if amp[0].norm() > 0.0 {
        Complex64::from_polar(1.0, -amp[0].arg())
    } else {
        Complex64::new(1.0, 0.0)
    };
    reals.push((amp[0] * gauge).re);
    for m in 1..=n {
        let a = amp[m] * gauge;
        reals.push(a.re);
        reals.push(a.im);
    }

    // Rows of the basis as a matrix, reduced to diagonal by right-applied
    // inverse plane rotations; the extracted angles rebuild the same rows up
    // to per-row phases.
    let mut w = Array2::from_shape_fn((n + 1, n + 1), |(j, m)| {
        protocol.basis().vectors()[j].amplitudes()[m]
    });
    for_each_plane(n, |r, j| {
        let (theta, psi) = plane_params_to_zero(&w, r, j);
        apply_plane_rotation_inverse_right(&mut w, r, j, theta, psi);
        reals.push(theta);
        reals.push(psi);
    });

    reals.extend_from_slice(protocol.corrections());
    reals.push(protocol.probe_period());

    ParamVector { n, reals }
}

/// Plane order shared by encode and decode: (0,1), (0,2), .., (0,N), (1,2), ..
fn for_each_plane(n: usize, mut visit: impl FnMut(usize, usize)) {
    for i in 0..n {
        for j in i + 1..=n {
            visit(i, j);
        }
    }
}

/// Left-multiply by the two-level rotation G(i,j,theta,psi):
/// row_i' = cos(theta) row_i - sin(theta) e^{i psi} row_j,
/// row_j' = sin(theta) e^{-i psi} row_i + cos(theta) row_j.
fn apply_plane_rotation(u: &mut Array2<Complex64>, i: usize, j: usize, theta: f64, psi: f64) {
    let c = theta.cos();
    let s = theta.sin();
    let phase = Complex64::from_polar(1.0, psi);
    let cols = u.ncols();
    for m in 0..cols {
        let a = u[(i, m)];
        let b = u[(j, m)];
        u[(i, m)] = c * a - s * phase * b;
        u[(j, m)] = s * phase.conj() * a + c * b;
    }
}

/// Right-multiply by G(i,j,theta,psi)^dagger, acting on columns i and j.
fn apply_plane_rotation_inverse_right(
    w: &mut Array2<Complex64>,
    i: usize,
    j: usize,
    theta: f64,
    psi: f64,
) {
    let c = theta.cos();
    let s = theta.sin();
    let phase = Complex64::from_polar(1.0, psi);
    let rows = w.nrows();
    for r in 0..rows {
        let a = w[(r, i)];
        let b = w[(r, j)];
        w[(r, i)] = c * a - s * phase.conj() * b;
        w[(r, j)] = s * phase * a + c * b;
    }
}

/// Parameters of the plane rotation on (r, j) whose inverse right-action
/// zeroes w[r, j] against the pivot w[r, r].
fn plane_params_to_zero(w: &Array2<Complex64>, r: usize, j: usize) -> (f64, f64) {
    let pivot = w[(r, r)];
    let target = w[(r, j)];
    if target.norm() == 0.0 {
        return (0.0, 0.0);
    }
    if pivot.norm() == 0.0 {
        return (FRAC_PI_2, 0.0);
    }
    let q = -target / pivot;
    (q.norm().atan(), q.arg())
}

fn basis_from_rows(u: &Array2<Complex64>) -> Result<MeasurementBasis, SymStateError> {
    let vectors = u
        .rows()
        .into_iter()
        .map(|row| SymmetricState::new(row.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    MeasurementBasis::new(vectors)
}

/// On-disk protocol description: complex numbers as [re, im] pairs, basis
/// vectors row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProtocolSchema {
    n: usize,
    #[serde(rename = "T_seconds")]
    t_seconds: f64,
    psi1: Vec<[f64; 2]>,
    basis: Vec<Vec<[f64; 2]>>,
    corrections_hz: Vec<f64>,
}

impl Serialize for ClockProtocol {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let schema = ProtocolSchema {
            n: self.n,
            t_seconds: self.probe_period,
            psi1: self.psi1.amplitudes().iter().map(|z| [z.re, z.im]).collect(),
            basis: self
                .basis
                .vectors()
                .iter()
                .map(|v| v.amplitudes().iter().map(|z| [z.re, z.im]).collect())
                .collect(),
            corrections_hz: self.corrections.clone(),
        };
        schema.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ClockProtocol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let schema = ProtocolSchema::deserialize(deserializer)?;
        let to_state = |pairs: &Vec<[f64; 2]>| -> Result<SymmetricState, D::Error> {
            SymmetricState::new(pairs.iter().map(|&[re, im]| Complex64::new(re, im)).collect())
                .map_err(D::Error::custom)
        };
        let psi1 = to_state(&schema.psi1)?;
        if psi1.qubits() != schema.n {
            return Err(D::Error::custom(format!(
                "psi1 has {} amplitudes but n = {} (needs n+1)",
                schema.psi1.len(),
                schema.n
            )));
        }
        let vectors = schema
            .basis
            .iter()
            .map(to_state)
            .collect::<Result<Vec<_>, _>>()?;
        let basis = MeasurementBasis::new(vectors).map_err(D::Error::custom)?;
        ClockProtocol::new(psi1, basis, schema.corrections_hz, schema.t_seconds)
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn curve_distance(a: &ClockProtocol, b: &ClockProtocol, points: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..points {
            let phi = -PI + 2.0 * PI * k as f64 / (points - 1) as f64;
            let pa = a.probabilities_at(phi);
            let pb = b.probabilities_at(phi);
            for (x, y) in pa.iter().zip(&pb) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }

    #[test]
    fn ramsey_single_qubit_state() {
        let p = ramsey_protocol(1, 0.2).unwrap();
        let amp = p.psi1().amplitudes();
        assert_abs_diff_eq!(amp[0].re, 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(amp[0].im, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(amp[1].re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(amp[1].im, -0.70711, epsilon = 1e-5);
    }

    #[test]
    fn ramsey_curves_follow_sine() {
        let p = ramsey_protocol(1, 0.2).unwrap();
        for k in 0..200 {
            let phi = -2.0 * PI + 4.0 * PI * k as f64 / 199.0;
            let probs = p.probabilities_at(phi);
            assert_abs_diff_eq!(probs[0], (1.0 + phi.sin()) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ramsey_two_qubit_amplitudes() {
        let p = ramsey_protocol(2, 0.2).unwrap();
        let amp = p.psi1().amplitudes();
        let expect = [
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2),
            Complex64::new(-0.5, 0.0),
        ];
        for (a, e) in amp.iter().zip(&expect) {
            assert!((a - e).norm() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn ghz_probabilities_and_unreachable_outcomes() {
        let p2 = ghz_protocol(2, 0.1).unwrap();
        let probs = p2.probabilities_at(0.0);
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-12);

        let p3 = ghz_protocol(3, 0.1).unwrap();
        let probs = p3.probabilities_at(PI / 3.0);
        assert_abs_diff_eq!(probs[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probs[1], 1.0, epsilon = 1e-12);
        for k in 0..40 {
            let phi = -3.0 + 0.15 * k as f64;
            let probs = p3.probabilities_at(phi);
            assert_abs_diff_eq!(probs[0], (1.0 + (3.0 * phi).cos()) / 2.0, epsilon = 1e-12);
            assert!(probs[2] < 1e-15 && probs[3] < 1e-15);
        }

        assert!(matches!(
            ghz_protocol(1, 0.1),
            Err(ProtocolError::TooFewQubits { .. })
        ));
    }

    #[test]
    fn ghz_corrections_are_zero_for_unreachable_outcomes() {
        let p = ghz_protocol(3, 0.1).unwrap();
        assert_eq!(p.corrections()[2], 0.0);
        assert_eq!(p.corrections()[3], 0.0);
    }

    #[test]
    fn squeezed_state_collapses_to_central_dicke() {
        let s = squeezed_state(4, 1e-3).unwrap();
        assert_abs_diff_eq!(s.amplitudes()[2].norm(), 1.0, epsilon = 1e-12);
        for m in [0usize, 1, 3, 4] {
            assert!(s.amplitudes()[m].norm() < 1e-12);
        }
    }

    #[test]
    fn squeezed_state_two_qubit_amplitudes() {
        // Envelope (e^-1, -1, e^-1) normalized; matches the printed values
        // up to a global sign.
        let s = squeezed_state(2, 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        let scale = (1.0 + 2.0 * (-2.0f64).exp()).sqrt();
        assert_abs_diff_eq!(s.amplitudes()[0].re, e1 / scale, epsilon = 1e-12);
        assert_abs_diff_eq!(s.amplitudes()[1].re, -1.0 / scale, epsilon = 1e-12);
        assert_abs_diff_eq!(s.amplitudes()[2].re, e1 / scale, epsilon = 1e-12);
        assert_abs_diff_eq!(s.amplitudes()[0].re.abs(), 0.32635, epsilon = 2e-5);
        assert_abs_diff_eq!(s.amplitudes()[1].re.abs(), 0.88711, epsilon = 2e-5);
    }

    #[test]
    fn squeezed_states_are_normalized() {
        for n in 1..=20 {
            for kappa in [0.3, 1.0, 3.0, 100.0] {
                let s = squeezed_state(n, kappa).unwrap();
                assert!(s.is_normalized(1e-12), "n={n} kappa={kappa}");
            }
        }
        assert!(matches!(
            squeezed_state(2, 0.0),
            Err(ProtocolError::KappaNotPositive(_))
        ));
    }

    #[test]
    fn squeezed_single_qubit_large_kappa_recovers_ramsey_curves() {
        let squeezed = squeezed_protocol(1, 1e3, 0.2).unwrap();
        let ramsey = ramsey_protocol(1, 0.2).unwrap();
        assert!(curve_distance(&squeezed, &ramsey, 101) < 1e-5);
    }

    #[test]
    fn squeezed_curves_reflect_under_outcome_reversal() {
        let p = squeezed_protocol(3, 1.2, 0.2).unwrap();
        for k in 0..60 {
            let phi = -3.0 + 0.1 * k as f64;
            let fwd = p.probabilities_at(phi);
            let rev = p.probabilities_at(-phi);
            for j in 0..=3 {
                assert_abs_diff_eq!(fwd[j], rev[3 - j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn squeezed_curves_carry_sign_information() {
        // The whole point of the x-axis readout: outcome probabilities must
        // differ between +phi and -phi.
        let p = squeezed_protocol(2, 1.0, 0.2).unwrap();
        let plus = p.probabilities_at(0.3);
        let minus = p.probabilities_at(-0.3);
        assert!((plus[0] - minus[0]).abs() > 0.05);
    }

    #[test]
    fn buzek_state_small_n_values() {
        let s1 = buzek_state(1).unwrap();
        assert_abs_diff_eq!(s1.amplitudes()[0].re, 0.70711, epsilon = 1e-5);
        assert_abs_diff_eq!(s1.amplitudes()[1].re, 0.70711, epsilon = 1e-5);
        let s2 = buzek_state(2).unwrap();
        assert_abs_diff_eq!(s2.amplitudes()[0].re, 0.40825, epsilon = 1e-5);
        assert_abs_diff_eq!(s2.amplitudes()[1].re, 0.81650, epsilon = 1e-5);
        assert_abs_diff_eq!(s2.amplitudes()[2].re, 0.40825, epsilon = 1e-5);
        for n in 1..=20 {
            assert!(buzek_state(n).unwrap().is_normalized(1e-12));
        }
    }

    #[test]
    fn buzek_basis_is_orthonormal_and_shifted() {
        for n in 1..=20 {
            for half_shift in [false, true] {
                // MeasurementBasis::new already enforces orthonormality at
                // 1e-10; check the tighter DFT-level bound directly.
                let basis = buzek_basis(n, half_shift).unwrap();
                for i in 0..=n {
                    for j in 0..=n {
                        let ip = basis.vectors()[i]
                            .inner_product(&basis.vectors()[j])
                            .unwrap();
                        let target = if i == j { 1.0 } else { 0.0 };
                        assert!((ip - target).norm() < 1e-12);
                    }
                }
            }
        }
        let basis = buzek_basis(1, false).unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert!((basis.vectors()[0].amplitudes()[1] - Complex64::new(inv, 0.0)).norm() < 1e-12);
        assert!((basis.vectors()[1].amplitudes()[1] - Complex64::new(-inv, 0.0)).norm() < 1e-12);

        // n=2 with the half shift: phi(j) = pi/3, pi, 5pi/3.
        let basis = buzek_basis(2, true).unwrap();
        for (j, expect) in [PI / 3.0, PI, 5.0 * PI / 3.0].iter().enumerate() {
            let phase = basis.vectors()[j].amplitudes()[1].arg().rem_euclid(2.0 * PI);
            assert_abs_diff_eq!(phase, *expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn buzek_peaks_sit_at_minus_basis_phase() {
        let n = 5;
        let p = buzek_protocol(n, false, 0.2).unwrap();
        let dim = (n + 1) as f64;
        let grid = 4096;
        for j in 0..=n {
            let mut best_phi = 0.0;
            let mut best = -1.0;
            for k in 0..grid {
                let phi = -PI + 2.0 * PI * k as f64 / grid as f64;
                let val = p.probabilities_at(phi)[j];
                if val > best {
                    best = val;
                    best_phi = phi;
                }
            }
            let expect = (-2.0 * PI * j as f64 / dim).rem_euclid(2.0 * PI);
            let got = best_phi.rem_euclid(2.0 * PI);
            let dist = (got - expect).abs().min(2.0 * PI - (got - expect).abs());
            assert!(dist < 2.0 * PI / grid as f64 * 4.0, "outcome {j}: {got} vs {expect}");
        }
    }

    #[test]
    fn buzek_single_qubit_half_shift_matches_ramsey() {
        let buzek = buzek_protocol(1, true, 0.2).unwrap();
        let ramsey = ramsey_protocol(1, 0.2).unwrap();
        // Same two-outcome sine curves, with the outcome labels swapped.
        for k in 0..100 {
            let phi = -PI + 2.0 * PI * k as f64 / 99.0;
            let pb = buzek.probabilities_at(phi);
            let pr = ramsey.probabilities_at(phi);
            assert_abs_diff_eq!(pb[0], pr[1], epsilon = 1e-12);
            assert_abs_diff_eq!(pb[1], pr[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn init_corrections_ramsey_is_antisymmetric() {
        let p = ramsey_protocol(1, 0.2).unwrap();
        let c = p.corrections();
        assert!(c[0] > 0.0);
        assert_abs_diff_eq!(c[0], -c[1], epsilon = 1e-12);

        let p4 = ramsey_protocol(4, 0.2).unwrap();
        let c = p4.corrections();
        for j in 0..=4 {
            assert_abs_diff_eq!(c[j], -c[4 - j], epsilon = 1e-10);
        }
    }

    #[test]
    fn init_corrections_match_monte_carlo_posterior_mean() {
        // Independent check of the quadrature: sample the prior directly and
        // form E[f p_j]/E[p_j] from 10^6 draws.
        let p = buzek_protocol(2, false, 0.2).unwrap();
        let sigma = 1.0 / (2.0 * PI * 0.2);
        let quad = init_corrections(&p, sigma).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 1_000_000;
        let mut num = vec![0.0; 3];
        let mut den = vec![0.0; 3];
        for _ in 0..draws {
            let f: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            let probs = p.probabilities_at(2.0 * PI * f * 0.2);
            for j in 0..3 {
                num[j] += f * probs[j];
                den[j] += probs[j];
            }
        }
        for j in 0..3 {
            let mc = num[j] / den[j];
            assert!(
                (quad[j] - mc).abs() < 0.01 * sigma,
                "outcome {j}: quadrature {} vs MC {mc}",
                quad[j]
            );
        }
    }

    #[test]
    fn init_corrections_rejects_bad_prior() {
        let p = ramsey_protocol(1, 0.2).unwrap();
        assert!(matches!(
            init_corrections(&p, 0.0),
            Err(ProtocolError::PriorNotPositive(_))
        ));
    }

    #[test]
    fn decode_zero_rotation_block_gives_dicke_basis() {
        let n = 3;
        let mut reals = vec![0.0; ParamVector::expected_len(n)];
        reals[0] = 1.0; // state |N,0>
        let len = reals.len();
        reals[len - 1] = 0.7; // T
        let p = decode_params(&ParamVector::new(n, reals).unwrap()).unwrap();
        for (j, v) in p.basis().vectors().iter().enumerate() {
            let d = SymmetricState::dicke(n, j);
            assert!((v.inner_product(&d).unwrap().norm() - 1.0).abs() < 1e-12);
        }
        assert_abs_diff_eq!(p.probe_period(), 0.7, epsilon = 0.0);
    }

    #[test]
    fn decode_rejects_wrong_lengths() {
        for n in 1..=8 {
            let expected = ParamVector::expected_len(n);
            assert!(ParamVector::new(n, vec![0.0; expected - 1]).is_err());
            assert!(ParamVector::new(n, vec![0.0; expected + 1]).is_err());
            let mut ok = vec![0.1; expected];
            let len = ok.len();
            ok[len - 1] = 1.0;
            assert!(decode_params(&ParamVector::new(n, ok).unwrap()).is_ok());
        }
    }

    #[test]
    fn decode_flags_degenerate_probe_period() {
        let n = 1;
        let mut reals = vec![0.3; ParamVector::expected_len(n)];
        let len = reals.len();
        reals[len - 1] = 0.0;
        let params = ParamVector::new(n, reals).unwrap();
        assert!(matches!(
            decode_params(&params),
            Err(ProtocolError::DegenerateProbePeriod)
        ));
    }

    #[test]
    fn random_vectors_decode_to_valid_protocols() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            for _ in 0..40 {
                let reals: Vec<f64> = (0..ParamVector::expected_len(n))
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0)
                    .collect();
                let params = ParamVector::new(n, reals).unwrap();
                match decode_params(&params) {
                    Ok(p) => {
                        assert!(p.psi1().is_normalized(1e-9));
                        assert!(p.probe_period() > 0.0);
                        let probs = p.probabilities_at(0.37);
                        let total: f64 = probs.iter().sum();
                        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
                    }
                    Err(e) => panic!("decode failed on random vector: {e}"),
                }
            }
        }
    }

    #[test]
    fn encode_decode_reproduces_curves() {
        let cases = vec![
            ramsey_protocol(2, 0.4).unwrap(),
            buzek_protocol(3, true, 0.15).unwrap(),
            squeezed_protocol(2, 0.9, 0.3).unwrap(),
            ghz_protocol(2, 0.05).unwrap(),
        ];
        for p in cases {
            let encoded = encode_params(&p);
            assert_eq!(encoded.reals.len(), ParamVector::expected_len(p.qubits()));
            let decoded = decode_params(&encoded).unwrap();
            assert!(
                curve_distance(&p, &decoded, 101) < 1e-9,
                "curves moved for n={}",
                p.qubits()
            );
            assert_eq!(decoded.corrections(), p.corrections());
            assert_eq!(decoded.probe_period(), p.probe_period());

            // Second pass is idempotent.
            let encoded2 = encode_params(&decoded);
            let decoded2 = decode_params(&encoded2).unwrap();
            assert!(curve_distance(&decoded, &decoded2, 101) < 1e-11);
        }
    }

    #[test]
    fn encode_is_gauge_invariant_under_row_phases() {
        let p = buzek_protocol(2, false, 0.2).unwrap();
        let mut vectors = p.basis().vectors().to_vec();
        let phase = Complex64::from_polar(1.0, 1.234);
        vectors[1] = SymmetricState::new(
            vectors[1].amplitudes().iter().map(|a| a * phase).collect(),
        )
        .unwrap();
        let rephased = ClockProtocol::new(
            p.psi1().clone(),
            MeasurementBasis::new(vectors).unwrap(),
            p.corrections().to_vec(),
            p.probe_period(),
        )
        .unwrap();
        let a = decode_params(&encode_params(&p)).unwrap();
        let b = decode_params(&encode_params(&rephased)).unwrap();
        assert!(curve_distance(&a, &b, 101) < 1e-9);
    }

    #[test]
    fn schema_round_trips_through_json() {
        let p = squeezed_protocol(3, 1.1, 0.25).unwrap();
        let json = serde_json::to_string_pretty(&p).unwrap();
        assert!(json.contains("T_seconds"));
        assert!(json.contains("corrections_hz"));
        let back: ClockProtocol = serde_json::from_str(&json).unwrap();
        assert!(curve_distance(&p, &back, 51) < 1e-12);
        assert_eq!(back.corrections(), p.corrections());
    }

    #[test]
    fn schema_rejects_invalid_protocols() {
        let p = ramsey_protocol(2, 0.2).unwrap();
        let mut value = serde_json::to_value(&p).unwrap();
        value["psi1"][0] = serde_json::json!([3.0, 0.0]);
        let err = serde_json::from_value::<ClockProtocol>(value.clone())
            .unwrap_err()
            .to_string();
        assert!(err.contains("not normalized"), "got: {err}");

        let mut bad_t = serde_json::to_value(&p).unwrap();
        bad_t["T_seconds"] = serde_json::json!(-1.0);
        let err = serde_json::from_value::<ClockProtocol>(bad_t).unwrap_err().to_string();
        assert!(err.contains("probe period"), "got: {err}");
    }
}
