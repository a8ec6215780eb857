//! States and measurements in the fully symmetric (Dicke) subspace.
//!
//! An N-qubit state that is invariant under qubit permutation is determined
//! by N+1 complex amplitudes, one per excitation number m = 0..=N. Free
//! evolution multiplies amplitude m by e^{-i m phi}, and a collective
//! rotation of all qubits about the Bloch-sphere y-axis acts as a real
//! orthogonal (N+1)x(N+1) matrix on the amplitudes. Projective measurement
//! is described by an orthonormal set of N+1 symmetric states.
//!
//! Everything is immutable and pure, so values can be shared freely across
//! concurrently running simulations.

use ndarray::Array2;
use num_complex::Complex64;
use thiserror::Error;

/// Tolerance for treating a state as normalized when validating inputs.
pub const NORM_TOL: f64 = 1e-9;
/// Tolerance on pairwise inner products when validating a measurement basis.
pub const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SymStateError {
    #[error("a symmetric state needs at least 2 amplitudes (1 qubit), got {0}")]
    TooFewAmplitudes(usize),
    #[error("amplitudes must be finite")]
    NonFinite,
    #[error("cannot normalize an all-zero amplitude vector")]
    DegenerateState,
    #[error("qubit-count mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("state is not normalized: |amp|^2 sums to {0}")]
    NotNormalized(f64),
    #[error("basis vectors {i} and {j} fail orthonormality by {deviation:.3e}")]
    NotOrthonormal { i: usize, j: usize, deviation: f64 },
    #[error("a measurement basis for {n} qubits needs {expected} vectors, got {got}")]
    WrongVectorCount { n: usize, expected: usize, got: usize },
}

/// A pure state of N qubits confined to the symmetric subspace, stored as
/// complex amplitudes over the Dicke states |N,m>, m = excitation count.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricState {
    n: usize,
    amp: Vec<Complex64>,
}

impl SymmetricState {
    /// Wrap raw amplitudes. The vector length fixes the qubit count to
    /// `len - 1`; no normalization is performed (see [`Self::normalize`]).
    pub fn new(amp: Vec<Complex64>) -> Result<Self, SymStateError> {
        if amp.len() < 2 {
            return Err(SymStateError::TooFewAmplitudes(amp.len()));
        }
        if amp.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(SymStateError::NonFinite);
        }
        Ok(Self { n: amp.len() - 1, amp })
    }

    /// The Dicke basis state |n,m>.
    pub fn dicke(n: usize, m: usize) -> Self {
        assert!(n >= 1 && m <= n, "dicke state requires n >= 1 and m <= n");
        let mut amp = vec![Complex64::new(0.0, 0.0); n + 1];
        amp[m] = Complex64::new(1.0, 0.0);
        Self { n, amp }
    }

    /// Symmetric image of the product state (a0|0> + a1|1>)^(tensor n):
    /// amplitude m is sqrt(C(n,m)) a0^(n-m) a1^m, normalized.
    pub fn product(n: usize, a0: Complex64, a1: Complex64) -> Result<Self, SymStateError> {
        assert!(n >= 1, "product state requires n >= 1");
        let amp = (0..=n)
            .map(|m| {
                let w = binomial(n, m).sqrt();
                a0.powu((n - m) as u32) * a1.powu(m as u32) * w
            })
            .collect();
        Self::new(amp)?.normalize()
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amp
    }

    /// Euclidean norm of the amplitude vector.
    pub fn norm(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    /// Divide by the Euclidean norm. Errors on an (exactly) zero vector.
    pub fn normalize(&self) -> Result<Self, SymStateError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(SymStateError::DegenerateState);
        }
        let amp = self.amp.iter().map(|a| a / norm).collect();
        Ok(Self { n: self.n, amp })
    }

    /// Free evolution: amplitude m picks up e^{-i m phi}. Norm-preserving for
    /// any phi; aliasing beyond +-pi is physical, not an error.
    pub fn evolve_phase(&self, phi: f64) -> Self {
        let amp = self
            .amp
            .iter()
            .enumerate()
            .map(|(m, a)| a * Complex64::from_polar(1.0, -(m as f64) * phi))
            .collect();
        Self { n: self.n, amp }
    }

    /// <self|other> = sum_m conj(self_m) other_m.
    pub fn inner_product(&self, other: &Self) -> Result<Complex64, SymStateError> {
        if self.n != other.n {
            return Err(SymStateError::DimensionMismatch(self.n, other.n));
        }
        Ok(self
            .amp
            .iter()
            .zip(&other.amp)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }
}

/// An orthonormal set of N+1 symmetric states onto which the evolved clock
/// state is projected; outcome j corresponds to vector j.
#[derive(Debug, Clone)]
pub struct MeasurementBasis {
    n: usize,
    vectors: Vec<SymmetricState>,
}

impl MeasurementBasis {
    /// Validate and wrap a full set of N+1 vectors. Pairwise inner products
    /// must match the identity within [`ORTHO_TOL`].
    pub fn new(vectors: Vec<SymmetricState>) -> Result<Self, SymStateError> {
        let n = match vectors.first() {
            Some(v) => v.qubits(),
            None => return Err(SymStateError::WrongVectorCount { n: 0, expected: 1, got: 0 }),
        };
        if vectors.len() != n + 1 {
            return Err(SymStateError::WrongVectorCount { n, expected: n + 1, got: vectors.len() });
        }
        for i in 0..vectors.len() {
            for j in i..vectors.len() {
                let ip = vectors[i].inner_product(&vectors[j])?;
                let target = if i == j { 1.0 } else { 0.0 };
                let deviation = (ip - target).norm();
                if deviation >= ORTHO_TOL {
                    return Err(SymStateError::NotOrthonormal { i, j, deviation });
                }
            }
        }
        Ok(Self { n, vectors })
    }

    /// The computational (Dicke) basis itself.
    pub fn dicke(n: usize) -> Self {
        let vectors = (0..=n).map(|m| SymmetricState::dicke(n, m)).collect();
        Self { n, vectors }
    }

    /// Basis describing "apply the orthogonal rotation `rot`, then count
    /// excitations": vector j is row j of `rot`, so that
    /// p_j = |<a_j|psi>|^2 = |(rot psi)_j|^2.
    pub fn from_rotation(rot: &Array2<f64>) -> Result<Self, SymStateError> {
        let u = rot.mapv(|x| Complex64::new(x, 0.0));
        Self::from_projection_rows(&u)
    }

    /// Basis whose outcome amplitudes are the rows of a unitary: outcome j
    /// has amplitude (U psi)_j, i.e. basis vector j is the conjugated row j.
    pub fn from_projection_rows(u: &Array2<Complex64>) -> Result<Self, SymStateError> {
        let (rows, cols) = u.dim();
        assert_eq!(rows, cols, "projection matrix must be square");
        let vectors = u
            .rows()
            .into_iter()
            .map(|row| SymmetricState::new(row.iter().map(|z| z.conj()).collect()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vectors)
    }

    pub fn qubits(&self) -> usize {
        self.n
    }

    pub fn vectors(&self) -> &[SymmetricState] {
        &self.vectors
    }
}

/// Natural log of n!.
pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Binomial coefficient as f64, safe for n well beyond 64 via log-factorials.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp()
}

/// Collective rotation of all N qubits by `theta` about the Bloch-sphere
/// y-axis, as the real matrix acting on Dicke amplitudes (the Wigner
/// little-d matrix for spin j = N/2).
///
/// Convention: for n = 1 the rows are (cos t/2, -sin t/2; sin t/2, cos t/2),
/// so that `MeasurementBasis::from_rotation(collective_rotation(n, PI/2))`
/// reproduces the textbook Ramsey basis (1,-1)/sqrt(2), (1,1)/sqrt(2).
///
/// Entries are accumulated from log-factorials so the binomial sums stay in
/// double range far beyond the qubit counts exercised here.
pub fn collective_rotation(n: usize, theta: f64) -> Array2<f64> {
    assert!(n >= 1, "rotation requires n >= 1");
    let lf: Vec<f64> = {
        let mut lf = vec![0.0; n + 1];
        for k in 2..=n {
            lf[k] = lf[k - 1] + (k as f64).ln();
        }
        lf
    };
    let ln_choose = |a: usize, b: usize| lf[a] - lf[b] - lf[a - b];

    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    let (ln_c, sgn_c) = (c.abs().ln(), if c < 0.0 { -1.0 } else { 1.0 });
    let (ln_s, sgn_s) = (s.abs().ln(), if s < 0.0 { -1.0 } else { 1.0 });

    let mut rot = Array2::zeros((n + 1, n + 1));
    for k in 0..=n {
        for m in 0..=n {
            // <N,k| U(theta)^(tensor N) |N,m>, summed over the overlap u of
            // the excited sets before and after rotation.
            let prefactor = 0.5 * (ln_choose(n, m) - ln_choose(n, k));
            let u_min = (m + k).saturating_sub(n);
            let u_max = m.min(k);
            let mut entry = 0.0;
            for u in u_min..=u_max {
                let c_pow = n + 2 * u - m - k;
                let s_pow = m + k - 2 * u;
                if (c == 0.0 && c_pow > 0) || (s == 0.0 && s_pow > 0) {
                    continue;
                }
                let mut ln_mag = prefactor + ln_choose(m, u) + ln_choose(n - m, k - u);
                let mut sign = if (m - u) % 2 == 1 { -1.0 } else { 1.0 };
                if c_pow > 0 {
                    ln_mag += c_pow as f64 * ln_c;
                    if sgn_c < 0.0 && c_pow % 2 == 1 {
                        sign = -sign;
                    }
                }
                if s_pow > 0 {
                    ln_mag += s_pow as f64 * ln_s;
                    if sgn_s < 0.0 && s_pow % 2 == 1 {
                        sign = -sign;
                    }
                }
                entry += sign * ln_mag.exp();
            }
            rot[(k, m)] = entry;
        }
    }
    rot
}

/// Projection probabilities p_j = |<a_j|state>|^2 of a normalized state onto
/// a measurement basis. The probabilities sum to 1 within 1e-10.
pub fn outcome_probabilities(
    state: &SymmetricState,
    basis: &MeasurementBasis,
) -> Result<Vec<f64>, SymStateError> {
    if state.qubits() != basis.qubits() {
        return Err(SymStateError::DimensionMismatch(state.qubits(), basis.qubits()));
    }
    basis
        .vectors
        .iter()
        .map(|a| Ok(a.inner_product(state)?.norm_sqr()))
        .collect()
}

/// Inverse-CDF sampling: the smallest j whose cumulative probability exceeds
/// `draw`. Deterministic given the uniform [0,1) draw; a draw at or beyond
/// the total (floating-point leakage) falls into the last outcome.
pub fn sample_outcome(probs: &[f64], draw: f64) -> usize {
    debug_assert!(!probs.is_empty());
    let mut cumulative = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return j;
        }
    }
    probs.len() - 1
}
