//! Brute-force reference computations in the full 2^n tensor-product space.
//!
//! Everything here is deliberately naive: states are expanded to all 2^n
//! computational-basis amplitudes, phases and rotations are applied qubit by
//! qubit, and probabilities are read off by enumeration. The point is to have
//! an independent path against which the (N+1)-dimensional symmetric-subspace
//! implementation can be checked, so nothing in this crate may call into it.
//!
//! Conventions: qubit basis |0> (ground), |1> (excited); free evolution applies
//! diag(1, e^{-i phi}) per qubit; a y-rotation by theta applies
//! [[cos t/2, -sin t/2], [sin t/2, cos t/2]].

use num_complex::Complex64;

/// Binomial coefficient as f64 (exact for the small n used in tests).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Expand Dicke-basis amplitudes (index = excitation count) into the full
/// 2^n computational-basis vector.
pub fn expand_symmetric(amp: &[Complex64]) -> Vec<Complex64> {
    let n = amp.len() - 1;
    let dim = 1usize << n;
    let mut full = vec![Complex64::new(0.0, 0.0); dim];
    for (bits, slot) in full.iter_mut().enumerate() {
        let m = bits.count_ones() as usize;
        *slot = amp[m] / binomial(n, m).sqrt();
    }
    full
}

/// Project a full 2^n vector back onto the Dicke basis. The input need not be
/// symmetric; any asymmetric component is discarded.
pub fn project_symmetric(full: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut amp = vec![Complex64::new(0.0, 0.0); n + 1];
    for (bits, &coeff) in full.iter().enumerate() {
        let m = bits.count_ones() as usize;
        amp[m] += coeff / binomial(n, m).sqrt();
    }
    amp
}

/// Apply the free-evolution phase diag(1, e^{-i phi}) to every qubit.
pub fn apply_phase(full: &mut [Complex64], phi: f64) {
    for (bits, coeff) in full.iter_mut().enumerate() {
        let m = bits.count_ones() as f64;
        *coeff *= Complex64::from_polar(1.0, -m * phi);
    }
}

/// Apply the same single-qubit operator u (row-major 2x2) to every qubit.
pub fn apply_single_qubit(full: &mut Vec<Complex64>, n: usize, u: [[Complex64; 2]; 2]) {
    let dim = full.len();
    for q in 0..n {
        let mask = 1usize << q;
        let mut next = vec![Complex64::new(0.0, 0.0); dim];
        for bits in 0..dim {
            let b = usize::from(bits & mask != 0);
            let lo = bits & !mask;
            let hi = bits | mask;
            next[lo] += u[0][b] * full[bits];
            next[hi] += u[1][b] * full[bits];
        }
        *full = next;
    }
}

/// y-rotation by theta applied to every qubit.
pub fn apply_y_rotation(full: &mut Vec<Complex64>, n: usize, theta: f64) {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let s = Complex64::new((theta / 2.0).sin(), 0.0);
    apply_single_qubit(full, n, [[c, -s], [s, c]]);
}

/// x-rotation by theta applied to every qubit.
pub fn apply_x_rotation(full: &mut Vec<Complex64>, n: usize, theta: f64) {
    let c = Complex64::new((theta / 2.0).cos(), 0.0);
    let is = Complex64::new(0.0, (theta / 2.0).sin());
    apply_single_qubit(full, n, [[c, -is], [-is, c]]);
}

/// Probability of counting m excited qubits, for m = 0..=n.
pub fn excitation_probabilities(full: &[Complex64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n + 1];
    for (bits, coeff) in full.iter().enumerate() {
        p[bits.count_ones() as usize] += coeff.norm_sqr();
    }
    p
}

/// <a|b> over full vectors.
pub fn overlap(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Reference for the "evolve, rotate about y, count excitations" protocol:
/// Dicke amplitudes in, outcome probabilities out, all in the full space.
pub fn probabilities_after_y_rotation(amp: &[Complex64], phi: f64, theta: f64) -> Vec<f64> {
    let n = amp.len() - 1;
    let mut full = expand_symmetric(amp);
    apply_phase(&mut full, phi);
    apply_y_rotation(&mut full, n, theta);
    excitation_probabilities(&full, n)
}

/// Reference for projective measurement onto an arbitrary symmetric basis:
/// p_j = |<a_j | e^{-i phi m} psi>|^2 computed entirely in the full space.
pub fn probabilities_in_basis(amp: &[Complex64], phi: f64, basis: &[Vec<Complex64>]) -> Vec<f64> {
    let mut full = expand_symmetric(amp);
    apply_phase(&mut full, phi);
    basis
        .iter()
        .map(|a| overlap(&expand_symmetric(a), &full).norm_sqr())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dicke_expansion_is_normalized() {
        // |4,3> expands to four equal terms of weight 1/2 each.
        let amp = vec![c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)];
        let full = expand_symmetric(&amp);
        let norm: f64 = full.iter().map(|x| x.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-14);
        let nonzero: Vec<_> = full.iter().filter(|x| x.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 4);
        for x in nonzero {
            assert!((x.re - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_inverts_expansion() {
        let amp = vec![c(0.4, 0.1), c(-0.3, 0.5), c(0.2, -0.6)];
        let full = expand_symmetric(&amp);
        let back = project_symmetric(&full, 2);
        for (a, b) in amp.iter().zip(&back) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn single_qubit_ramsey_curve() {
        // (1, -i)/sqrt(2), evolve by phi, rotate about y by pi/2:
        // p(0 excited) must be (1 + sin phi)/2.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let amp = vec![c(s, 0.0), c(0.0, -s)];
        for k in 0..32 {
            let phi = -7.0 + 0.45 * k as f64;
            let p = probabilities_after_y_rotation(&amp, phi, std::f64::consts::FRAC_PI_2);
            assert!((p[0] - (1.0 + phi.sin()) / 2.0).abs() < 1e-12, "phi={phi}");
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotations_preserve_norm() {
        let amp = vec![c(0.1, 0.2), c(0.3, -0.1), c(-0.5, 0.4), c(0.2, 0.2)];
        let scale: f64 = amp.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let amp: Vec<_> = amp.into_iter().map(|x| x / scale).collect();
        let mut full = expand_symmetric(&amp);
        apply_y_rotation(&mut full, 3, 1.234);
        apply_x_rotation(&mut full, 3, -0.777);
        let norm: f64 = full.iter().map(|x| x.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}
