//! Oscillator frequency-noise synthesis and Allan statistics.
//!
//! The clock model drives the local oscillator with flicker (1/f)
//! frequency noise whose overlapping Allan deviation is flat at 1 Hz,
//! equivalently a probe-cycle-to-probe-cycle difference variance of 2 Hz^2
//! independent of the probe period.
//!
//! Traces are synthesized spectrally: Gaussian noise is shaped in the
//! frequency domain to a 1/f power spectrum and transformed back in a
//! single pass over the run length. A sampled, Nyquist-limited 1/f process
//! is not quite Allan-flat on its own: the tau = 1 deviation (which is tied
//! to the adjacent-difference variance by an estimator identity) comes out
//! about 9% above the large-tau plateau. The spectrum therefore carries a
//! quadratic Nyquist taper, 1/f -> (1 - BETA (2f)^2)/f, with BETA solved in
//! closed form so the tau = 1 Allan variance equals the plateau; the taper
//! is negligible in the low-frequency band that the clock servo fights.
//! After synthesis the trace is rescaled so the measured adjacent-difference
//! variance is exactly 2 Hz^2.
//!
//! The lowest synthesized frequency is one cycle per FFT length (at least
//! twice the run length), which places the low-frequency cutoff of the 1/f
//! process at the run scale; statistics on much longer horizons are
//! cutoff-dependent by nature.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise synthesis needs at least 2 cycles, got {0}")]
    CyclesTooFew(usize),
    #[error("white-noise sigma must be >= 0, got {0}")]
    NegativeSigma(f64),
    #[error("trace of {len} samples is too short for tau = {tau} cycles (needs {needed})")]
    TraceTooShort { len: usize, tau: usize, needed: usize },
    #[error("tau must be >= 1 cycle")]
    ZeroTau,
}

/// A precomputed per-cycle oscillator frequency-error sequence in Hz.
///
/// `cycle_period` is only a time-mapping label carried along for export and
/// reporting; every statistic of the samples is expressed in Hz and does not
/// depend on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseTrace {
    pub samples: Vec<f64>,
    pub cycle_period: f64,
    pub seed: u64,
}

impl NoiseTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_cycle_period(mut self, cycle_period: f64) -> Self {
        self.cycle_period = cycle_period;
        self
    }

    /// Mean of (x_{k+1} - x_k)^2 over the trace, the quantity calibrated to
    /// 2 Hz^2 for flicker traces.
    pub fn adjacent_difference_variance(&self) -> f64 {
        adjacent_difference_variance(&self.samples)
    }
}

fn adjacent_difference_variance(samples: &[f64]) -> f64 {
    let sum: f64 = samples.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    sum / (samples.len() - 1) as f64
}

/// Nyquist-taper weight making the sampled 1/f process Allan-flat down to
/// tau = 1: solves int_0^1/2 (1 - BETA 4 f^2) sin^2(pi f) / f df = ln 2, so
/// the tau = 1 Allan variance matches the large-tau plateau 2 ln 2 of the
/// 1/f spectrum.
const NYQUIST_TAPER: f64 = 0.372842;

/// Generate a flicker-FM trace of `cycles` samples, deterministic per seed.
///
/// The one-sided power spectrum of the samples scales as 1/f (up to the
/// Nyquist taper described in the module docs) and the trace is rescaled
/// after synthesis so that the adjacent-cycle difference variance is exactly
/// 2 Hz^2, i.e. the tau = 1 cycle Allan variance is exactly 1 Hz^2.
pub fn generate_flicker(cycles: usize, seed: u64) -> Result<NoiseTrace, NoiseError> {
    if cycles < 2 {
        return Err(NoiseError::CyclesTooFew(cycles));
    }
    // Synthesize at least twice the run length so the trace is a window into
    // the process rather than one exact period of it.
    let size = (2 * cycles).next_power_of_two();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut spectrum = vec![Complex64::new(0.0, 0.0); size];
    for k in 1..size / 2 {
        let f = k as f64 / size as f64;
        let mag = (taper(f) / f).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        spectrum[k] = Complex64::new(re * mag, im * mag);
        spectrum[size - k] = spectrum[k].conj();
    }
    {
        // Nyquist bin is its own conjugate pair, so it gets double weight.
        let f = 0.5;
        let mag = (2.0 * taper(f) / f).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        spectrum[size / 2] = Complex64::new(re * mag, 0.0);
    }

    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(size).process(&mut spectrum);
    let mut samples: Vec<f64> = spectrum[..cycles].iter().map(|z| z.re).collect();

    let measured = adjacent_difference_variance(&samples);
    let scale = (2.0 / measured).sqrt();
    for y in &mut samples {
        *y *= scale;
    }

    Ok(NoiseTrace { samples, cycle_period: 1.0, seed })
}

fn taper(f: f64) -> f64 {
    1.0 - NYQUIST_TAPER * (2.0 * f) * (2.0 * f)
}

/// i.i.d. zero-mean Gaussian frequency errors with standard deviation
/// `sigma`; used as a reference process with known Allan behavior.
pub fn generate_white(cycles: usize, sigma: f64, seed: u64) -> Result<NoiseTrace, NoiseError> {
    if sigma < 0.0 {
        return Err(NoiseError::NegativeSigma(sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..cycles)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(NoiseTrace { samples, cycle_period: 1.0, seed })
}

/// Overlapping Allan deviation at an averaging interval of `tau` cycles:
///
/// sigma_y(tau) = sqrt( 1/(2 (M - 2 tau + 1) tau^2) *
///                sum_i ( sum_{k=i+tau}^{i+2tau-1} x_k - sum_{k=i}^{i+tau-1} x_k )^2 )
///
/// over all M - 2 tau + 1 overlapping windows of a trace of M per-cycle
/// frequencies.
pub fn allan_deviation(samples: &[f64], tau: usize) -> Result<f64, NoiseError> {
    if tau == 0 {
        return Err(NoiseError::ZeroTau);
    }
    let m = samples.len();
    let needed = 2 * tau + 1;
    if m < needed {
        return Err(NoiseError::TraceTooShort { len: m, tau, needed });
    }

    // prefix[i] = sum of samples[..i]
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in samples {
        acc += x;
        prefix.push(acc);
    }

    let windows = m - 2 * tau + 1;
    let mut sum_sq = 0.0;
    for i in 0..windows {
        let first = prefix[i + tau] - prefix[i];
        let second = prefix[i + 2 * tau] - prefix[i + tau];
        sum_sq += (second - first).powi(2);
    }
    let var = sum_sq / (2.0 * windows as f64 * (tau as f64).powi(2));
    Ok(var.sqrt())
}

/// Overlapping Allan deviation tabulated over a set of averaging intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllanReport {
    /// Averaging intervals in cycles, strictly increasing.
    pub taus: Vec<usize>,
    /// Corresponding overlapping Allan deviations in Hz.
    pub adev: Vec<f64>,
}

/// Tabulate the overlapping Allan deviation of a trace; `taus` is sorted and
/// deduplicated before evaluation.
pub fn allan_report(trace: &NoiseTrace, taus: &[usize]) -> Result<AllanReport, NoiseError> {
    let mut taus: Vec<usize> = taus.to_vec();
    taus.sort_unstable();
    taus.dedup();
    let adev = taus
        .iter()
        .map(|&tau| allan_deviation(&trace.samples, tau))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AllanReport { taus, adev })
}
