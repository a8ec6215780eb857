//! Closed-loop clock servo simulation and instability estimation.
//!
//! Each probe cycle: the oscillator frequency error is the precomputed noise
//! sample minus the servo's accumulated corrections, the error maps to an
//! atom-oscillator phase phi = 2 pi f T, the evolved state is projected onto
//! the measurement basis, one outcome is drawn, and that outcome's frequency
//! correction is added to the servo sum with unit gain (the correction
//! values themselves set the effective loop gain). The recorded clock
//! frequency for a cycle is the error during the probe, before that cycle's
//! correction lands.
//!
//! Long-term instability is the variance of block-averaged frequencies
//! (default 100 cycles per block) extrapolated to a 1 s averaging time by
//! the 1/tau law, with wall-clock time per cycle equal to T (no dead time).
//! The first 10 blocks are discarded to drop the servo's cold-start
//! transient.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::NoiseTrace;
use crate::protocols::ClockProtocol;
use crate::symstate::sample_outcome;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("noise trace has {len} samples but {cycles} cycles were requested")]
    TraceTooShort { len: usize, cycles: usize },
    #[error("need at least {needed} blocks of {block_size} cycles after burn-in, got {got}")]
    TooFewBlocks { needed: usize, got: usize, block_size: usize },
    #[error("block size must be >= 1")]
    ZeroBlockSize,
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Everything the servo saw and did in one probe cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Oscillator frequency error during the probe, Hz.
    pub freq_error_hz: f64,
    /// Accumulated atom-oscillator phase, exactly 2 pi f T, radians.
    pub phase_rad: f64,
    /// Measurement outcome index.
    pub outcome: usize,
    /// Correction applied after this cycle, Hz.
    pub correction_hz: f64,
}

/// Long-term instability summary of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    /// Variance of block-averaged clock frequency extrapolated to a 1 s
    /// averaging time, Hz^2 (multiply block variance by block duration).
    pub variance_at_1s: f64,
    pub block_size: usize,
    pub cycles_run: usize,
    /// Cycles whose true frequency error exceeded the unambiguous phase
    /// window (|f| T > 1/2). Diagnostic; runs are never truncated on hops.
    pub fringe_hops: usize,
    /// Mean of phi^2 over the whole run, rad^2.
    pub phase_variance: f64,
    /// Mean frequency error over the post-burn-in blocks, Hz.
    pub mean_frequency: f64,
}

/// Default block length for instability estimation, in cycles.
pub const DEFAULT_BLOCK_SIZE: usize = 100;
/// Blocks discarded from the start of a run before block statistics.
pub const BURN_IN_BLOCKS: usize = 10;
/// Minimum usable blocks after burn-in.
const MIN_BLOCKS: usize = 10;

/// Run the closed servo loop for `cycles` cycles over a precomputed noise
/// trace. Outcome sampling is driven by a ChaCha8 stream from `seed`, so the
/// run is deterministic given (protocol, trace, seed).
pub fn run_clock(
    protocol: &ClockProtocol,
    trace: &NoiseTrace,
    cycles: usize,
    seed: u64,
) -> Result<Vec<CycleRecord>, SimError> {
    if trace.len() < cycles {
        return Err(SimError::TraceTooShort { len: trace.len(), cycles });
    }
    let dim = protocol.qubits() + 1;
    let t = protocol.probe_period();
    let corrections = protocol.corrections();

    // Flattened conjugated basis rows: p_j = |sum_m basis_conj[j,m] psi_m e^{-im phi}|^2.
    let psi: Vec<Complex64> = protocol.psi1().amplitudes().to_vec();
    let mut basis_conj = Vec::with_capacity(dim * dim);
    for vector in protocol.basis().vectors() {
        basis_conj.extend(vector.amplitudes().iter().map(|a| a.conj()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(cycles);
    let mut servo_sum = 0.0f64;
    let mut phased = vec![Complex64::new(0.0, 0.0); dim];
    let mut probs = vec![0.0f64; dim];

    for cycle in 0..cycles {
        let freq_error = trace.samples[cycle] - servo_sum;
        let phase = 2.0 * std::f64::consts::PI * freq_error * t;

        let step = Complex64::from_polar(1.0, -phase);
        let mut phasor = Complex64::new(1.0, 0.0);
        for m in 0..dim {
            phased[m] = psi[m] * phasor;
            phasor *= step;
        }
        for j in 0..dim {
            let row = &basis_conj[j * dim..(j + 1) * dim];
            let mut amp = Complex64::new(0.0, 0.0);
            for m in 0..dim {
                amp += row[m] * phased[m];
            }
            probs[j] = amp.norm_sqr();
        }

        let draw: f64 = rng.random();
        let outcome = sample_outcome(&probs, draw);
        let correction = corrections[outcome];
        servo_sum += correction;

        records.push(CycleRecord {
            cycle,
            freq_error_hz: freq_error,
            phase_rad: phase,
            outcome,
            correction_hz: correction,
        });
    }
    Ok(records)
}

/// Variance of block-mean frequencies, extrapolated to 1 s.
///
/// The run is split into consecutive blocks of `block_size` cycles; the
/// first [`BURN_IN_BLOCKS`] are discarded; the variance v of the remaining
/// block means is extrapolated as variance_at_1s = v * (block_size * T).
/// Phase variance and fringe hops are tallied over the whole run.
pub fn estimate_instability(
    records: &[CycleRecord],
    block_size: usize,
    probe_period: f64,
) -> Result<InstabilityReport, SimError> {
    if block_size == 0 {
        return Err(SimError::ZeroBlockSize);
    }
    if probe_period <= 0.0 {
        return Err(SimError::NonPositive { name: "probe_period", value: probe_period });
    }
    let total_blocks = records.len() / block_size;
    if total_blocks < BURN_IN_BLOCKS + MIN_BLOCKS {
        return Err(SimError::TooFewBlocks {
            needed: BURN_IN_BLOCKS + MIN_BLOCKS,
            got: total_blocks,
            block_size,
        });
    }

    let mut block_means = Vec::with_capacity(total_blocks - BURN_IN_BLOCKS);
    for b in BURN_IN_BLOCKS..total_blocks {
        let chunk = &records[b * block_size..(b + 1) * block_size];
        let mean = chunk.iter().map(|r| r.freq_error_hz).sum::<f64>() / block_size as f64;
        block_means.push(mean);
    }
    let used = block_means.len() as f64;
    let mean_frequency = block_means.iter().sum::<f64>() / used;
    let variance = block_means
        .iter()
        .map(|m| (m - mean_frequency).powi(2))
        .sum::<f64>()
        / used;
    let variance_at_1s = variance * (block_size as f64 * probe_period);

    let phase_variance =
        records.iter().map(|r| r.phase_rad.powi(2)).sum::<f64>() / records.len() as f64;

    Ok(InstabilityReport {
        variance_at_1s,
        block_size,
        cycles_run: records.len(),
        fringe_hops: count_fringe_hops(records, probe_period),
        phase_variance,
        mean_frequency,
    })
}

/// Projection-noise (standard quantum) limit on frequency stability:
/// sigma_f(tau) = 1/(2 pi sqrt(N T tau)) Hz.
pub fn sql_sigma(n: usize, probe_period: f64, tau: f64) -> Result<f64, SimError> {
    if n == 0 {
        return Err(SimError::NonPositive { name: "n", value: 0.0 });
    }
    if probe_period <= 0.0 {
        return Err(SimError::NonPositive { name: "probe_period", value: probe_period });
    }
    if tau <= 0.0 {
        return Err(SimError::NonPositive { name: "tau", value: tau });
    }
    Ok(1.0 / (2.0 * std::f64::consts::PI * (n as f64 * probe_period * tau).sqrt()))
}

/// Cycles whose true frequency error puts the accumulated phase outside the
/// unambiguous +-pi window: |f| T > 1/2. Uses the simulator-visible error a
/// real clock cannot observe, so this is a diagnostic only.
pub fn count_fringe_hops(records: &[CycleRecord], probe_period: f64) -> usize {
    records
        .iter()
        .filter(|r| r.freq_error_hz.abs() * probe_period > 0.5)
        .count()
}

/// Outcome-probability curves p_j(phi) tabulated on a phase grid; one row
/// per grid point.
pub fn probability_curves(protocol: &ClockProtocol, phi_grid: &[f64]) -> Vec<Vec<f64>> {
    phi_grid.iter().map(|&phi| protocol.probabilities_at(phi)).collect()
}
