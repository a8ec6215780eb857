//! Protocol optimization.
//!
//! Two entry points: refinement of a known family (only corrections, probe
//! period, and where applicable the squeezing parameter vary, with the
//! family's correction symmetry enforced) and a random-restart search over
//! the full N^2+4N+3-real parameter vector (screen cheap random candidates,
//! push the promising ones through Nelder-Mead).
//!
//! Monte Carlo objectives are noisy, which derivative-free optimizers
//! tolerate badly. Two mitigations are used throughout: common random
//! numbers (every candidate in a search is scored on the same precomputed
//! noise traces and the same measurement-draw streams) and a held-out
//! re-evaluation of finalists on disjoint seeds, which guards against
//! overfitting the shared traces.
//!
//! Everything is deterministic given the configuration: candidate draws,
//! trace seeds, and measurement streams all derive from the master seed,
//! and parallel results are reduced in candidate order.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::noise::{generate_flicker, NoiseError, NoiseTrace};
use crate::protocols::{
    buzek_protocol, decode_params, encode_params, ghz_protocol, init_corrections,
    ramsey_protocol, squeezed_protocol, ClockProtocol, ParamVector, ProtocolError,
    DEFAULT_PRIOR_PHASE_RAD,
};
use crate::simulator::{estimate_instability, run_clock, SimError, DEFAULT_BLOCK_SIZE};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint at line {line}: {reason}")]
    CorruptCheckpoint { line: usize, reason: String },
    #[error("checkpoint belongs to a different search (digest {found}, expected {expected})")]
    ResumeConflict { expected: String, found: String },
    #[error("worker pool: {0}")]
    ThreadPool(String),
}

// Stream tags for seed derivation; distinct per purpose so no two RNG
// streams in a search coincide.
const STREAM_EVAL: u64 = 1;
const STREAM_HOLDOUT: u64 = 2;
const STREAM_MEASURE: u64 = 3;
const STREAM_CANDIDATE: u64 = 4;
const STREAM_OFFSETS: u64 = 5;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed derivation: one stream tag and index per consumer.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut state = master;
    let _ = splitmix64(&mut state);
    state ^= stream.wrapping_mul(0xA24B_AED4_963E_E407);
    let _ = splitmix64(&mut state);
    state ^= index.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    splitmix64(&mut state)
}

/// The analytic protocol families the refiner knows how to rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ramsey,
    Ghz,
    Squeezed,
    Buzek,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Ramsey => "ramsey",
            Family::Ghz => "ghz",
            Family::Squeezed => "squeezed",
            Family::Buzek => "buzek",
        }
    }

    pub fn uses_kappa(self) -> bool {
        matches!(self, Family::Squeezed)
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ramsey" => Ok(Family::Ramsey),
            "ghz" => Ok(Family::Ghz),
            "squeezed" => Ok(Family::Squeezed),
            "buzek" => Ok(Family::Buzek),
            other => Err(format!("unknown protocol family '{other}'")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Search configuration with every default materialized, so a serialized
/// config fully reproduces a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n: usize,
    pub master_seed: u64,
    /// Cycles per full objective evaluation.
    pub cycles: usize,
    /// Cycles for the cheap screening pass of the random search.
    pub screen_cycles: usize,
    /// Common-random-number trace seeds used by every objective call.
    pub eval_seeds: Vec<u64>,
    /// Disjoint seeds for re-evaluating finalists.
    pub holdout_seeds: Vec<u64>,
    pub restarts: usize,
    /// Screening threshold in Hz^2 at 1 s; None derives
    /// 1.05 x the refined Ramsey objective at the same qubit count.
    pub threshold_hz2: Option<f64>,
    /// Simplex size (infinity-norm) termination tolerance.
    pub param_tol: f64,
    /// Objective-spread termination tolerance, Hz^2.
    pub objective_tol: f64,
    /// Nelder-Mead iteration cap per refinement.
    pub max_iterations: usize,
    pub workers: usize,
    pub block_size: usize,
}

impl SearchConfig {
    pub fn new(n: usize, master_seed: u64) -> Self {
        let eval_seeds = (0..2).map(|i| derive_seed(master_seed, STREAM_EVAL, i)).collect();
        let holdout_seeds =
            (0..2).map(|i| derive_seed(master_seed, STREAM_HOLDOUT, i)).collect();
        Self {
            n,
            master_seed,
            cycles: 100_000,
            screen_cycles: 10_000,
            eval_seeds,
            holdout_seeds,
            restarts: 200,
            threshold_hz2: None,
            param_tol: 1e-5,
            objective_tol: 1e-9,
            max_iterations: 400,
            workers: std::thread::available_parallelism().map(|p| p.get()).unwrap_or(1),
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let fail = |msg: String| Err(SearchError::InvalidConfig(msg));
        if self.n < 1 {
            return fail("n must be >= 1".into());
        }
        if self.cycles < 10_000 {
            return fail(format!("cycles must be >= 10000, got {}", self.cycles));
        }
        if self.restarts < 1 {
            return fail("restart count must be >= 1".into());
        }
        if !(self.param_tol > 0.0 && self.objective_tol > 0.0) {
            return fail("simplex tolerances must be > 0".into());
        }
        if self.eval_seeds.is_empty() || self.holdout_seeds.is_empty() {
            return fail("need at least one evaluation and one holdout seed".into());
        }
        if self.eval_seeds.iter().any(|s| self.holdout_seeds.contains(s)) {
            return fail("holdout seeds must be disjoint from evaluation seeds".into());
        }
        if self.workers < 1 {
            return fail("worker count must be >= 1".into());
        }
        if self.block_size < 1 {
            return fail("block size must be >= 1".into());
        }
        Ok(())
    }

    /// Stable digest of the full configuration, recorded in results and
    /// checkpoints so a resume against a different config is refused.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = DefaultHasher::new();
        hasher.write(json.as_bytes());
        format!("{:016x}", hasher.finish())
    }

    pub fn eval_context(&self) -> Result<EvalContext, SearchError> {
        EvalContext::new(&self.eval_seeds, self.cycles, self.block_size)
    }

    pub fn screen_context(&self) -> Result<EvalContext, SearchError> {
        EvalContext::new(&self.eval_seeds, self.screen_cycles, self.block_size)
    }

    pub fn holdout_context(&self) -> Result<EvalContext, SearchError> {
        EvalContext::new(&self.holdout_seeds, self.cycles, self.block_size)
    }
}

/// Precomputed noise traces plus measurement streams shared by every
/// candidate scored in one search (the common-random-number discipline).
pub struct EvalContext {
    traces: Vec<NoiseTrace>,
    measure_seeds: Vec<u64>,
    cycles: usize,
    block_size: usize,
}

impl EvalContext {
    pub fn new(trace_seeds: &[u64], cycles: usize, block_size: usize) -> Result<Self, SearchError> {
        let traces = trace_seeds
            .iter()
            .map(|&s| generate_flicker(cycles, s))
            .collect::<Result<Vec<_>, _>>()?;
        let measure_seeds =
            trace_seeds.iter().map(|&s| derive_seed(s, STREAM_MEASURE, 0)).collect();
        Ok(Self { traces, measure_seeds, cycles, block_size })
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }

    pub fn replicas(&self) -> usize {
        self.traces.len()
    }

    pub fn trace(&self, replica: usize) -> &NoiseTrace {
        &self.traces[replica]
    }

    pub fn measure_seed(&self, replica: usize) -> u64 {
        self.measure_seeds[replica]
    }
}

/// Mean variance-at-1s of a protocol over the context's replicas.
pub fn evaluate_protocol(
    protocol: &ClockProtocol,
    ctx: &EvalContext,
) -> Result<f64, SearchError> {
    let mut total = 0.0;
    for (trace, &seed) in ctx.traces.iter().zip(&ctx.measure_seeds) {
        let records = run_clock(protocol, trace, ctx.cycles, seed)?;
        let report = estimate_instability(&records, ctx.block_size, protocol.probe_period())?;
        total += report.variance_at_1s;
    }
    Ok(total / ctx.traces.len() as f64)
}

/// The search objective: decode a parameter vector and score it on the
/// config's common-random-number seeds. Deterministic given (params, cfg).
pub fn objective(params: &ParamVector, cfg: &SearchConfig) -> Result<f64, SearchError> {
    let protocol = decode_params(params)?;
    let ctx = cfg.eval_context()?;
    evaluate_protocol(&protocol, &ctx)
}

/// Iterate the Gaussian-prior correction rule to self-consistency: run the
/// loop, read off the realized phase spread, and recompute the corrections
/// with that spread as the prior. Converges in a few passes and gives a
/// near-optimal small-signal servo without any simplex work.
pub fn self_consistent_corrections(
    protocol: &ClockProtocol,
    ctx: &EvalContext,
    iterations: usize,
) -> Result<ClockProtocol, SearchError> {
    let mut current = protocol.clone();
    let t = current.probe_period();
    for _ in 0..iterations {
        let records = run_clock(&current, &ctx.traces[0], ctx.cycles, ctx.measure_seeds[0])?;
        let report = estimate_instability(&records, ctx.block_size, t)?;
        let sigma_phi = report.phase_variance.sqrt().clamp(1e-4, 20.0);
        let sigma_f = sigma_phi / (2.0 * std::f64::consts::PI * t);
        current = current.with_corrections(init_corrections(&current, sigma_f)?)?;
    }
    Ok(current)
}

/// Options for [`nelder_mead`].
#[derive(Debug, Clone)]
pub struct NmOptions {
    pub param_tol: f64,
    pub objective_tol: f64,
    pub max_iterations: usize,
    /// Absolute initial simplex step for coordinates near zero; coordinates
    /// with magnitude get a 10% relative step.
    pub init_step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self { param_tol: 1e-6, objective_tol: 1e-12, max_iterations: 400, init_step: 0.25 }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Downhill simplex minimization with the standard coefficients
/// (reflection 1, expansion 2, contraction 0.5, shrink 0.5). Terminates
/// when the simplex diameter falls below `param_tol`, the objective spread
/// falls below `objective_tol`, or the iteration cap is reached. The best
/// vertex never worsens, so the result is never above f(x0).
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NmOptions,
) -> NmResult {
    assert!(!x0.is_empty(), "nelder_mead needs at least one dimension");
    let dim = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], count: &mut usize| -> f64 {
        *count += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 { 0.1 * v[i].abs() } else { opts.init_step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();

    if opts.max_iterations == 0 {
        return NmResult { x: x0.to_vec(), fx: values[0], iterations: 0, evaluations };
    }

    let mut iterations = 0usize;
    while iterations < opts.max_iterations {
        iterations += 1;

        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        let spread = values[worst] - values[best];
        if diameter < opts.param_tol || spread < opts.objective_tol {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }

        let point_at = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = point_at(1.0);
        let f_reflected = eval(&reflected, &mut evaluations);

        if f_reflected < values[best] {
            let expanded = point_at(2.0);
            let f_expanded = eval(&expanded, &mut evaluations);
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
        } else if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            let (contracted, f_contracted) = if f_reflected < values[worst] {
                let outside = point_at(0.5);
                let f_outside = eval(&outside, &mut evaluations);
                (outside, f_outside)
            } else {
                let inside = point_at(-0.5);
                let f_inside = eval(&inside, &mut evaluations);
                (inside, f_inside)
            };
            if f_contracted < values[worst].min(f_reflected) {
                simplex[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                // shrink toward the best vertex
                let anchor = simplex[best].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i == best {
                        continue;
                    }
                    for (x, a) in v.iter_mut().zip(&anchor) {
                        *x = a + 0.5 * (*x - a);
                    }
                    values[i] = eval(v, &mut evaluations);
                }
            }
        }
    }

    let best = (0..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    NmResult { x: simplex[best].clone(), fx: values[best], iterations, evaluations }
}

/// Where a search result came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_digest: String,
}

/// Outcome of a refinement or search run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ParamVector,
    pub protocol: ClockProtocol,
    /// Objective on the common-random-number evaluation seeds, Hz^2 at 1 s.
    pub objective_hz2: f64,
    /// Re-evaluation on the disjoint held-out seeds, Hz^2 at 1 s.
    pub holdout_hz2: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when no screened candidate cleared the threshold and the best
    /// screened vector is returned without simplex refinement.
    pub refined: bool,
    /// Whether the final objective clears the screening threshold (always
    /// checked against the full objective).
    pub meets_threshold: bool,
    pub threshold_hz2: Option<f64>,
    /// Optimized squeezing parameter, for squeezed-family refinements.
    pub kappa: Option<f64>,
    pub provenance: Provenance,
}

fn make_result(
    protocol: ClockProtocol,
    objective_hz2: f64,
    holdout_hz2: f64,
    nm: Option<&NmResult>,
    refined: bool,
    threshold_hz2: Option<f64>,
    kappa: Option<f64>,
    cfg: &SearchConfig,
) -> SearchResult {
    SearchResult {
        best: encode_params(&protocol),
        protocol,
        objective_hz2,
        holdout_hz2,
        iterations: nm.map_or(0, |r| r.iterations),
        evaluations: nm.map_or(0, |r| r.evaluations),
        refined,
        meets_threshold: threshold_hz2.map_or(true, |t| objective_hz2 <= t),
        threshold_hz2,
        kappa,
        provenance: Provenance { master_seed: cfg.master_seed, config_digest: cfg.digest() },
    }
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (ln_lo + (ln_hi - ln_lo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn family_protocol(
    family: Family,
    n: usize,
    t: f64,
    kappa: Option<f64>,
) -> Result<ClockProtocol, ProtocolError> {
    match family {
        Family::Ramsey => ramsey_protocol(n, t),
        Family::Ghz => ghz_protocol(n, t),
        Family::Squeezed => squeezed_protocol(n, kappa.expect("squeezed needs kappa"), t),
        Family::Buzek => buzek_protocol(n, n % 2 == 1, t),
    }
}

/// Number of independent correction parameters once the family symmetry is
/// applied.
fn free_correction_count(family: Family, n: usize) -> usize {
    match family {
        // antisymmetric under outcome reflection j <-> N-j
        Family::Ramsey | Family::Squeezed => (n + 1) / 2,
        // only the two parity outcomes are reachable
        Family::Ghz => 2,
        Family::Buzek => n + 1,
    }
}

fn expand_corrections(family: Family, n: usize, free: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; n + 1];
    match family {
        Family::Ramsey | Family::Squeezed => {
            for (j, &c) in free.iter().enumerate() {
                full[j] = c;
                full[n - j] = -c;
            }
        }
        Family::Ghz => {
            full[0] = free[0];
            full[1] = free[1];
        }
        Family::Buzek => full.copy_from_slice(free),
    }
    full
}

fn contract_corrections(family: Family, n: usize, full: &[f64]) -> Vec<f64> {
    match family {
        Family::Ramsey | Family::Squeezed => full[..(n + 1) / 2].to_vec(),
        Family::Ghz => full[..2].to_vec(),
        Family::Buzek => full.to_vec(),
    }
}

/// Bounds of the coarse probe-period grid, seconds.
const T_GRID: (f64, f64, usize) = (0.01, 3.0, 13);
/// Probe-period range for random candidates, seconds (log-uniform).
const T_RANDOM_RANGE: (f64, f64) = (0.01, 10.0);

/// Refine a known protocol family at fixed initial state and basis: the
/// frequency corrections (under the family's symmetry), the probe period,
/// and for the squeezed family the squeezing parameter are optimized.
/// Starts from a coarse (T, kappa) grid screened at `screen_cycles`, then
/// polishes with Nelder-Mead on the full objective.
pub fn refine_known(
    family: Family,
    n: usize,
    cfg: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let screen_ctx = cfg.screen_context()?;
    let eval_ctx = cfg.eval_context()?;
    let holdout_ctx = cfg.holdout_context()?;

    let t_grid = log_grid(T_GRID.0, T_GRID.1, T_GRID.2);
    let kappa_grid: Vec<Option<f64>> = if family.uses_kappa() {
        let hi = (0.9 * n as f64).max(0.8);
        log_grid(0.4, hi, 8).into_iter().map(Some).collect()
    } else {
        vec![None]
    };

    let mut best: Option<(f64, f64, Option<f64>, ClockProtocol)> = None;
    for &t in &t_grid {
        for &kappa in &kappa_grid {
            let raw = family_protocol(family, n, t, kappa)?;
            let tuned = self_consistent_corrections(&raw, &screen_ctx, 2)?;
            let value = evaluate_protocol(&tuned, &screen_ctx)?;
            if best.as_ref().map_or(true, |(v, ..)| value < *v) {
                best = Some((value, t, kappa, tuned));
            }
        }
    }
    let (_, t0, kappa0, seed_protocol) = best.expect("grid is nonempty");

    // Reduced vector: [free corrections.., ln T, (ln kappa)]. Random offsets
    // on the correction start break symmetry the same way every run (seeded).
    let mut x0 = contract_corrections(family, n, seed_protocol.corrections());
    let mut offsets = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, STREAM_OFFSETS, 0));
    let scale = x0.iter().fold(0.0f64, |acc, c| acc.max(c.abs())).max(1e-3);
    for c in &mut x0 {
        *c += 0.05 * scale * offsets.sample::<f64, _>(StandardNormal);
    }
    x0.push(t0.ln());
    if let Some(k) = kappa0 {
        x0.push(k.ln());
    }

    let free = free_correction_count(family, n);
    let nm_objective = |x: &[f64]| -> f64 {
        let t = x[free].exp();
        let kappa = family.uses_kappa().then(|| x[free + 1].exp());
        let corrections = expand_corrections(family, n, &x[..free]);
        match family_protocol(family, n, t, kappa)
            .map_err(SearchError::from)
            .and_then(|p| p.with_corrections(corrections).map_err(SearchError::from))
            .and_then(|p| evaluate_protocol(&p, &eval_ctx))
        {
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        }
    };
    let opts = NmOptions {
        param_tol: cfg.param_tol,
        objective_tol: cfg.objective_tol,
        max_iterations: cfg.max_iterations,
        init_step: 0.25,
    };
    let nm = nelder_mead(nm_objective, &x0, &opts);

    let t_best = nm.x[free].exp();
    let kappa_best = family.uses_kappa().then(|| nm.x[free + 1].exp());
    let protocol = family_protocol(family, n, t_best, kappa_best)?
        .with_corrections(expand_corrections(family, n, &nm.x[..free]))?;
    let objective_hz2 = evaluate_protocol(&protocol, &eval_ctx)?;
    let holdout_hz2 = evaluate_protocol(&protocol, &holdout_ctx)?;
    Ok(make_result(
        protocol,
        objective_hz2,
        holdout_hz2,
        Some(&nm),
        true,
        None,
        kappa_best,
        cfg,
    ))
}

/// Refine only the per-outcome corrections of an arbitrary protocol, with
/// the probe period optionally joining the optimization. Initial corrections
/// come from the self-consistent Gaussian-prior rule.
pub fn refine_corrections(
    protocol: &ClockProtocol,
    cfg: &SearchConfig,
    vary_probe_period: bool,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let eval_ctx = cfg.eval_context()?;
    let holdout_ctx = cfg.holdout_context()?;

    let tuned = self_consistent_corrections(protocol, &eval_ctx, 3)?;
    let n = tuned.qubits();
    let mut x0 = tuned.corrections().to_vec();
    if vary_probe_period {
        x0.push(tuned.probe_period().ln());
    }

    let base = tuned.clone();
    let nm_objective = |x: &[f64]| -> f64 {
        let corrections = x[..n + 1].to_vec();
        let t = if vary_probe_period { x[n + 1].exp() } else { base.probe_period() };
        match base
            .with_probe_period(t)
            .and_then(|p| p.with_corrections(corrections))
            .map_err(SearchError::from)
            .and_then(|p| evaluate_protocol(&p, &eval_ctx))
        {
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        }
    };
    let opts = NmOptions {
        param_tol: cfg.param_tol,
        objective_tol: cfg.objective_tol,
        max_iterations: cfg.max_iterations,
        init_step: 0.1,
    };
    let nm = nelder_mead(nm_objective, &x0, &opts);

    let t = if vary_probe_period { nm.x[n + 1].exp() } else { base.probe_period() };
    let refined = base.with_probe_period(t)?.with_corrections(nm.x[..n + 1].to_vec())?;
    let objective_hz2 = evaluate_protocol(&refined, &eval_ctx)?;
    let holdout_hz2 = evaluate_protocol(&refined, &holdout_ctx)?;
    Ok(make_result(refined, objective_hz2, holdout_hz2, Some(&nm), true, None, None, cfg))
}

/// Polish an arbitrary protocol over the full parameter vector, starting
/// from its encoding. With a zero iteration cap this returns the warm start
/// unchanged; otherwise the result is never worse than the warm start on
/// the optimization seeds.
pub fn warm_start_search(
    protocol: &ClockProtocol,
    cfg: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let eval_ctx = cfg.eval_context()?;
    let holdout_ctx = cfg.holdout_context()?;
    let n = protocol.qubits();

    let x0 = encode_params(protocol);
    let nm_objective = |x: &[f64]| -> f64 {
        match ParamVector::new(n, x.to_vec())
            .and_then(|pv| decode_params(&pv))
            .map_err(SearchError::from)
            .and_then(|p| evaluate_protocol(&p, &eval_ctx))
        {
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        }
    };
    let opts = NmOptions {
        param_tol: cfg.param_tol,
        objective_tol: cfg.objective_tol,
        max_iterations: cfg.max_iterations,
        init_step: 0.1,
    };
    let nm = nelder_mead(nm_objective, &x0.reals, &opts);

    let best = ParamVector::new(n, nm.x.clone())?;
    let refined = decode_params(&best)?;
    let objective_hz2 = evaluate_protocol(&refined, &eval_ctx)?;
    let holdout_hz2 = evaluate_protocol(&refined, &holdout_ctx)?;
    Ok(make_result(refined, objective_hz2, holdout_hz2, Some(&nm), true, None, None, cfg))
}

/// One checkpoint line: a JSON object per line, append-only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
enum CheckpointLine {
    Config { digest: String, n: usize, restarts: usize },
    /// `value` is None when the candidate failed to decode or evaluate.
    Screen { index: usize, value: Option<f64> },
    Refine { index: usize, value: Option<f64>, vector: Vec<f64> },
}

#[derive(Default)]
struct CheckpointState {
    screens: HashMap<usize, Option<f64>>,
    refines: HashMap<usize, (Option<f64>, Vec<f64>)>,
}

struct CheckpointLog {
    path: Option<PathBuf>,
    state: CheckpointState,
}

impl CheckpointLog {
    fn open(path: Option<&Path>, cfg: &SearchConfig) -> Result<Self, SearchError> {
        let Some(path) = path else {
            return Ok(Self { path: None, state: CheckpointState::default() });
        };
        let mut state = CheckpointState::default();
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            let reader = BufReader::new(std::fs::File::open(path)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CheckpointLine =
                    serde_json::from_str(&line).map_err(|e| SearchError::CorruptCheckpoint {
                        line: line_no + 1,
                        reason: e.to_string(),
                    })?;
                match parsed {
                    CheckpointLine::Config { digest, .. } => {
                        if line_no != 0 {
                            return Err(SearchError::CorruptCheckpoint {
                                line: line_no + 1,
                                reason: "config line not at start".into(),
                            });
                        }
                        if digest != cfg.digest() {
                            return Err(SearchError::ResumeConflict {
                                expected: cfg.digest(),
                                found: digest,
                            });
                        }
                    }
                    CheckpointLine::Screen { index, value } => {
                        state.screens.insert(index, value);
                    }
                    CheckpointLine::Refine { index, value, vector } => {
                        state.refines.insert(index, (value, vector));
                    }
                }
            }
            if state.screens.is_empty() && state.refines.is_empty() {
                // file holding only a config line is fine
            }
        } else {
            let mut file = std::fs::File::create(path)?;
            let line = CheckpointLine::Config {
                digest: cfg.digest(),
                n: cfg.n,
                restarts: cfg.restarts,
            };
            writeln!(file, "{}", serde_json::to_string(&line).expect("serializes"))?;
        }
        Ok(Self { path: Some(path.to_path_buf()), state })
    }

    fn append(&mut self, lines: &[CheckpointLine]) -> Result<(), SearchError> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut file = std::fs::OpenOptions::new().append(true).open(path)?;
        for line in lines {
            writeln!(file, "{}", serde_json::to_string(line).expect("serializes"))?;
        }
        file.flush()?;
        Ok(())
    }
}

fn random_candidate(n: usize, cfg: &SearchConfig, index: u64) -> Result<ParamVector, SearchError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, STREAM_CANDIDATE, index));
    let len = ParamVector::expected_len(n);
    let mut reals = vec![0.0; len];
    for r in reals.iter_mut().take(2 * n + 1) {
        *r = rng.sample(StandardNormal);
    }
    let planes = n * (n + 1) / 2;
    let mut idx = 2 * n + 1;
    for _ in 0..planes {
        reals[idx] = rng.sample(StandardNormal);
        reals[idx + 1] = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        idx += 2;
    }
    let (t_lo, t_hi) = T_RANDOM_RANGE;
    let t = (rng.random_range(t_lo.ln()..t_hi.ln())).exp();
    reals[len - 1] = t;

    // Corrections: the Gaussian-prior posterior means for the drawn state
    // and basis, plus small random offsets.
    let skeleton = ParamVector::new(n, reals.clone())?;
    let decoded = decode_params(&skeleton)?;
    let sigma_f = DEFAULT_PRIOR_PHASE_RAD / (2.0 * std::f64::consts::PI * t);
    let corrections = init_corrections(&decoded, sigma_f)?;
    for (j, c) in corrections.iter().enumerate() {
        reals[idx + j] = c + 0.05 * sigma_f * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(ParamVector { n, reals })
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Random-restart search over the full parameter space: draw `restarts`
/// random protocols, screen each with a cheap low-cycle evaluation, refine
/// the ones below the threshold with Nelder-Mead on the full objective, and
/// return the winner by held-out re-evaluation (ties broken by vector
/// order, so worker scheduling cannot change the answer). If no candidate
/// clears the threshold the best screened one is returned unrefined.
///
/// With a checkpoint path the screen/refine progress is logged as JSON
/// lines and a rerun resumes after the last complete batch.
pub fn random_restart_search(
    cfg: &SearchConfig,
    checkpoint: Option<&Path>,
) -> Result<SearchResult, SearchError> {
    cfg.validate()?;
    let n = cfg.n;
    let screen_ctx = cfg.screen_context()?;
    let eval_ctx = cfg.eval_context()?;
    let holdout_ctx = cfg.holdout_context()?;

    let threshold = match cfg.threshold_hz2 {
        Some(v) => v,
        None => {
            let ramsey = refine_known(Family::Ramsey, n, cfg)?;
            1.05 * ramsey.objective_hz2
        }
    };

    let mut log = CheckpointLog::open(checkpoint, cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SearchError::ThreadPool(e.to_string()))?;

    // Screening, in deterministic batches.
    let mut screen_values: Vec<Option<f64>> = vec![None; cfg.restarts];
    let mut screened: Vec<bool> = vec![false; cfg.restarts];
    for (idx, value) in &log.state.screens {
        if *idx < cfg.restarts {
            screen_values[*idx] = *value;
            screened[*idx] = true;
        }
    }
    let batch = (cfg.workers * 4).max(8);
    let mut pending: Vec<usize> = (0..cfg.restarts).filter(|&i| !screened[i]).collect();
    for chunk in pending.chunks(batch) {
        let results: Vec<(usize, Option<f64>)> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| {
                    let value = random_candidate(n, cfg, i as u64)
                        .and_then(|pv| decode_params(&pv).map_err(SearchError::from))
                        .and_then(|p| evaluate_protocol(&p, &screen_ctx))
                        .ok();
                    (i, value)
                })
                .collect()
        });
        let lines: Vec<CheckpointLine> = results
            .iter()
            .map(|&(index, value)| CheckpointLine::Screen { index, value })
            .collect();
        log.append(&lines)?;
        for (i, value) in results {
            screen_values[i] = value;
            screened[i] = true;
        }
    }

    // Refinement of survivors.
    let survivors: Vec<usize> = (0..cfg.restarts)
        .filter(|&i| screen_values[i].is_some_and(|v| v <= threshold))
        .collect();
    let mut refined: HashMap<usize, (Option<f64>, Vec<f64>)> = log.state.refines.clone();
    let todo: Vec<usize> =
        survivors.iter().copied().filter(|i| !refined.contains_key(i)).collect();
    let opts = NmOptions {
        param_tol: cfg.param_tol,
        objective_tol: cfg.objective_tol,
        max_iterations: cfg.max_iterations,
        init_step: 0.1,
    };
    for chunk in todo.chunks(batch.max(1)) {
        let results: Vec<(usize, Option<f64>, Vec<f64>)> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| {
                    let candidate = match random_candidate(n, cfg, i as u64) {
                        Ok(c) => c,
                        Err(_) => return (i, None, Vec::new()),
                    };
                    let nm = nelder_mead(
                        |x| match ParamVector::new(n, x.to_vec())
                            .and_then(|pv| decode_params(&pv))
                            .map_err(SearchError::from)
                            .and_then(|p| evaluate_protocol(&p, &eval_ctx))
                        {
                            Ok(v) => v,
                            Err(_) => f64::INFINITY,
                        },
                        &candidate.reals,
                        &opts,
                    );
                    if nm.fx.is_finite() {
                        (i, Some(nm.fx), nm.x)
                    } else {
                        (i, None, Vec::new())
                    }
                })
                .collect()
        });
        let lines: Vec<CheckpointLine> = results
            .iter()
            .map(|(index, value, vector)| CheckpointLine::Refine {
                index: *index,
                value: *value,
                vector: vector.clone(),
            })
            .collect();
        log.append(&lines)?;
        for (i, value, vector) in results {
            refined.insert(i, (value, vector));
        }
    }

    // Deterministic winner selection on held-out seeds.
    let mut finalists: Vec<(usize, ParamVector)> = Vec::new();
    for &i in &survivors {
        if let Some((Some(_), vector)) = refined.get(&i) {
            if let Ok(pv) = ParamVector::new(n, vector.clone()) {
                finalists.push((i, pv));
            }
        }
    }

    if finalists.is_empty() {
        // Nothing cleared the threshold: return the best screened candidate,
        // flagged unrefined.
        let best_idx = (0..cfg.restarts)
            .filter(|&i| screen_values[i].is_some())
            .min_by(|&a, &b| screen_values[a].unwrap().total_cmp(&screen_values[b].unwrap()))
            .ok_or_else(|| {
                SearchError::InvalidConfig("no candidate evaluated successfully".into())
            })?;
        let best = random_candidate(n, cfg, best_idx as u64)?;
        let protocol = decode_params(&best)?;
        let objective_hz2 = evaluate_protocol(&protocol, &eval_ctx)?;
        let holdout_hz2 = evaluate_protocol(&protocol, &holdout_ctx)?;
        let mut result = make_result(
            protocol,
            objective_hz2,
            holdout_hz2,
            None,
            false,
            Some(threshold),
            None,
            cfg,
        );
        result.best = best;
        return Ok(result);
    }

    let scored: Vec<(usize, ParamVector, f64)> = pool.install(|| {
        finalists
            .par_iter()
            .map(|(i, pv)| {
                let value = decode_params(pv)
                    .map_err(SearchError::from)
                    .and_then(|p| evaluate_protocol(&p, &holdout_ctx))
                    .unwrap_or(f64::INFINITY);
                (*i, pv.clone(), value)
            })
            .collect()
    });
    let winner = scored
        .iter()
        .min_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then_with(|| {
                    if lexicographic_less(&a.1.reals, &b.1.reals) {
                        std::cmp::Ordering::Less
                    } else {
                        std::cmp::Ordering::Greater
                    }
                })
        })
        .expect("finalists nonempty");

    let protocol = decode_params(&winner.1)?;
    let objective_hz2 = evaluate_protocol(&protocol, &eval_ctx)?;
    let mut result = make_result(
        protocol,
        objective_hz2,
        winner.2,
        None,
        true,
        Some(threshold),
        None,
        cfg,
    );
    result.best = winner.1.clone();
    Ok(result)
}
