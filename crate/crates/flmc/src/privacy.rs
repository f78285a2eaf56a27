//! Differential-privacy accounting for both transmission schemes.
//!
//! Digital rounds get a worst-case privacy-loss sampler: channel noise is
//! drawn, both interferer sign branches are evaluated with the quantizer
//! probabilities pinned to the clipped extremes, and the larger absolute
//! log-ratio sum is kept. The per-round delta is then the Monte Carlo
//! exceedance fraction. Each per-symbol log ratio is bounded by
//! `ln(phi(ell) / phi(-ell))`, which for the sigmoid equals `a * ell`, so
//! digital loss samples can never exceed `m * a * ell` no matter the gain or
//! the noise power.
//!
//! Analog rounds admit a closed form through `T(x)`: the worst-case loss is
//! Gaussian with mean `x = 2 m A^2 ell^2 / N0` and variance `2x`. `T` ships
//! in two modes: `Paper` returns the raw two-term erf difference, and
//! `Corrected` halves it, which makes `T(x)` the exact interval probability
//! `Pr(|loss| <= epsilon)`; the Monte Carlo sampler `analog_delta_mc` is the
//! independent oracle that pins the half factor down.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GradientBound;
use crate::quantizer::{phi, QuantizerSpec};

/// Target (epsilon, delta) differential-privacy level for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let b = PrivacyBudget { epsilon, delta };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::Config(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Evaluation mode for the analog accountant's `T` function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TMode {
    /// Raw two-term erf difference; ranges over (0, 2).
    Paper,
    /// Half the printed value: the exact Gaussian interval probability.
    Corrected,
}

/// A Monte Carlo delta estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    pub delta_hat: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

impl DeltaEstimate {
    fn from_count(exceeded: usize, n: usize) -> Self {
        let d = exceeded as f64 / n as f64;
        DeltaEstimate {
            delta_hat: d,
            std_err: (d * (1.0 - d) / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// Worst-case quantizer probabilities entering the digital log ratios.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogRatioParams {
    p_plus: f64,
    p_minus: f64,
}

impl LogRatioParams {
    pub(crate) fn new(bound: &GradientBound, qspec: &QuantizerSpec) -> Self {
        LogRatioParams {
            p_plus: phi(bound.get(), qspec),
            p_minus: phi(-bound.get(), qspec),
        }
    }

    /// Per-symbol log ratio as a function of the exponent `t`, evaluated so
    /// that neither branch overflows: the `exp` argument is never positive.
    fn term(&self, t: f64) -> f64 {
        let (pl, pm) = (self.p_plus, self.p_minus);
        if t >= 0.0 {
            let e = (-t).exp();
            (pl + (1.0 - pl) * e).ln() - (pm + (1.0 - pm) * e).ln()
        } else {
            let e = t.exp();
            (pl * e + (1.0 - pl)).ln() - (pm * e + (1.0 - pm)).ln()
        }
    }
}

/// Worst-case digital privacy loss for one noise realization `z`
/// (length `m`, entries `~ N(0, N0)`).
pub(crate) fn digital_loss_from_noise(
    gain: f64,
    k_devices: usize,
    n0: f64,
    ratio: &LogRatioParams,
    z: &[f64],
) -> f64 {
    let offset = gain * (k_devices as f64 - 1.0);
    let mut best = 0.0f64;
    for sign in [1.0, -1.0] {
        let mut sum = 0.0;
        for &zi in z {
            let t = 2.0 * gain * (zi + sign * offset) / n0;
            sum += ratio.term(t);
        }
        best = best.max(sum.abs());
    }
    best
}

/// Draws one worst-case digital privacy-loss sample.
///
/// Always at most `m * ln(phi(ell)/phi(-ell))`; for the sigmoid this cap is
/// exactly `m * a * ell`.
pub fn digital_loss_sample<R: Rng + ?Sized>(
    a_gain: f64,
    k_devices: usize,
    m: usize,
    n0: f64,
    ell: &GradientBound,
    qspec: &QuantizerSpec,
    rng: &mut R,
) -> f64 {
    let ratio = LogRatioParams::new(ell, qspec);
    let sd = n0.sqrt();
    let z: Vec<f64> = (0..m)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * sd
        })
        .collect();
    digital_loss_from_noise(a_gain, k_devices, n0, &ratio, &z)
}

/// A batch of privacy-loss magnitudes with the parameters that produced it.
#[derive(Debug, Clone)]
pub struct LossSampleSet {
    pub samples: Vec<f64>,
    pub meta: LossMeta,
}

/// Provenance of a [`LossSampleSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMeta {
    pub a_gain: f64,
    pub k_devices: usize,
    pub m: usize,
    pub n0: f64,
    pub ell: f64,
    pub a: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl LossSampleSet {
    /// Draws `n_samples` worst-case digital loss samples, split over worker
    /// substreams of `seed`; the result is independent of thread count.
    #[allow(clippy::too_many_arguments)]
    pub fn collect_digital(
        a_gain: f64,
        k_devices: usize,
        m: usize,
        n0: f64,
        ell: &GradientBound,
        qspec: &QuantizerSpec,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        let ratio = LogRatioParams::new(ell, qspec);
        let sd = n0.sqrt();
        const CHUNK: usize = 8192;
        let n_chunks = n_samples.div_ceil(CHUNK);
        let samples: Vec<f64> = (0..n_chunks)
            .into_par_iter()
            .flat_map_iter(|chunk| {
                let mut rng = crate::rng::substream(seed, chunk as u64, crate::rng::Stream::PrivacyMc);
                let count = CHUNK.min(n_samples - chunk * CHUNK);
                let mut out = Vec::with_capacity(count);
                let mut z = vec![0.0; m];
                for _ in 0..count {
                    for zi in z.iter_mut() {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        *zi = v * sd;
                    }
                    out.push(digital_loss_from_noise(a_gain, k_devices, n0, &ratio, &z));
                }
                out
            })
            .collect();
        Ok(LossSampleSet {
            samples,
            meta: LossMeta {
                a_gain,
                k_devices,
                m,
                n0,
                ell: ell.get(),
                a: qspec.a,
                n_samples,
                seed,
            },
        })
    }
}

/// Monte Carlo estimate of the digital per-round delta: the fraction of
/// worst-case loss samples exceeding epsilon.
#[allow(clippy::too_many_arguments)]
pub fn estimate_delta_digital<R: Rng + ?Sized>(
    a_gain: f64,
    k_devices: usize,
    m: usize,
    n0: f64,
    ell: &GradientBound,
    qspec: &QuantizerSpec,
    budget: &PrivacyBudget,
    n_mc: usize,
    rng: &mut R,
) -> Result<DeltaEstimate> {
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let ratio = LogRatioParams::new(ell, qspec);
    let sd = n0.sqrt();
    const CHUNK: usize = 8192;
    let n_chunks = n_mc.div_ceil(CHUNK);
    // Chunk seeds come from the caller's stream so the reduction (a count)
    // is identical for every thread schedule.
    let chunk_seeds: Vec<[u8; 32]> = (0..n_chunks)
        .map(|_| {
            let mut s = [0u8; 32];
            rng.fill_bytes(&mut s);
            s
        })
        .collect();
    let exceeded: usize = chunk_seeds
        .par_iter()
        .enumerate()
        .map(|(chunk, seed)| {
            let mut rng = ChaCha12Rng::from_seed(*seed);
            let count = CHUNK.min(n_mc - chunk * CHUNK);
            let mut z = vec![0.0; m];
            let mut hits = 0usize;
            for _ in 0..count {
                for zi in z.iter_mut() {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    *zi = v * sd;
                }
                let loss = digital_loss_from_noise(a_gain, k_devices, n0, &ratio, &z);
                if loss > budget.epsilon {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(DeltaEstimate::from_count(exceeded, n_mc))
}

/// A frozen channel-noise matrix reused across candidate gains (common
/// random numbers), turning the solver's stochastic feasibility check into
/// a deterministic function of the gain.
#[derive(Debug, Clone)]
pub(crate) struct FrozenNoise {
    z: Vec<f64>,
    m: usize,
}

impl FrozenNoise {
    pub(crate) fn draw<R: Rng + ?Sized>(n_mc: usize, m: usize, n0: f64, rng: &mut R) -> Self {
        let sd = n0.sqrt();
        let z = (0..n_mc * m)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v * sd
            })
            .collect();
        FrozenNoise { z, m }
    }

    pub(crate) fn delta_hat(
        &self,
        gain: f64,
        k_devices: usize,
        n0: f64,
        ratio: &LogRatioParams,
        epsilon: f64,
    ) -> f64 {
        let n = self.z.len() / self.m;
        let exceeded: usize = self
            .z
            .par_chunks(self.m)
            .filter(|z| digital_loss_from_noise(gain, k_devices, n0, ratio, z) > epsilon)
            .count();
        exceeded as f64 / n as f64
    }
}

/// The analog accountant's interval function
/// `T(x) = erf((eps - x) / (2 sqrt(x))) - erf((-eps - x) / (2 sqrt(x)))`,
/// halved in [`TMode::Corrected`].
pub fn analog_t(x: f64, epsilon: f64, mode: TMode) -> Result<f64> {
    if x <= 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("T(x) requires x > 0, got {x}")));
    }
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::Domain(format!(
            "T(x) requires epsilon > 0, got {epsilon}"
        )));
    }
    let s = 2.0 * x.sqrt();
    let v = libm::erf((epsilon - x) / s) - libm::erf((-epsilon - x) / s);
    Ok(match mode {
        TMode::Paper => v,
        TMode::Corrected => 0.5 * v,
    })
}

pub(crate) fn analog_t_inverse_with_tol(
    p: f64,
    epsilon: f64,
    mode: TMode,
    tol: f64,
) -> Result<f64> {
    let lo0 = 1e-12;
    let t_lo = analog_t(lo0, epsilon, mode)?;
    if p <= 0.0 || p.is_nan() || p >= t_lo {
        return Err(Error::Infeasible(format!(
            "target {p} outside the attained range of T (sup near {t_lo:.6})"
        )));
    }
    // T is strictly decreasing on (0, inf); double until the root is bracketed.
    let mut lo = lo0;
    let mut hi = 1.0;
    while analog_t(hi, epsilon, mode)? >= p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Err(Error::Infeasible(format!(
                "target {p} not attained by T below x = 1e15"
            )));
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let t = analog_t(mid, epsilon, mode)?;
        if (t - p).abs() <= tol {
            return Ok(mid);
        }
        if t > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = analog_t(mid, epsilon, mode)?;
    if (t - p).abs() <= tol {
        Ok(mid)
    } else {
        Err(Error::Infeasible(format!(
            "bisection on T stalled at x = {mid} (|T - p| = {})",
            (t - p).abs()
        )))
    }
}

/// Inverse of [`analog_t`] by bisection: returns `x` with `|T(x) - p| <= 1e-10`.
pub fn analog_t_inverse(p: f64, epsilon: f64, mode: TMode) -> Result<f64> {
    analog_t_inverse_with_tol(p, epsilon, mode, 1e-10)
}

/// Monte Carlo estimate of the analog per-round delta from the literal
/// worst-case loss sum with per-entry sensitivity `2 ell`; the independent
/// oracle for the corrected-mode `T`.
pub fn analog_delta_mc<R: Rng + ?Sized>(
    a_gain: f64,
    m: usize,
    n0: f64,
    ell: &GradientBound,
    epsilon: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<DeltaEstimate> {
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    if a_gain < 0.0 || !a_gain.is_finite() {
        return Err(Error::Config(format!(
            "a_gain must be nonnegative, got {a_gain}"
        )));
    }
    let delta_sens = 2.0 * ell.get();
    let sd = n0.sqrt();
    const CHUNK: usize = 8192;
    let n_chunks = n_mc.div_ceil(CHUNK);
    let chunk_seeds: Vec<[u8; 32]> = (0..n_chunks)
        .map(|_| {
            let mut s = [0u8; 32];
            rng.fill_bytes(&mut s);
            s
        })
        .collect();
    let exceeded: usize = chunk_seeds
        .par_iter()
        .enumerate()
        .map(|(chunk, seed)| {
            let mut rng = ChaCha12Rng::from_seed(*seed);
            let count = CHUNK.min(n_mc - chunk * CHUNK);
            let mut hits = 0usize;
            for _ in 0..count {
                let mut loss = 0.0;
                for _ in 0..m {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let zi = z * sd;
                    let ad = a_gain * delta_sens;
                    loss += (2.0 * zi * ad + ad * ad) / (2.0 * n0);
                }
                if loss.abs() > epsilon {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(DeltaEstimate::from_count(exceeded, n_mc))
}
