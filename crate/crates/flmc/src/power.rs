//! Power-gain solvers: the largest homogeneous gain `A` satisfying the
//! transmit-power cap, the Langevin noise requirement, and the per-round
//! differential-privacy constraint.
//!
//! The two deterministic caps are closed forms. The digital privacy
//! constraint has no closed form, so the solver bisects on `A` against the
//! Monte Carlo delta estimate, evaluated on one frozen noise matrix (common
//! random numbers) so the empirical constraint is a deterministic,
//! effectively monotone function of the gain.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::model::GradientBound;
use crate::privacy::{
    analog_t_inverse, FrozenNoise, LogRatioParams, PrivacyBudget, TMode,
};
use crate::quantizer::QuantizerSpec;

/// Which constraint produced the returned gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binding {
    Power,
    LmcNoise,
    Dp,
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Binding::Power => "power",
            Binding::LmcNoise => "lmc-noise",
            Binding::Dp => "dp",
        };
        f.write_str(s)
    }
}

/// Solver output: the gain, the binding constraint, and whether the
/// bisection was starved below its resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolvedGain {
    pub gain: f64,
    pub binding: Binding,
    /// The DP bisection ended below `bisection_tol`; the gain is effectively
    /// zero and the round carries almost no signal.
    pub starved: bool,
}

/// Monte Carlo and bisection controls for the digital gain search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSolverConfig {
    /// Loss samples per delta estimate.
    pub n_mc: usize,
    /// Absolute tolerance on the gain.
    pub bisection_tol: f64,
    pub max_iters: usize,
}

impl Default for PowerSolverConfig {
    fn default() -> Self {
        PowerSolverConfig {
            n_mc: 100_000,
            bisection_tol: 1e-6,
            max_iters: 60,
        }
    }
}

impl PowerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc < 1000 {
            return Err(Error::Config(format!(
                "solver n_mc must be at least 1000, got {}",
                self.n_mc
            )));
        }
        if self.bisection_tol <= 0.0 || self.bisection_tol.is_nan() {
            return Err(Error::Config(format!(
                "bisection_tol must be positive, got {}",
                self.bisection_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Langevin noise requirement: the channel noise folded into the update may
/// not fall below the sampler's target, capping the gain at
/// `sqrt(eta N0 / 2)`.
pub fn lmc_noise_cap(eta: f64, n0: f64) -> Result<f64> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    if n0 <= 0.0 || !n0.is_finite() {
        return Err(Error::Config(format!("n0 must be positive, got {n0}")));
    }
    Ok((eta * n0 / 2.0).sqrt())
}

/// Transmit-power cap for unit-magnitude symbols: `|h| sqrt(P0)`.
pub fn digital_power_cap(h: f64, p0: f64) -> Result<f64> {
    if h == 0.0 || !h.is_finite() {
        return Err(Error::SingularChannel(format!(
            "channel gain must be nonzero, got {h}"
        )));
    }
    if p0 <= 0.0 || !p0.is_finite() {
        return Err(Error::Config(format!("p0 must be positive, got {p0}")));
    }
    Ok(h.abs() * p0.sqrt())
}

/// Transmit-power cap for clipped analog entries: `|h| sqrt(P0) / ell`.
pub fn analog_power_cap(h: f64, p0: f64, ell: &GradientBound) -> Result<f64> {
    Ok(digital_power_cap(h, p0)? / ell.get())
}

/// Largest digital gain meeting all three constraints.
///
/// Bisects on the gain only when the delta estimate at the deterministic
/// cap already violates the budget; the estimate reuses one frozen noise
/// matrix across candidates. `A = 0` is always feasible (zero loss), so the
/// search cannot fail — but a result below `bisection_tol` is flagged as
/// starved.
#[allow(clippy::too_many_arguments)]
pub fn solve_digital_gain<R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    eta: f64,
    k_devices: usize,
    ell: &GradientBound,
    qspec: &QuantizerSpec,
    budget: &PrivacyBudget,
    solver: &PowerSolverConfig,
    rng: &mut R,
) -> Result<SolvedGain> {
    solver.validate()?;
    budget.validate()?;
    if k_devices == 0 {
        return Err(Error::Config("k_devices must be at least 1".into()));
    }
    let h = cfg.homogeneous_gain()?;
    let p_cap = digital_power_cap(h, cfg.p0)?;
    let l_cap = lmc_noise_cap(eta, cfg.n0)?;
    let (det_cap, det_binding) = if p_cap <= l_cap {
        (p_cap, Binding::Power)
    } else {
        (l_cap, Binding::LmcNoise)
    };
    let noise = FrozenNoise::draw(solver.n_mc, cfg.m, cfg.n0, rng);
    let ratio = LogRatioParams::new(ell, qspec);
    let delta_at = |a: f64| noise.delta_hat(a, k_devices, cfg.n0, &ratio, budget.epsilon);
    if delta_at(det_cap) <= budget.delta {
        return Ok(SolvedGain {
            gain: det_cap,
            binding: det_binding,
            starved: false,
        });
    }
    let mut lo = 0.0;
    let mut hi = det_cap;
    for _ in 0..solver.max_iters {
        if hi - lo <= solver.bisection_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if delta_at(mid) <= budget.delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SolvedGain {
        gain: lo,
        binding: Binding::Dp,
        starved: lo < solver.bisection_tol,
    })
}

/// Analog gain: the exact three-way minimum of the power cap, the Langevin
/// noise cap, and the privacy term `sqrt(N0 T^{-1}(1 - delta) / (2 m ell^2))`.
pub fn solve_analog_gain(
    cfg: &ChannelConfig,
    eta: f64,
    ell: &GradientBound,
    budget: &PrivacyBudget,
    mode: TMode,
) -> Result<SolvedGain> {
    budget.validate()?;
    let h = cfg.homogeneous_gain()?;
    let t_power = analog_power_cap(h, cfg.p0, ell)?;
    let t_lmc = lmc_noise_cap(eta, cfg.n0)?;
    let x = analog_t_inverse(1.0 - budget.delta, budget.epsilon, mode)?;
    let t_dp = (cfg.n0 * x / (2.0 * cfg.m as f64 * ell.get() * ell.get())).sqrt();
    let (gain, binding) = [
        (t_power, Binding::Power),
        (t_lmc, Binding::LmcNoise),
        (t_dp, Binding::Dp),
    ]
    .into_iter()
    .min_by(|a, b| a.0.total_cmp(&b.0))
    .expect("three candidates");
    Ok(SolvedGain {
        gain,
        binding,
        starved: false,
    })
}
