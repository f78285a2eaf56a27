//! One uplink round: superposition of power-scaled symbols plus AWGN, and
//! the server's normalized Langevin update.
//!
//! Devices invert their own channel, so the server sees
//! `y_i = A_i * sum_k x_{k,i} + z_i` with `z_i ~ N(0, N0)` regardless of the
//! per-device gains. The per-symbol power gains `A_i` are chosen by the
//! `power` module.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::GradientBound;

/// Channel gains: one constant for all devices and symbols, or an explicit
/// per-device, per-symbol table.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelGains {
    Homogeneous(f64),
    /// Outer index: device; inner: symbol within the block.
    PerDeviceSymbol(Vec<Vec<f64>>),
}

impl ChannelGains {
    fn validate(&self, m: usize) -> Result<()> {
        match self {
            ChannelGains::Homogeneous(h) => {
                if *h == 0.0 || !h.is_finite() {
                    return Err(Error::SingularChannel(format!(
                        "homogeneous gain must be nonzero and finite, got {h}"
                    )));
                }
            }
            ChannelGains::PerDeviceSymbol(rows) => {
                for (k, row) in rows.iter().enumerate() {
                    if row.len() != m {
                        return Err(Error::Config(format!(
                            "device {k} has {} channel gains, block length is {m}",
                            row.len()
                        )));
                    }
                    if let Some(i) = row.iter().position(|h| *h == 0.0 || !h.is_finite()) {
                        return Err(Error::SingularChannel(format!(
                            "gain for device {k}, symbol {i} must be nonzero and finite"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Static description of one uplink: gains, noise power, power budget, and
/// block length.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub gains: ChannelGains,
    /// Channel noise power N0.
    pub n0: f64,
    /// Per-block average transmit power budget P0.
    pub p0: f64,
    /// Block length (symbols per round, equals the model dimension).
    pub m: usize,
    noiseless: bool,
}

impl ChannelConfig {
    pub fn new(gains: ChannelGains, n0: f64, p0: f64, m: usize) -> Result<Self> {
        Self::build(gains, n0, p0, m, false)
    }

    /// Test-mode channel with the additive noise suppressed. Used by
    /// noiseless algebraic checks; never reachable from run configs.
    pub fn noiseless(gains: ChannelGains, n0: f64, p0: f64, m: usize) -> Result<Self> {
        Self::build(gains, n0, p0, m, true)
    }

    fn build(gains: ChannelGains, n0: f64, p0: f64, m: usize, noiseless: bool) -> Result<Self> {
        if n0 <= 0.0 || !n0.is_finite() {
            return Err(Error::Config(format!("noise power n0 must be positive, got {n0}")));
        }
        if p0 <= 0.0 || !p0.is_finite() {
            return Err(Error::Config(format!("power budget p0 must be positive, got {p0}")));
        }
        if m == 0 {
            return Err(Error::Config("block length m must be at least 1".into()));
        }
        gains.validate(m)?;
        Ok(ChannelConfig {
            gains,
            n0,
            p0,
            m,
            noiseless,
        })
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    /// The shared gain when the channel is homogeneous.
    pub fn homogeneous_gain(&self) -> Result<f64> {
        match &self.gains {
            ChannelGains::Homogeneous(h) => Ok(*h),
            ChannelGains::PerDeviceSymbol(_) => Err(Error::Config(
                "operation requires a homogeneous channel gain".into(),
            )),
        }
    }

    /// Maximum signal-to-noise ratio P0 / N0.
    pub fn snr_max(&self) -> f64 {
        self.p0 / self.n0
    }
}

/// Per-symbol power gains `A_i` applied by every device after channel
/// inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerGains {
    a: DVector<f64>,
}

impl PowerGains {
    /// One shared gain for all symbols of the block.
    pub fn homogeneous(a: f64, m: usize) -> Result<Self> {
        Self::from_vec(vec![a; m])
    }

    pub fn from_vec(a: Vec<f64>) -> Result<Self> {
        if let Some(i) = a.iter().position(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::Config(format!(
                "power gain at index {i} must be nonnegative and finite"
            )));
        }
        Ok(PowerGains {
            a: DVector::from_vec(a),
        })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.a[i]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.a
    }
}

fn check_lengths(vectors: &[DVector<f64>], gains: &PowerGains, cfg: &ChannelConfig) -> Result<()> {
    if gains.len() != cfg.m {
        return Err(Error::Config(format!(
            "gain vector has length {} but block length is {}",
            gains.len(),
            cfg.m
        )));
    }
    for (k, v) in vectors.iter().enumerate() {
        if v.len() != cfg.m {
            return Err(Error::Config(format!(
                "device {k} sends {} symbols, block length is {}",
                v.len(),
                cfg.m
            )));
        }
    }
    Ok(())
}

fn superpose<R: Rng + ?Sized>(
    vectors: &[DVector<f64>],
    gains: &PowerGains,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> DVector<f64> {
    let sd = cfg.n0.sqrt();
    DVector::from_fn(cfg.m, |i, _| {
        let sum: f64 = vectors.iter().map(|v| v[i]).sum();
        let z = if cfg.noiseless {
            0.0
        } else {
            let zi: f64 = StandardNormal.sample(rng);
            zi * sd
        };
        gains.get(i) * sum + z
    })
}

/// Received block for one digital round: `y_i = A_i * sum_k s_{k,i} + z_i`
/// where the per-device symbols are BPSK values in `{-1, +1}`.
///
/// Channel inversion makes the per-device channel gains cancel exactly, so
/// the receive path never sees them.
pub fn transmit_digital<R: Rng + ?Sized>(
    symbols_per_device: &[DVector<f64>],
    gains: &PowerGains,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_lengths(symbols_per_device, gains, cfg)?;
    Ok(superpose(symbols_per_device, gains, cfg, rng))
}

/// Received block for one analog round; devices transmit their clipped
/// gradient entries directly. Inputs must already be clipped to the bound.
pub fn transmit_analog<R: Rng + ?Sized>(
    clipped_gradients: &[DVector<f64>],
    gains: &PowerGains,
    cfg: &ChannelConfig,
    bound: &GradientBound,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_lengths(clipped_gradients, gains, cfg)?;
    let limit = bound.get() + 1e-9;
    for (k, g) in clipped_gradients.iter().enumerate() {
        if let Some(i) = g.iter().position(|x| x.abs() > limit) {
            return Err(Error::Contract(format!(
                "analog input for device {k} exceeds the gradient bound {} at entry {i} ({})",
                bound.get(),
                g[i]
            )));
        }
    }
    Ok(superpose(clipped_gradients, gains, cfg, rng))
}

/// Normalized server update: `theta'_i = theta_i - eta * y_i / A_i`.
///
/// The injected noise in coordinate `i` has variance `eta^2 N0 / A_i^2`.
pub fn server_update(
    theta: &DVector<f64>,
    y: &DVector<f64>,
    gains: &PowerGains,
    eta: f64,
) -> Result<DVector<f64>> {
    if theta.len() != y.len() || gains.len() != y.len() {
        return Err(Error::Config(format!(
            "length mismatch: theta {}, y {}, gains {}",
            theta.len(),
            y.len(),
            gains.len()
        )));
    }
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Config(format!(
            "step size eta must be finite and nonnegative, got {eta}"
        )));
    }
    if let Some(index) = (0..gains.len()).find(|&i| gains.get(i) == 0.0) {
        return Err(Error::ZeroGain { index });
    }
    Ok(DVector::from_fn(theta.len(), |i, _| {
        theta[i] - eta * y[i] / gains.get(i)
    }))
}

/// Average per-block transmit power check under channel inversion:
/// `(1/m) sum_i (A_i x_i / h_{k,i})^2 <= P0` for every device, with a
/// relative slack of 1e-9 at the boundary.
pub fn check_power_constraint(x: &DVector<f64>, gains: &PowerGains, cfg: &ChannelConfig) -> bool {
    assert_eq!(x.len(), cfg.m, "symbol vector length must equal block length");
    assert_eq!(gains.len(), cfg.m, "gain vector length must equal block length");
    let budget = cfg.p0 * (1.0 + 1e-9);
    let used_with = |h_of: &dyn Fn(usize) -> f64| -> f64 {
        (0..cfg.m)
            .map(|i| {
                let p = gains.get(i) * x[i] / h_of(i);
                p * p
            })
            .sum::<f64>()
            / cfg.m as f64
    };
    match &cfg.gains {
        ChannelGains::Homogeneous(h) => used_with(&|_| *h) <= budget,
        ChannelGains::PerDeviceSymbol(rows) => rows
            .iter()
            .all(|row| used_with(&|i| row[i]) <= budget),
    }
}
