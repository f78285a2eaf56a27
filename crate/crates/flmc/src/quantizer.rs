//! One-bit stochastic quantization of clipped gradient entries.
//!
//! Each entry is mapped to `+1` with probability `phi(x)` and `-1`
//! otherwise, where `phi` is an increasing probability function. Only the
//! sigmoid family ships; the enum is the extension point for other shapes.

use nalgebra::DVector;
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability-function family used by the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiFamily {
    /// `phi(x) = 1 / (1 + exp(-a x))`.
    Sigmoid,
}

/// Quantizer parameters: sharpness `a` and the probability family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    /// Sharpness of the probability function; larger values make the
    /// quantizer behave more like a hard sign.
    pub a: f64,
    pub family: PhiFamily,
}

impl QuantizerSpec {
    pub fn new(a: f64) -> Result<Self> {
        if a <= 0.0 || !a.is_finite() {
            return Err(Error::Config(format!(
                "quantizer sharpness a must be positive and finite, got {a}"
            )));
        }
        Ok(QuantizerSpec {
            a,
            family: PhiFamily::Sigmoid,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.a).map(|_| ())
    }
}

/// Probability that an entry with value `x` quantizes to `+1`.
///
/// The sigmoid is evaluated on the folded argument so that
/// `phi(x) + phi(-x) == 1` holds exactly in floating point.
pub fn phi(x: f64, spec: &QuantizerSpec) -> f64 {
    match spec.family {
        PhiFamily::Sigmoid => {
            let t = spec.a * x;
            // Evaluate the tail side q = sigmoid(-|t|) directly so it keeps
            // full relative precision; q + (1 - q) rounds to exactly 1.
            let u = (-t.abs()).exp();
            let q = u / (1.0 + u);
            if t >= 0.0 {
                1.0 - q
            } else {
                q
            }
        }
    }
}

/// Quantizes a vector entrywise to `{-1, +1}`.
///
/// Consumes exactly one uniform draw per entry, in entry order, so the
/// output is reproducible from the stream position alone.
pub fn quantize<R: Rng + ?Sized>(
    g: &DVector<f64>,
    spec: &QuantizerSpec,
    rng: &mut R,
) -> DVector<f64> {
    DVector::from_iterator(
        g.len(),
        g.iter().map(|&x| {
            let u: f64 = rng.random();
            if u < phi(x, spec) {
                1.0
            } else {
                -1.0
            }
        }),
    )
}
