//! Per-sensor inter-arrival sequences.
//!
//! Inter-arrival times are the absolute value of a Gaussian process with a
//! configured mean and standard deviation (a folded normal marginal). The
//! Gaussian process is i.i.d. for `hurst = 0.5` and fractional Gaussian noise
//! with the given Hurst exponent otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fgn;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    /// Mean of the underlying (unfolded) normal, seconds.
    pub underlying_mean: f64,
    /// Standard deviation of the underlying normal, seconds.
    pub underlying_std: f64,
    pub hurst: f64,
    pub seed: u64,
}

impl Default for TrafficModel {
    fn default() -> Self {
        Self {
            underlying_mean: 0.1,
            underlying_std: 0.05,
            hurst: 0.5,
            seed: 0,
        }
    }
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.hurst) {
            return Err(invalid("hurst", format!("{} not in [0.5, 1)", self.hurst)));
        }
        if !(self.underlying_std > 0.0) || !self.underlying_std.is_finite() {
            return Err(invalid("underlying_std", format!("{} must be > 0", self.underlying_std)));
        }
        if !self.underlying_mean.is_finite() {
            return Err(invalid("underlying_mean", "must be finite"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_long_range(&self) -> bool {
        self.hurst > 0.5
    }

    /// Mean of the folded normal, E|X| for X ~ N(mu, s^2).
    pub fn mean_interarrival(&self) -> f64 {
        let (mu, s) = (self.underlying_mean, self.underlying_std);
        s * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * s * s)).exp()
            + mu * (1.0 - 2.0 * normal_cdf(-mu / s))
    }

    /// Standardized underlying Gaussian sequence (zero mean, unit variance).
    pub fn generate_underlying(&self, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if n == 0 {
            return Err(invalid("n", "at least one sample is required"));
        }
        let mut rng = rng_from_seed(self.seed);
        Ok(fgn::sample(self.hurst, n, &mut rng).0)
    }

    /// Strictly positive inter-arrival times in seconds.
    pub fn generate_interarrivals(&self, n: usize) -> Result<Vec<f64>> {
        let g = self.generate_underlying(n)?;
        Ok(g.into_iter().map(|z| self.fold(z)).collect())
    }

    fn fold(&self, z: f64) -> f64 {
        (self.underlying_mean + self.underlying_std * z)
            .abs()
            .max(f64::MIN_POSITIVE)
    }
}

/// Convenience wrapper mirroring the model method.
pub fn generate_interarrivals(model: &TrafficModel, n: usize) -> Result<Vec<f64>> {
    model.generate_interarrivals(n)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, fractional error < 1.2e-7.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
