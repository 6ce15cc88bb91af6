//! Path loss, block fading and the Shannon-rate transmission time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    None,
    #[default]
    Rayleigh,
}

impl std::str::FromStr for Fading {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Fading::None),
            "rayleigh" => Ok(Fading::Rayleigh),
            other => Err(invalid("fading", format!("unknown fading law `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub distance_m: f64,
    pub carrier_ghz: f64,
    pub fading: Fading,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            distance_m: 15.0,
            carrier_ghz: 2.625,
            fading: Fading::Rayleigh,
            seed: 0,
        }
    }
}

impl ChannelModel {
    /// Indoor path loss `33 log10(d) + 20 log10(f_GHz) + 32` in dB.
    pub fn path_loss_db(&self) -> f64 {
        33.0 * self.distance_m.log10() + 20.0 * self.carrier_ghz.log10() + 32.0
    }

    pub fn path_gain(&self) -> f64 {
        10f64.powf(-self.path_loss_db() / 10.0)
    }

    pub fn sampler(&self) -> GainSampler {
        GainSampler {
            path_gain: self.path_gain(),
            fading: self.fading,
            rng: rng_from_seed(self.seed),
            draws: 0,
        }
    }
}

/// Stateful per-sensor gain source; the n-th draw depends only on the seed.
#[derive(Debug, Clone)]
pub struct GainSampler {
    path_gain: f64,
    fading: Fading,
    rng: ChaCha8Rng,
    draws: u64,
}

impl GainSampler {
    pub fn draw_gain(&mut self) -> f64 {
        self.draws += 1;
        match self.fading {
            Fading::None => self.path_gain,
            Fading::Rayleigh => {
                let f: f64 = self.rng.sample(Exp1);
                self.path_gain * f
            }
        }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

/// Orthogonal uplink resources shared equally by `num_sensors` sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// Total bandwidth W in Hz.
    pub bandwidth_hz: f64,
    /// Payload D in bits.
    pub data_bits: f64,
    /// Noise power spectral density N0 in W/Hz.
    pub noise_psd: f64,
    pub num_sensors: usize,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bandwidth_hz", self.bandwidth_hz),
            ("data_bits", self.data_bits),
            ("noise_psd", self.noise_psd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("{v} must be finite and > 0")));
            }
        }
        if self.num_sensors == 0 {
            return Err(invalid("num_sensors", "must be >= 1"));
        }
        Ok(())
    }

    pub fn bandwidth_per_sensor(&self) -> f64 {
        self.bandwidth_hz / self.num_sensors as f64
    }

    /// Received SNR `K h P / (W N0)`.
    pub fn snr(&self, gain: f64, power: f64) -> f64 {
        gain * power / (self.bandwidth_per_sensor() * self.noise_psd)
    }

    /// `K D / W`, the transmission time at unit spectral efficiency.
    pub fn unit_rate_time(&self) -> f64 {
        self.data_bits / self.bandwidth_per_sensor()
    }

    /// Transmission time `K D / (W log2(1 + K h P / (W N0)))`.
    pub fn transmission_time(&self, gain: f64, power: f64) -> Result<f64> {
        if !(power > 0.0) {
            return Err(invalid("power", format!("{power} must be > 0")));
        }
        if !(gain > 0.0) {
            return Err(invalid("gain", format!("{gain} must be > 0")));
        }
        Ok(self.tx_time_unchecked(gain, power))
    }

    /// Same as [`transmission_time`](Self::transmission_time) without the
    /// argument checks; returns `inf` at zero power.
    #[inline]
    pub fn tx_time_unchecked(&self, gain: f64, power: f64) -> f64 {
        self.unit_rate_time() / self.snr(gain, power).ln_1p() * std::f64::consts::LN_2
    }
}

pub fn transmission_time(budget: &LinkBudget, gain: f64, power: f64) -> Result<f64> {
    budget.transmission_time(gain, power)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> LinkBudget {
        LinkBudget {
            bandwidth_hz: 1e6,
            data_bits: 1e4,
            noise_psd: 1.0,
            num_sensors: 50,
        }
    }

    // Power that makes the SNR term equal `snr` when gain = 1 and N0 = 1.
    fn power_for_snr(b: &LinkBudget, snr: f64) -> f64 {
        snr * b.bandwidth_per_sensor()
    }

    #[test]
    fn path_loss_at_fifteen_meters() {
        let m = ChannelModel { fading: Fading::None, ..Default::default() };
        let expected = 33.0 * 15f64.log10() + 20.0 * 2.625f64.log10() + 32.0;
        assert!((m.path_loss_db() - expected).abs() <= 1e-12 * expected);
        // 38.81102 + 8.38258 + 32, evaluated independently
        assert!((m.path_loss_db() - 79.193_597_703_677).abs() < 1e-9);
        let g = m.path_gain();
        assert!((g / 10f64.powf(-7.919_359_770_367_7) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_fading_is_deterministic() {
        let m = ChannelModel { fading: Fading::None, ..Default::default() };
        let mut s = m.sampler();
        assert_eq!(s.draw_gain(), s.draw_gain());
    }

    #[test]
    fn rayleigh_power_is_unit_mean() {
        let m = ChannelModel { seed: 4, ..Default::default() };
        let mut s = m.sampler();
        let n = 100_000;
        let mean = (0..n).map(|_| s.draw_gain()).sum::<f64>() / n as f64 / m.path_gain();
        assert!((0.99..=1.01).contains(&mean), "{mean}");
    }

    #[test]
    fn known_transmission_times() {
        let b = budget();
        let t1 = b.transmission_time(1.0, power_for_snr(&b, 1.0)).unwrap();
        assert!((t1 - 0.5).abs() < 1e-12);
        let t3 = b.transmission_time(1.0, power_for_snr(&b, 3.0)).unwrap();
        assert!((t3 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_power() {
        assert!(budget().transmission_time(1.0, 0.0).is_err());
        assert!(budget().transmission_time(1.0, -1.0).is_err());
        assert!(budget().tx_time_unchecked(1.0, 0.0).is_infinite());
    }

    #[test]
    fn convex_decreasing_on_grid() {
        let b = budget();
        let h = 1e-3;
        let t = |p: f64| b.tx_time_unchecked(1.0, p);
        let mut p = 1e2;
        while p < 1e9 {
            let d1 = t(p * (1.0 + h)) - t(p);
            let d2 = t(p * (1.0 + h)) - 2.0 * t(p) + t(p * (1.0 - h));
            assert!(d1 < 0.0, "not decreasing at {p}");
            assert!(d2 > 0.0, "not convex at {p}");
            p *= 1.7;
        }
    }
}
