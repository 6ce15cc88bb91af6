//! Run configuration: a flat TOML key-value file whose defaults are the
//! reference parameter set. Decibel inputs are converted to linear SI units
//! through the accessor methods; nothing downstream sees dBm.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aoi_queue::AoiCostConfig;
use crate::channel::{ChannelModel, Fading, LinkBudget};
use crate::error::{invalid, Result};
use crate::evt::GpdParams;
use crate::power::TradeoffConfig;
use crate::traffic::TrafficModel;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    // traffic
    /// Mean of the underlying normal before folding, seconds.
    pub mean_interarrival: f64,
    pub underlying_std: f64,
    pub hurst: f64,
    /// When set, sensor Hurst exponents are spread linearly from `hurst` to this value.
    pub hurst_max: Option<f64>,

    // channel and link budget
    pub distance_m: f64,
    pub carrier_ghz: f64,
    pub fading: Fading,
    pub bandwidth_hz: f64,
    pub data_bits: f64,
    pub noise_dbm_hz: f64,
    pub num_sensors: usize,

    // age cost
    pub beta: f64,
    pub f_threshold: f64,

    // power control
    pub v: f64,
    pub p_max_dbm: f64,
    pub epsilon: f64,
    pub q_threshold_s: f64,

    // GPD learning
    pub tail_quantile: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub init_sigma: f64,
    pub init_xi: f64,
    /// Historical inter-arrivals per sensor used for training.
    pub history_len: usize,
    pub selection_restarts: usize,

    // run control
    /// Transmissions per sensor in the online phase.
    pub horizon: usize,
    pub warmup: usize,
    pub monte_carlo_runs: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mean_interarrival: 0.1,
            underlying_std: 0.05,
            hurst: 0.5,
            hurst_max: None,
            distance_m: 15.0,
            carrier_ghz: 2.625,
            fading: Fading::Rayleigh,
            bandwidth_hz: 1e6,
            data_bits: 1e4,
            noise_dbm_hz: -174.0,
            num_sensors: 50,
            beta: 1.0,
            f_threshold: 0.25,
            // Power enters the drift-plus-penalty objective in watts, so V is in 1/W.
            v: 10f64.powf(1.8),
            p_max_dbm: 10.0,
            epsilon: 1e-4,
            q_threshold_s: 0.2,
            tail_quantile: 0.01,
            learning_rate: 0.01,
            iterations: 3000,
            init_sigma: 1.0,
            init_xi: 0.1,
            history_len: 100_000,
            selection_restarts: 1,
            horizon: 100_000,
            warmup: 1_000,
            monte_carlo_runs: 1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.warmup {
            return Err(invalid("horizon", format!("{} must exceed warmup {}", self.horizon, self.warmup)));
        }
        if self.monte_carlo_runs == 0 {
            return Err(invalid("monte_carlo_runs", "must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.tail_quantile) {
            return Err(invalid("epsilon", "need 0 < epsilon < tail_quantile"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "must be > 0"));
        }
        if let Some(h) = self.hurst_max {
            if !(0.5..1.0).contains(&h) {
                return Err(invalid("hurst_max", format!("{h} not in [0.5, 1)")));
            }
        }
        if !(self.distance_m >= 1.0) {
            return Err(invalid("distance_m", "must be >= 1 m"));
        }
        GpdParams::new(self.init_sigma, self.init_xi)?;
        self.traffic_model(0, 0).validate()?;
        self.link_budget().validate()?;
        self.aoi_cost().validate()?;
        self.tradeoff().validate()?;
        Ok(())
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn noise_psd_w_hz(&self) -> f64 {
        dbm_to_watts(self.noise_dbm_hz)
    }

    pub fn link_budget(&self) -> LinkBudget {
        LinkBudget {
            bandwidth_hz: self.bandwidth_hz,
            data_bits: self.data_bits,
            noise_psd: self.noise_psd_w_hz(),
            num_sensors: self.num_sensors,
        }
    }

    pub fn aoi_cost(&self) -> AoiCostConfig {
        AoiCostConfig { beta: self.beta, f_threshold: self.f_threshold }
    }

    pub fn tradeoff(&self) -> TradeoffConfig {
        TradeoffConfig { v: self.v, p_max: self.p_max_w() }
    }

    pub fn init_params(&self) -> GpdParams {
        GpdParams { sigma: self.init_sigma, xi: self.init_xi }
    }

    /// Hurst exponent of sensor `k` out of `num_sensors`.
    pub fn sensor_hurst(&self, k: usize) -> f64 {
        match self.hurst_max {
            Some(hi) if self.num_sensors > 1 => {
                self.hurst + (hi - self.hurst) * k as f64 / (self.num_sensors - 1) as f64
            }
            _ => self.hurst,
        }
    }

    pub fn traffic_model(&self, sensor: usize, seed: u64) -> TrafficModel {
        TrafficModel {
            underlying_mean: self.mean_interarrival,
            underlying_std: self.underlying_std,
            hurst: self.sensor_hurst(sensor),
            seed,
        }
    }

    pub fn channel_model(&self, seed: u64) -> ChannelModel {
        ChannelModel {
            distance_m: self.distance_m,
            carrier_ghz: self.carrier_ghz,
            fading: self.fading,
            seed,
        }
    }
}
