//! Tail-constrained minimum power and the per-transmission drift-plus-penalty
//! power choice.

use serde::{Deserialize, Serialize};

use crate::aoi_queue::{AoiCostConfig, SensorState};
use crate::channel::LinkBudget;
use crate::error::{invalid, Result};
use crate::evt::GpdParams;

/// Below this |xi| the GPD quantile uses its exponential-tail limit.
pub const XI_LIMIT: f64 = 1e-6;

const BISECTION_ITERS: usize = 64;
const GOLDEN_ITERS: usize = 200;

/// `P(q_next > q_th) <= epsilon` expressed through a GPD tail of `X = -ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrllcConstraint {
    pub q_threshold: f64,
    pub epsilon: f64,
    /// Empirical `P(X > x0)`.
    pub tail_prob: f64,
    pub x0: f64,
    pub gpd: GpdParams,
}

impl UrllcConstraint {
    pub fn validate(&self) -> Result<()> {
        if !(self.q_threshold > 0.0) {
            return Err(invalid("q_threshold", format!("{} <= 0", self.q_threshold)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < self.tail_prob && self.tail_prob < 1.0) {
            return Err(invalid(
                "epsilon",
                format!("need 0 < epsilon ({}) < tail_prob ({}) < 1", self.epsilon, self.tail_prob),
            ));
        }
        if !(self.gpd.sigma > 0.0) {
            return Err(invalid("sigma", "must be > 0"));
        }
        Ok(())
    }

    /// Exceedance over `x0` whose GPD survival equals `epsilon / tail_prob`.
    pub fn required_excess(&self) -> f64 {
        let l = (self.epsilon / self.tail_prob).ln();
        let GpdParams { sigma, xi } = self.gpd;
        if xi.abs() < XI_LIMIT {
            -sigma * l
        } else {
            // (sigma/xi) [r^(-xi) - 1]
            sigma * (-xi * l).exp_m1() / xi
        }
    }

    /// Largest admissible `q + T - q_th`: `exp{(sigma/xi)[1 - r^(-xi)] - x0}`.
    pub fn slack(&self) -> f64 {
        (-self.required_excess() - self.x0).exp()
    }

    /// Longest transmission time meeting the constraint at queue delay `q`.
    pub fn max_tx_time(&self, queue_delay: f64) -> f64 {
        self.q_threshold - queue_delay + self.slack()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinPower {
    Feasible(f64),
    /// `required` is `inf` when no finite power meets the constraint.
    Infeasible { required: f64 },
}

impl MinPower {
    pub fn is_feasible(&self) -> bool {
        matches!(self, MinPower::Feasible(_))
    }

    /// Lower bound to use in the per-slot problem; clamped to `p_max`.
    pub fn floor(&self, p_max: f64) -> f64 {
        match *self {
            MinPower::Feasible(p) => p,
            MinPower::Infeasible { .. } => p_max,
        }
    }

    /// Unclamped requirement (may exceed `p_max` or be infinite).
    pub fn required(&self) -> f64 {
        match *self {
            MinPower::Feasible(p) => p,
            MinPower::Infeasible { required } => required,
        }
    }
}

/// Minimum power keeping the next queuing delay under `q_th` with probability
/// at least `1 - epsilon`.
pub fn min_power(
    c: &UrllcConstraint,
    budget: &LinkBudget,
    gain: f64,
    queue_delay: f64,
    p_max: f64,
) -> MinPower {
    let denom = c.max_tx_time(queue_delay);
    if !(denom > 0.0) {
        return MinPower::Infeasible { required: f64::INFINITY };
    }
    let noise = budget.bandwidth_per_sensor() * budget.noise_psd / gain;
    let exponent = budget.unit_rate_time() * std::f64::consts::LN_2 / denom;
    let p = noise * exponent.exp_m1();
    if p > p_max || !p.is_finite() {
        MinPower::Infeasible { required: p }
    } else {
        MinPower::Feasible(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub v: f64,
    pub p_max: f64,
}

impl TradeoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0) {
            return Err(invalid("v", format!("{} < 0", self.v)));
        }
        if !(self.p_max > 0.0) {
            return Err(invalid("p_max", format!("{} <= 0", self.p_max)));
        }
        Ok(())
    }
}

/// One sensor's per-transmission problem
/// `min (Z/beta)(c+T)^beta + (c+T)^(2 beta)/(2 beta^2) + V P` over `[p_lo, p_hi]`.
#[derive(Debug, Clone, Copy)]
pub struct PerSlotProblem<'a> {
    pub virtual_queue: f64,
    pub age_offset: f64,
    pub v: f64,
    pub beta: f64,
    pub budget: &'a LinkBudget,
    pub gain: f64,
}

impl PerSlotProblem<'_> {
    pub fn objective(&self, p: f64) -> f64 {
        let a = self.age_offset + self.budget.tx_time_unchecked(self.gain, p);
        let b = self.beta;
        self.virtual_queue * a.powf(b) / b + a.powf(2.0 * b) / (2.0 * b * b) + self.v * p
    }

    /// d objective / dP.
    pub fn derivative(&self, p: f64) -> f64 {
        let snr = self.budget.snr(self.gain, p);
        let l = snr.ln_1p();
        let t = self.budget.unit_rate_time() * std::f64::consts::LN_2 / l;
        // dT/dP = -T * (dsnr/dP) / ((1 + snr) ln(1 + snr))
        let dt = -t * (snr / p) / ((1.0 + snr) * l);
        let a = self.age_offset + t;
        let b = self.beta;
        (self.virtual_queue * a.powf(b - 1.0) + a.powf(2.0 * b - 1.0) / b) * dt + self.v
    }

    /// Right-hand side of the interior optimality condition `V = rhs(P)`.
    pub fn stationarity_rhs(&self, p: f64) -> f64 {
        let k = self.budget.num_sensors as f64;
        let w = self.budget.bandwidth_hz;
        let d = self.budget.data_bits;
        let n0 = self.budget.noise_psd;
        let h = self.gain;
        let l = (k * h * p / (w * n0)).ln_1p();
        let t = k * d / (w * (l / std::f64::consts::LN_2));
        let a = self.age_offset + t;
        let b = self.beta;
        k * k * d * h * std::f64::consts::LN_2 / (w * l * l * (w * n0 + k * h * p))
            * (self.virtual_queue * a.powf(b - 1.0) + a.powf(2.0 * b - 1.0) / b)
    }

    /// Minimizer over `[p_lo, p_hi]`.
    pub fn solve(&self, p_lo: f64, p_hi: f64) -> f64 {
        debug_assert!(0.0 <= p_lo && p_lo <= p_hi);
        if p_hi <= p_lo {
            return p_hi;
        }
        let d_hi = self.derivative(p_hi);
        if !d_hi.is_finite() {
            return self.golden(p_lo, p_hi);
        }
        if d_hi <= 0.0 {
            return p_hi;
        }
        if p_lo > 0.0 {
            let d_lo = self.derivative(p_lo);
            if !d_lo.is_finite() {
                return self.golden(p_lo, p_hi);
            }
            if d_lo >= 0.0 {
                return p_lo;
            }
        }
        let (mut lo, mut hi) = (p_lo, p_hi);
        for _ in 0..BISECTION_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let d = self.derivative(mid);
            if !d.is_finite() {
                return self.golden(p_lo, p_hi);
            }
            if d > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn golden(&self, lo: f64, hi: f64) -> f64 {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (self.objective(c), self.objective(d));
        for _ in 0..GOLDEN_ITERS {
            if b - a <= 1e-15 * b {
                break;
            }
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = self.objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = self.objective(d);
            }
        }
        let mid = 0.5 * (a + b);
        [lo, mid, hi]
            .into_iter()
            .min_by(|x, y| self.objective(*x).total_cmp(&self.objective(*y)))
            .unwrap_or(mid)
    }
}

/// Power for the current transmission: `clamp(P~, p_min, p_max)`.
pub fn solve_per_slot(
    state: &SensorState,
    age_offset: f64,
    cfg: &TradeoffConfig,
    aoi_cfg: &AoiCostConfig,
    budget: &LinkBudget,
    gain: f64,
    p_min: f64,
) -> f64 {
    PerSlotProblem {
        virtual_queue: state.virtual_queue,
        age_offset,
        v: cfg.v,
        beta: aoi_cfg.beta,
        budget,
        gain,
    }
    .solve(p_min.min(cfg.p_max), cfg.p_max)
}
