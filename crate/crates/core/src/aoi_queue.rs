//! Queuing delay, age of information and the virtual age-cost queue of one sensor.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AoiCostConfig {
    /// Exponent of the age cost `A^beta / beta`; at least 1.
    pub beta: f64,
    /// Long-term average cost budget.
    pub f_threshold: f64,
}

impl Default for AoiCostConfig {
    fn default() -> Self {
        Self { beta: 1.0, f_threshold: 0.25 }
    }
}

impl AoiCostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0) {
            return Err(invalid("beta", format!("{} < 1", self.beta)));
        }
        if !(self.f_threshold > 0.0) {
            return Err(invalid("f_threshold", format!("{} <= 0", self.f_threshold)));
        }
        Ok(())
    }

    /// Age cost `A^beta / beta`.
    pub fn cost(&self, peak_aoi: f64) -> f64 {
        peak_aoi.powf(self.beta) / self.beta
    }
}

/// Dynamic state of one sensor between transmissions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorState {
    /// Head-of-line queuing delay of the data about to be sent.
    pub queue_delay: f64,
    pub virtual_queue: f64,
    /// AoI right after the previous reception.
    pub aoi_anchor: f64,
    /// Reception instant of the previous data.
    pub last_reception: f64,
    /// Sampling instant of the data about to be sent.
    pub arrival_time: f64,
    /// Index of the data about to be sent.
    pub index: u64,
}

impl SensorState {
    /// State ahead of the second data, after the first one was sampled at
    /// `first_interarrival` and sent without queuing in `first_tx_time`.
    pub fn bootstrap(first_interarrival: f64, first_tx_time: f64, next_interarrival: f64) -> Self {
        Self {
            queue_delay: advance_queue(0.0, first_tx_time, next_interarrival),
            virtual_queue: 0.0,
            aoi_anchor: first_tx_time,
            last_reception: first_interarrival + first_tx_time,
            arrival_time: first_interarrival + next_interarrival,
            index: 2,
        }
    }

    /// The constant part of the next peak AoI given the inter-arrival before it.
    pub fn age_offset(&self, interarrival: f64) -> f64 {
        self.aoi_anchor + (interarrival - self.aoi_anchor).max(0.0)
    }

    /// Applies one completed transmission and returns the peak AoI it closed.
    ///
    /// `interarrival` precedes the data just sent; `next_interarrival`
    /// separates it from the next data.
    pub fn complete(
        &mut self,
        interarrival: f64,
        tx_time: f64,
        next_interarrival: f64,
        cost: &AoiCostConfig,
    ) -> Completion {
        let peak = peak_aoi(self.aoi_anchor, interarrival, tx_time);
        let reception = self.arrival_time + self.queue_delay + tx_time;
        debug_assert!(
            ((reception - self.last_reception) - (peak - self.aoi_anchor)).abs()
                <= 1e-9 * reception.max(1.0),
            "reception bookkeeping diverged from the peak-AoI recursion"
        );
        let z_before = self.virtual_queue;
        self.virtual_queue = advance_virtual_queue(self.virtual_queue, peak, cost);
        self.aoi_anchor = self.queue_delay + tx_time;
        self.last_reception = reception;
        let q_sent = self.queue_delay;
        self.queue_delay = advance_queue(self.queue_delay, tx_time, next_interarrival);
        self.arrival_time += next_interarrival;
        self.index += 1;
        Completion {
            peak_aoi: peak,
            age_cost: cost.cost(peak),
            reception_time: reception,
            queue_delay: q_sent,
            virtual_queue: z_before,
        }
    }
}

/// What [`SensorState::complete`] observed for the transmission just finished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub peak_aoi: f64,
    pub age_cost: f64,
    pub reception_time: f64,
    pub queue_delay: f64,
    pub virtual_queue: f64,
}

/// Peak AoI of the previous data: `anchor + max(x - anchor, 0) + T`.
pub fn peak_aoi(aoi_anchor: f64, interarrival: f64, tx_time: f64) -> f64 {
    aoi_anchor + (interarrival - aoi_anchor).max(0.0) + tx_time
}

/// Queuing delay of the next data: `max(q + T - x_next, 0)`.
pub fn advance_queue(queue_delay: f64, tx_time: f64, next_interarrival: f64) -> f64 {
    (queue_delay + tx_time - next_interarrival).max(0.0)
}

/// `max(Z + A^beta/beta - f_th, 0)`.
pub fn advance_virtual_queue(z: f64, peak_aoi: f64, cfg: &AoiCostConfig) -> f64 {
    (z + cfg.cost(peak_aoi) - cfg.f_threshold).max(0.0)
}

/// Per-transmission log row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub sensor_id: usize,
    pub index: u64,
    pub reception_time: f64,
    pub power_w: f64,
    pub tx_time_s: f64,
    pub queue_delay_s: f64,
    pub peak_aoi_s: f64,
    pub interarrival_s: f64,
    pub virtual_queue: f64,
    pub p_min_w: f64,
    pub infeasible: bool,
}

/// Sawtooth AoI at the controller reconstructed from reception records.
#[derive(Debug, Clone, Default)]
pub struct AoiTrajectory {
    /// (reception instant, age right after reception)
    resets: Vec<(f64, f64)>,
}

impl AoiTrajectory {
    /// AoI at `t`, or `None` before the first reception.
    pub fn at(&self, t: f64) -> Option<f64> {
        let i = self.resets.partition_point(|&(r, _)| r <= t);
        let (r, a) = *self.resets.get(i.checked_sub(1)?)?;
        Some(a + t - r)
    }

    /// `lim_{tau -> 0+} a(t - tau)`.
    pub fn left_limit(&self, t: f64) -> Option<f64> {
        let i = self.resets.partition_point(|&(r, _)| r < t);
        let (r, a) = *self.resets.get(i.checked_sub(1)?)?;
        Some(a + t - r)
    }

    pub fn sample(&self, times: &[f64]) -> Vec<Option<f64>> {
        times.iter().map(|&t| self.at(t)).collect()
    }

    pub fn resets(&self) -> &[(f64, f64)] {
        &self.resets
    }
}

/// Builds the AoI sawtooth; `records` must be in reception order.
pub fn aoi_trajectory(records: &[TransmissionRecord]) -> Result<AoiTrajectory> {
    let mut resets = Vec::with_capacity(records.len());
    let mut last = f64::NEG_INFINITY;
    for r in records {
        if r.reception_time < last {
            return Err(invalid("records", "not in temporal order"));
        }
        last = r.reception_time;
        resets.push((r.reception_time, r.queue_delay_s + r.tx_time_s));
    }
    Ok(AoiTrajectory { resets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn record(q: f64, t: f64, at: f64) -> TransmissionRecord {
        TransmissionRecord {
            sensor_id: 0,
            index: 1,
            reception_time: at,
            power_w: 1.0,
            tx_time_s: t,
            queue_delay_s: q,
            peak_aoi_s: 0.0,
            interarrival_s: 0.1,
            virtual_queue: 0.0,
            p_min_w: 0.0,
            infeasible: false,
        }
    }

    #[test]
    fn peak_aoi_examples() {
        assert!(close(peak_aoi(0.3, 0.2, 0.05), 0.35));
        assert!(close(peak_aoi(0.1, 0.25, 0.05), 0.30));
        assert_eq!(peak_aoi(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn queue_examples() {
        assert_eq!(advance_queue(0.1, 0.05, 0.2), 0.0);
        assert!(close(advance_queue(0.1, 0.05, 0.05), 0.1));
        assert!(close(advance_queue(0.0, 0.5, 0.1), 0.4));
    }

    #[test]
    fn virtual_queue_examples() {
        let lin = AoiCostConfig { beta: 1.0, f_threshold: 0.25 };
        assert!(close(advance_virtual_queue(0.0, 0.3, &lin), 0.05));
        assert_eq!(advance_virtual_queue(0.0, 0.2, &lin), 0.0);
        let quad = AoiCostConfig { beta: 2.0, f_threshold: 0.25 };
        assert!(close(advance_virtual_queue(1.0, 0.5, &quad), 0.875));
    }

    #[test]
    fn cost_config_rejects_small_beta() {
        assert!(AoiCostConfig { beta: 0.5, f_threshold: 0.25 }.validate().is_err());
        assert!(AoiCostConfig { beta: 1.0, f_threshold: 0.0 }.validate().is_err());
    }

    #[test]
    fn trajectory_reset_and_slope() {
        let traj = aoi_trajectory(&[record(0.1, 0.05, 1.0)]).unwrap();
        assert!(close(traj.at(1.0).unwrap(), 0.15));
        assert!(close(traj.at(1.2).unwrap(), 0.35));
        assert!(traj.at(0.5).is_none());
    }

    #[test]
    fn left_limit_is_previous_peak() {
        let cfg = AoiCostConfig::default();
        let xs = [0.12, 0.03, 0.2, 0.01, 0.15];
        let ts = [0.05, 0.06, 0.02, 0.08, 0.03];
        let mut st = SensorState::bootstrap(xs[0], ts[0], xs[1]);
        let mut recs = vec![record(0.0, ts[0], st.last_reception)];
        let mut peaks = vec![];
        for n in 1..xs.len() - 1 {
            assert_eq!(st.index, n as u64 + 1);
            let c = st.complete(xs[n], ts[n], xs[n + 1], &cfg);
            peaks.push(c.peak_aoi);
            recs.push(record(c.queue_delay, ts[n], c.reception_time));
        }
        let traj = aoi_trajectory(&recs).unwrap();
        for (i, p) in peaks.iter().enumerate() {
            let lim = traj.left_limit(recs[i + 1].reception_time).unwrap();
            assert!((lim - p).abs() < 1e-12, "{lim} vs {p}");
            assert!(*p >= recs[i].queue_delay_s + recs[i].tx_time_s - 1e-15);
        }
    }

    #[test]
    fn out_of_order_records_rejected() {
        assert!(aoi_trajectory(&[record(0.0, 0.1, 2.0), record(0.0, 0.1, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn queue_never_negative(q in 0.0..10.0f64, t in 0.0..10.0f64, x in 1e-9..10.0f64) {
            prop_assert!(advance_queue(q, t, x) >= 0.0);
        }

        #[test]
        fn virtual_queue_never_negative(z in 0.0..10.0f64, a in 0.0..5.0f64, beta in 1.0..3.0f64) {
            let cfg = AoiCostConfig { beta, f_threshold: 0.25 };
            prop_assert!(advance_virtual_queue(z, a, &cfg) >= 0.0);
        }
    }
}
