//! Two-phase experiment driver.
//!
//! The training phase fits each sensor's GPD tail model from historical
//! inter-arrivals and aggregates the models at the controller. The online
//! phase replays fresh traffic and fading through the per-transmission power
//! controller and collects time averages, tail statistics and records.
//!
//! Every random stream is derived from the configured seed and the
//! (purpose, run, sensor) labels, so a sensor's trajectory never depends on
//! how many other sensors are simulated or on thread scheduling.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoi_queue::{SensorState, TransmissionRecord};
use crate::config::SimConfig;
use crate::error::{invalid, Result};
use crate::evt::{extract_exceedances, fit_local, GpdParams};
use crate::federated::{
    fed_average, hurst_estimate, select_models_with, LocalModelReport, SelectionOptions,
    SelectionVector,
};
use crate::power::{min_power, solve_per_slot, UrllcConstraint};
use crate::seed::{derive_seed, stream};

/// Aggregation rule applied at the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Correlation-aware selection followed by weighted averaging.
    Proposed,
    /// Weighted averaging of every local model.
    FedAvg,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub reports: Vec<LocalModelReport>,
    pub selection: SelectionVector,
    pub global_proposed: GpdParams,
    pub global_fedavg: GpdParams,
}

impl TrainingOutcome {
    pub fn global(&self, scheme: Scheme) -> GpdParams {
        match scheme {
            Scheme::Proposed => self.global_proposed,
            Scheme::FedAvg => self.global_fedavg,
        }
    }

    /// Per-sensor tail models: the global GPD with each sensor's own threshold.
    pub fn tail_models(&self, scheme: Scheme) -> Result<Vec<TailModel>> {
        tail_models(&self.reports, self.global(scheme))
    }
}

/// GPD tail of `X = -ln x` above a sensor's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub gpd: GpdParams,
    pub x0: f64,
    pub tail_prob: f64,
}

impl TailModel {
    pub fn constraint(&self, cfg: &SimConfig) -> UrllcConstraint {
        UrllcConstraint {
            q_threshold: cfg.q_threshold_s,
            epsilon: cfg.epsilon,
            tail_prob: self.tail_prob,
            x0: self.x0,
            gpd: self.gpd,
        }
    }
}

pub fn tail_models(reports: &[LocalModelReport], global: GpdParams) -> Result<Vec<TailModel>> {
    reports
        .iter()
        .map(|r| match (r.x0, r.tail_prob) {
            (Some(x0), Some(tail_prob)) => Ok(TailModel { gpd: global, x0, tail_prob }),
            _ => Err(invalid(
                "reports",
                format!("sensor {} carries no threshold (x0, tail_prob)", r.sensor_id),
            )),
        })
        .collect()
}

/// Local training of one sensor in FL round `round`.
pub fn train_sensor(cfg: &SimConfig, round: u64, sensor: usize) -> Result<LocalModelReport> {
    let seed = derive_seed(cfg.seed, &[stream::HISTORY, round, sensor as u64]);
    let history = cfg.traffic_model(sensor, seed).generate_interarrivals(cfg.history_len)?;
    let set = extract_exceedances(&history, cfg.tail_quantile)?;
    let model = fit_local(&set, cfg.init_params(), cfg.learning_rate, cfg.iterations)?;
    let hurst = hurst_estimate(&history)?;
    Ok(LocalModelReport {
        sensor_id: sensor,
        model,
        sample_count: set.len(),
        hurst,
        x0: Some(set.threshold_x0),
        tail_prob: Some(set.tail_prob),
    })
}

/// One FL round: local fits, model selection and both aggregates.
pub fn run_training_round(cfg: &SimConfig, round: u64) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let reports = (0..cfg.num_sensors)
        .into_par_iter()
        .map(|k| train_sensor(cfg, round, k))
        .collect::<Result<Vec<_>>>()?;
    aggregate(cfg, round, reports)
}

fn aggregate(cfg: &SimConfig, round: u64, reports: Vec<LocalModelReport>) -> Result<TrainingOutcome> {
    let all = SelectionVector::all(reports.len());
    let opts = SelectionOptions {
        restarts: cfg.selection_restarts.max(1),
        seed: derive_seed(cfg.seed, &[stream::HURST, round]),
    };
    let selection = select_models_with(&reports, &all, opts)?;
    Ok(TrainingOutcome {
        global_proposed: fed_average(&reports, &selection)?,
        global_fedavg: fed_average(&reports, &all)?,
        selection,
        reports,
    })
}

pub fn run_training_phase(cfg: &SimConfig) -> Result<TrainingOutcome> {
    run_training_round(cfg, 0)
}

/// Spread of the global model over repeated, independent FL rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalModelSpread {
    pub rounds: usize,
    pub proposed_sigma_std: f64,
    pub proposed_xi_std: f64,
    pub fedavg_sigma_std: f64,
    pub fedavg_xi_std: f64,
    pub proposed_sigma_mean: f64,
    pub proposed_xi_mean: f64,
    pub fedavg_sigma_mean: f64,
    pub fedavg_xi_mean: f64,
    /// Rounds in which the selection dropped at least one sensor.
    pub rounds_with_exclusion: usize,
}

pub fn global_model_spread(cfg: &SimConfig, rounds: usize) -> Result<GlobalModelSpread> {
    if rounds < 2 {
        return Err(invalid("rounds", "need at least two rounds"));
    }
    cfg.validate()?;
    let k = cfg.num_sensors;
    let reports = (0..rounds * k)
        .into_par_iter()
        .map(|i| train_sensor(cfg, (i / k) as u64, i % k))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = reports
        .chunks(k)
        .enumerate()
        .map(|(r, chunk)| aggregate(cfg, r as u64, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let stats = |f: &dyn Fn(&TrainingOutcome) -> f64| {
        let v: Vec<f64> = outcomes.iter().map(f).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var.sqrt())
    };
    let (pm_s, ps_s) = stats(&|o| o.global_proposed.sigma);
    let (pm_x, ps_x) = stats(&|o| o.global_proposed.xi);
    let (fm_s, fs_s) = stats(&|o| o.global_fedavg.sigma);
    let (fm_x, fs_x) = stats(&|o| o.global_fedavg.xi);
    Ok(GlobalModelSpread {
        rounds,
        proposed_sigma_std: ps_s,
        proposed_xi_std: ps_x,
        fedavg_sigma_std: fs_s,
        fedavg_xi_std: fs_x,
        proposed_sigma_mean: pm_s,
        proposed_xi_mean: pm_x,
        fedavg_sigma_mean: fm_s,
        fedavg_xi_mean: fm_x,
        rounds_with_exclusion: outcomes.iter().filter(|o| o.selection.count() < k).count(),
    })
}

/// Resolution of the queuing-delay histogram behind the CCDF.
pub const CCDF_BIN_S: f64 = 1e-3;
pub const CCDF_MAX_S: f64 = 0.5;

/// Additive per-sensor accumulators; merging is a plain sum.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineTotals {
    pub slots: u64,
    pub power: f64,
    pub p_min: f64,
    pub peak_aoi: f64,
    pub age_cost: f64,
    pub queue_delay: f64,
    pub tx_delay: f64,
    pub stay_time: f64,
    pub violations: u64,
    pub infeasible: u64,
    pub final_virtual_queue: f64,
    pub final_index: f64,
    /// `hist[0]`: delays equal to zero; `hist[j]`: delays in `((j-1) w, j w]`;
    /// last bin collects everything beyond the grid.
    pub hist: Vec<u64>,
}

impl OnlineTotals {
    fn new() -> Self {
        let bins = (CCDF_MAX_S / CCDF_BIN_S).round() as usize;
        Self {
            slots: 0,
            power: 0.0,
            p_min: 0.0,
            peak_aoi: 0.0,
            age_cost: 0.0,
            queue_delay: 0.0,
            tx_delay: 0.0,
            stay_time: 0.0,
            violations: 0,
            infeasible: 0,
            final_virtual_queue: 0.0,
            final_index: 0.0,
            hist: vec![0; bins + 2],
        }
    }

    fn add_delay(&mut self, q: f64) {
        let last = self.hist.len() - 1;
        let j = if q <= 0.0 {
            0
        } else {
            ((q / CCDF_BIN_S).ceil() as usize).clamp(1, last)
        };
        self.hist[j] += 1;
    }

    fn merge(&mut self, o: &OnlineTotals) {
        self.slots += o.slots;
        self.power += o.power;
        self.p_min += o.p_min;
        self.peak_aoi += o.peak_aoi;
        self.age_cost += o.age_cost;
        self.queue_delay += o.queue_delay;
        self.tx_delay += o.tx_delay;
        self.stay_time += o.stay_time;
        self.violations += o.violations;
        self.infeasible += o.infeasible;
        self.final_virtual_queue += o.final_virtual_queue;
        self.final_index += o.final_index;
        for (a, b) in self.hist.iter_mut().zip(&o.hist) {
            *a += b;
        }
    }

    /// `(d, P(q > d))` on the histogram grid.
    pub fn ccdf(&self) -> Vec<(f64, f64)> {
        let n = self.slots as f64;
        let mut above = self.slots;
        let mut out = Vec::with_capacity(self.hist.len() - 1);
        for j in 0..self.hist.len() - 1 {
            above -= self.hist[j];
            out.push((j as f64 * CCDF_BIN_S, above as f64 / n));
        }
        out
    }
}

/// Time-averaged results of one online simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineMetrics {
    pub v: f64,
    pub p_avg_w: f64,
    pub p_min_avg_w: f64,
    pub peak_aoi_s: f64,
    pub f_avg: f64,
    pub queue_delay_s: f64,
    pub tx_delay_s: f64,
    pub e2e_delay_s: f64,
    pub violation_prob: f64,
    pub stay_time_s: f64,
    pub infeasible_rate: f64,
    /// Mean over sensors of `Z_n / n` at the end of the horizon.
    pub virtual_queue_rate: f64,
    pub samples: u64,
}

impl OnlineMetrics {
    fn from_totals(v: f64, t: &OnlineTotals) -> Self {
        let n = t.slots as f64;
        Self {
            v,
            p_avg_w: t.power / n,
            p_min_avg_w: t.p_min / n,
            peak_aoi_s: t.peak_aoi / n,
            f_avg: t.age_cost / n,
            queue_delay_s: t.queue_delay / n,
            tx_delay_s: t.tx_delay / n,
            e2e_delay_s: (t.queue_delay + t.tx_delay) / n,
            violation_prob: t.violations as f64 / n,
            stay_time_s: t.stay_time / n,
            infeasible_rate: t.infeasible as f64 / n,
            virtual_queue_rate: 0.0,
            samples: t.slots,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineResult {
    pub metrics: OnlineMetrics,
    pub totals: OnlineTotals,
    pub records: Vec<TransmissionRecord>,
}

impl OnlineResult {
    pub fn ccdf(&self) -> Vec<(f64, f64)> {
        self.totals.ccdf()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OnlineOptions {
    /// Keep per-transmission records for sensors `0..record_sensors` of run 0.
    pub record_sensors: usize,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self { record_sensors: 1 }
    }
}

/// Simulates one sensor over the horizon; returns its totals and, optionally, records.
pub fn simulate_sensor(
    cfg: &SimConfig,
    tail: &TailModel,
    run: u64,
    sensor: usize,
    keep_records: bool,
) -> Result<(OnlineTotals, Vec<TransmissionRecord>)> {
    let traffic_seed = derive_seed(cfg.seed, &[stream::TRAFFIC, run, sensor as u64]);
    let channel_seed = derive_seed(cfg.seed, &[stream::CHANNEL, run, sensor as u64]);
    let x = cfg
        .traffic_model(sensor, traffic_seed)
        .generate_interarrivals(cfg.horizon + 1)?;
    let mut gains = cfg.channel_model(channel_seed).sampler();
    let budget = cfg.link_budget();
    let cost = cfg.aoi_cost();
    let trade = cfg.tradeoff();
    let constraint = tail.constraint(cfg);
    constraint.validate()?;
    let p_max = trade.p_max;

    let t_first = budget.tx_time_unchecked(gains.draw_gain(), p_max);
    let mut state = SensorState::bootstrap(x[0], t_first, x[1]);
    let mut totals = OnlineTotals::new();
    let mut records = Vec::new();

    for n in 1..cfg.horizon {
        let gain = gains.draw_gain();
        let q = state.queue_delay;
        let required = min_power(&constraint, &budget, gain, q, p_max);
        let floor = required.floor(p_max);
        let offset = state.age_offset(x[n]);
        let z = state.virtual_queue;
        let power = solve_per_slot(&state, offset, &trade, &cost, &budget, gain, floor);
        let tx = budget.tx_time_unchecked(gain, power);
        let prev_reception = state.last_reception;
        let done = state.complete(x[n], tx, x[n + 1], &cost);

        if n >= cfg.warmup {
            totals.slots += 1;
            totals.power += power;
            totals.p_min += floor;
            totals.peak_aoi += done.peak_aoi;
            totals.age_cost += done.age_cost;
            totals.queue_delay += q;
            totals.tx_delay += tx;
            totals.stay_time += done.reception_time - prev_reception;
            totals.violations += u64::from(q > cfg.q_threshold_s);
            totals.infeasible += u64::from(!required.is_feasible());
            totals.add_delay(q);
            if keep_records {
                records.push(TransmissionRecord {
                    sensor_id: sensor,
                    index: state.index - 1,
                    reception_time: done.reception_time,
                    power_w: power,
                    tx_time_s: tx,
                    queue_delay_s: q,
                    peak_aoi_s: done.peak_aoi,
                    interarrival_s: x[n],
                    virtual_queue: z,
                    p_min_w: floor,
                    infeasible: !required.is_feasible(),
                });
            }
        }
    }
    totals.final_virtual_queue = state.virtual_queue;
    totals.final_index = state.index as f64;
    Ok((totals, records))
}

/// Online phase for every sensor and Monte-Carlo run.
///
/// `tails` holds one model per sensor, or a single model shared by all.
pub fn run_online_phase(cfg: &SimConfig, tails: &[TailModel], opts: OnlineOptions) -> Result<OnlineResult> {
    cfg.validate()?;
    if tails.is_empty() {
        return Err(invalid("tails", "no tail model"));
    }
    let k = cfg.num_sensors;
    let jobs: Vec<(u64, usize)> = (0..cfg.monte_carlo_runs as u64)
        .flat_map(|r| (0..k).map(move |s| (r, s)))
        .collect();
    let parts = jobs
        .par_iter()
        .map(|&(run, s)| {
            let keep = run == 0 && s < opts.record_sensors;
            simulate_sensor(cfg, &tails[s % tails.len()], run, s, keep)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut totals = OnlineTotals::new();
    let mut records = Vec::new();
    let mut z_rate = 0.0;
    for (t, r) in parts {
        totals.merge(&t);
        z_rate += t.final_virtual_queue / t.final_index.max(1.0);
        records.extend(r);
    }
    let mut metrics = OnlineMetrics::from_totals(cfg.v, &totals);
    metrics.virtual_queue_rate = z_rate / jobs.len() as f64;
    Ok(OnlineResult { metrics, totals, records })
}

pub fn sweep_v(cfg: &SimConfig, tails: &[TailModel], v_values: &[f64]) -> Result<SweepTable> {
    if v_values.is_empty() {
        return Err(invalid("v_values", "empty V grid"));
    }
    let mut rows = Vec::with_capacity(v_values.len());
    let mut ccdfs = Vec::with_capacity(v_values.len());
    for &v in v_values {
        let c = SimConfig { v, ..cfg.clone() };
        let res = run_online_phase(&c, tails, OnlineOptions { record_sensors: 0 })?;
        ccdfs.push(res.ccdf());
        rows.push(res.metrics);
    }
    Ok(SweepTable { rows, ccdfs })
}

/// `count` log-spaced values from `10^lo` to `10^hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![10f64.powf(lo)],
        _ => (0..count)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<OnlineMetrics>,
    pub ccdfs: Vec<Vec<(f64, f64)>>,
}

/// Qualitative shape of a V sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepStructure {
    pub argmin_power: usize,
    pub interior_power_minimum: bool,
    /// Number of adjacent decreases per metric, in column order
    /// (peak AoI, age cost, queue delay, tx delay, e2e delay).
    pub inversions: [usize; 5],
}

impl SweepStructure {
    pub fn monotone_within(&self, allowed: usize) -> bool {
        self.inversions.iter().all(|&i| i <= allowed)
    }
}

impl SweepTable {
    pub fn structure(&self) -> SweepStructure {
        let rows = &self.rows;
        let argmin_power = rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.p_avg_w.total_cmp(&b.1.p_avg_w))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let inv = |f: fn(&OnlineMetrics) -> f64| rows.windows(2).filter(|w| f(&w[1]) < f(&w[0])).count();
        SweepStructure {
            argmin_power,
            interior_power_minimum: argmin_power > 0 && argmin_power + 1 < rows.len(),
            inversions: [
                inv(|m| m.peak_aoi_s),
                inv(|m| m.f_avg),
                inv(|m| m.queue_delay_s),
                inv(|m| m.tx_delay_s),
                inv(|m| m.e2e_delay_s),
            ],
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(SWEEP_HEADER)?;
        for m in &self.rows {
            w.write_record(sweep_fields(m))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const SWEEP_HEADER: [&str; 9] = [
    "v",
    "p_avg_w",
    "p_min_avg_w",
    "peak_aoi_s",
    "f_avg",
    "queue_delay_s",
    "tx_delay_s",
    "e2e_delay_s",
    "violation_prob",
];

fn sweep_fields(m: &OnlineMetrics) -> [String; 9] {
    [
        m.v,
        m.p_avg_w,
        m.p_min_avg_w,
        m.peak_aoi_s,
        m.f_avg,
        m.queue_delay_s,
        m.tx_delay_s,
        m.e2e_delay_s,
        m.violation_prob,
    ]
    .map(|v| v.to_string())
}

/// Full metric row (sweep columns followed by diagnostics).
pub fn write_metrics_csv(path: impl AsRef<Path>, m: &OnlineMetrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.serialize(m)?;
    w.flush()?;
    Ok(())
}

pub fn write_ccdf_csv(path: impl AsRef<Path>, ccdf: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delay_s", "ccdf"])?;
    for (d, p) in ccdf {
        w.write_record([d.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_csv(path: impl AsRef<Path>, records: &[TransmissionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
