//! Online-phase behaviour at small scale.

use tailfl_core::config::SimConfig;
use tailfl_core::sim::{self, OnlineOptions, Scheme, TailModel};

fn tails(cfg: &SimConfig) -> Vec<TailModel> {
    let train = SimConfig { history_len: 50_000, ..cfg.clone() };
    sim::run_training_phase(&train).unwrap().tail_models(Scheme::Proposed).unwrap()
}

fn small() -> SimConfig {
    SimConfig { num_sensors: 4, horizon: 20_000, warmup: 500, seed: 5, ..SimConfig::default() }
}

#[test]
fn tiny_v_keeps_age_cost_under_budget() {
    let cfg = SimConfig { v: 1e-6, ..small() };
    let res = sim::run_online_phase(&cfg, &tails(&cfg), OnlineOptions::default()).unwrap();
    let m = res.metrics;
    assert!(m.f_avg <= 1.05 * cfg.f_threshold, "{}", m.f_avg);
    // Mean rate stability of the virtual queue.
    assert!(m.virtual_queue_rate < 1e-3, "{}", m.virtual_queue_rate);
}

#[test]
fn large_v_tracks_the_power_floor() {
    let cfg = small();
    let t = tails(&cfg);
    let table = sim::sweep_v(&cfg, &t, &[1e7, 1e8]).unwrap();
    for m in &table.rows {
        let gap = (m.p_avg_w - m.p_min_avg_w) / m.p_min_avg_w;
        assert!(gap < 0.05, "V={}: gap {gap}", m.v);
    }
}

#[test]
fn stay_time_equals_mean_interarrival() {
    let cfg = small();
    let res = sim::run_online_phase(&cfg, &tails(&cfg), OnlineOptions::default()).unwrap();
    let want = cfg.traffic_model(0, 0).mean_interarrival();
    assert!((res.metrics.stay_time_s / want - 1.0).abs() < 0.02);
}

#[test]
fn records_respect_power_bounds_and_time_order() {
    let cfg = small();
    let res = sim::run_online_phase(&cfg, &tails(&cfg), OnlineOptions { record_sensors: 2 }).unwrap();
    let p_max = cfg.p_max_w();
    assert_eq!(res.records.len(), 2 * (cfg.horizon - cfg.warmup));
    for r in &res.records {
        assert!(r.power_w >= 0.0 && r.power_w <= p_max * (1.0 + 1e-12));
        assert!(r.power_w >= r.p_min_w * (1.0 - 1e-12));
        assert!(r.tx_time_s >= 0.0 && r.queue_delay_s >= 0.0 && r.peak_aoi_s >= 0.0);
    }
    for s in 0..2 {
        let own: Vec<_> = res.records.iter().filter(|r| r.sensor_id == s).collect();
        assert!(own.windows(2).all(|w| w[0].reception_time <= w[1].reception_time));
    }
}

#[test]
fn ccdf_is_a_survival_function() {
    let cfg = small();
    let res = sim::run_online_phase(&cfg, &tails(&cfg), OnlineOptions::default()).unwrap();
    let c = res.ccdf();
    assert!(c[0].1 <= 1.0);
    assert!(c.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
    assert!(c.last().unwrap().1 >= 0.0);
}

/// Pooled over at least 1e7 slots, the violation rate at a moderate V stays
/// within the binomial margin of epsilon.
#[test]
fn pooled_violation_rate_within_margin() {
    let cfg = SimConfig { v: 100.0, horizon: 201_000, warmup: 1000, seed: 6, ..SimConfig::default() };
    let t = tails(&cfg);
    let res = sim::run_online_phase(&cfg, &t, OnlineOptions { record_sensors: 0 }).unwrap();
    let n = res.metrics.samples as f64;
    assert!(n >= 1e7);
    let bound = cfg.epsilon * (1.0 + 3.0 / (cfg.epsilon * n).sqrt());
    assert!(res.metrics.violation_prob <= bound, "{} > {bound}", res.metrics.violation_prob);
}

#[test]
fn csv_outputs_are_reproducible() {
    let cfg = SimConfig { horizon: 3000, warmup: 100, ..small() };
    let t = tails(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for rep in 0..2 {
        let res = sim::run_online_phase(&cfg, &t, OnlineOptions { record_sensors: 2 }).unwrap();
        let table = sim::sweep_v(&cfg, &t, &[1.0, 1e3]).unwrap();
        let paths = [
            dir.path().join(format!("m{rep}.csv")),
            dir.path().join(format!("r{rep}.csv")),
            dir.path().join(format!("c{rep}.csv")),
            dir.path().join(format!("s{rep}.csv")),
        ];
        sim::write_metrics_csv(&paths[0], &res.metrics).unwrap();
        sim::write_records_csv(&paths[1], &res.records).unwrap();
        sim::write_ccdf_csv(&paths[2], &res.ccdf()).unwrap();
        table.write_csv(&paths[3]).unwrap();
        bytes.push(paths.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(bytes[0], bytes[1]);
    let header = std::fs::read_to_string(dir.path().join("s0.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), sim::SWEEP_HEADER.join(","));
}
