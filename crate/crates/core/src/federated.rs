//! Controller-side aggregation of locally fitted GPD models.
//!
//! Sensors whose training data are strongly correlated contribute little
//! information per sample, so the controller may leave them out of the
//! weighted average. Which sensors to keep is decided by minimizing a
//! variance proxy over binary selections with a flip/swap local search.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evt::GpdParams;
use crate::seed::rng_from_seed;

pub const HURST_SRD: f64 = 0.5;
/// Upper clamp for Hurst estimates; the open bound 1 is never returned.
pub const HURST_MAX: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalModelReport {
    pub sensor_id: usize,
    pub model: GpdParams,
    pub sample_count: usize,
    pub hurst: f64,
    /// Sensor's exceedance threshold on `X = -ln x`, when known.
    pub x0: Option<f64>,
    /// Sensor's empirical `P(X > x0)`, when known.
    pub tail_prob: Option<f64>,
}

impl LocalModelReport {
    pub fn new(sensor_id: usize, model: GpdParams, sample_count: usize, hurst: f64) -> Self {
        Self { sensor_id, model, sample_count, hurst, x0: None, tail_prob: None }
    }

    pub fn is_short_range(&self) -> bool {
        self.hurst <= HURST_SRD
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionVector {
    pub flags: Vec<bool>,
}

impl SelectionVector {
    pub fn all(k: usize) -> Self {
        Self { flags: vec![true; k] }
    }

    pub fn from_mask(mask: u64, k: usize) -> Self {
        Self { flags: (0..k).map(|i| mask >> i & 1 == 1).collect() }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn any(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, reports: &[LocalModelReport]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sensor_id", "selected"])?;
        for (r, &f) in reports.iter().zip(&self.flags) {
            w.write_record([r.sensor_id.to_string(), u8::from(f).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `sensor_id,selected` rows and orders them like `reports`.
    pub fn read_csv(path: impl AsRef<Path>, reports: &[LocalModelReport]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            sensor_id: usize,
            selected: u8,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for row in r.deserialize::<Row>() {
            rows.push(row?);
        }
        let flags = reports
            .iter()
            .map(|rep| {
                rows.iter()
                    .find(|row| row.sensor_id == rep.sensor_id)
                    .map(|row| row.selected != 0)
                    .ok_or_else(|| invalid("selection", format!("no row for sensor {}", rep.sensor_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { flags })
    }
}

fn check_selection(reports: &[LocalModelReport], sel: &SelectionVector) -> Result<()> {
    if reports.len() != sel.len() {
        return Err(invalid(
            "selection",
            format!("{} flags for {} reports", sel.len(), reports.len()),
        ));
    }
    if !sel.any() {
        return Err(invalid("selection", "empty selection"));
    }
    Ok(())
}

/// Sample-count weighted average of the selected local models.
pub fn fed_average(reports: &[LocalModelReport], selection: &SelectionVector) -> Result<GpdParams> {
    check_selection(reports, selection)?;
    let (mut ws, mut s, mut x) = (0.0, 0.0, 0.0);
    for (r, _) in reports.iter().zip(&selection.flags).filter(|(_, &f)| f) {
        let w = r.sample_count as f64;
        ws += w;
        s += w * r.model.sigma;
        x += w * r.model.xi;
    }
    if !(ws > 0.0) {
        return Err(invalid("sample_count", "selected reports carry no samples"));
    }
    Ok(GpdParams { sigma: s / ws, xi: x / ws })
}

/// Window sizes for R/S analysis: log-spaced integers in `[8, n/2]`.
pub fn rs_window_sizes(n: usize) -> Vec<usize> {
    let lo = 8.0f64;
    let hi = (n / 2) as f64;
    let octaves = (hi / lo).log2();
    let count = ((2.0 * octaves).ceil() as usize + 1).max(4);
    let mut sizes: Vec<usize> = (0..count)
        .map(|i| (lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).round() as usize)
        .collect();
    sizes.dedup();
    sizes
}

/// Mean rescaled range over non-overlapping windows of length `m`, or `None`
/// if every window has zero spread.
pub fn mean_rescaled_range(series: &[f64], m: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0usize;
    for w in series.chunks_exact(m) {
        let mean = w.iter().sum::<f64>() / m as f64;
        let (mut cum, mut hi, mut lo, mut ss) = (0.0f64, f64::NEG_INFINITY, f64::INFINITY, 0.0);
        for &v in w {
            let d = v - mean;
            cum += d;
            hi = hi.max(cum);
            lo = lo.min(cum);
            ss += d * d;
        }
        let s = (ss / m as f64).sqrt();
        if s > 0.0 && hi - lo > 0.0 {
            total += (hi - lo) / s;
            used += 1;
        }
    }
    (used > 0).then(|| total / used as f64)
}

/// Least-squares slope of `ln(R/S)` against `ln m`, unclamped.
pub fn hurst_estimate_raw(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 64 {
        return Err(invalid("series", format!("length {n} < 64")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(invalid("series", "non-finite value"));
    }
    let mut pts = Vec::new();
    for m in rs_window_sizes(n) {
        let rs = mean_rescaled_range(series, m)
            .ok_or_else(|| Error::Degenerate(format!("zero range in every window of size {m}")))?;
        pts.push(((m as f64).ln(), rs.ln()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// R/S Hurst estimate clamped to `[0.5, 1)`.
pub fn hurst_estimate(series: &[f64]) -> Result<f64> {
    Ok(hurst_estimate_raw(series)?.clamp(HURST_SRD, HURST_MAX))
}

/// `|Y| + 2 sum_{i=1}^{|Y|} sum_{m=1}^{|Y|-i} m^(2H-2)`; the double sum is
/// dropped for short-range data.
pub fn variance_weight(report: &LocalModelReport) -> f64 {
    let n = report.sample_count;
    if report.is_short_range() {
        return n as f64;
    }
    let e = 2.0 * report.hurst - 2.0;
    // Each lag m appears n - m times in the double sum.
    let corr: f64 = (1..n).map(|m| (n - m) as f64 * (m as f64).powf(e)).sum();
    n as f64 + 2.0 * corr
}

/// Variance proxy of the selected weighted average.
pub fn selection_cost(reports: &[LocalModelReport], selection: &SelectionVector) -> Result<f64> {
    check_selection(reports, selection)?;
    Ok(CostTable::new(reports).cost(&selection.flags))
}

struct CostTable {
    weight: Vec<f64>,
    count: Vec<f64>,
}

impl CostTable {
    fn new(reports: &[LocalModelReport]) -> Self {
        Self {
            weight: reports.iter().map(variance_weight).collect(),
            count: reports.iter().map(|r| r.sample_count as f64).collect(),
        }
    }

    fn cost(&self, flags: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
            num += self.weight[i];
            den += self.count[i];
        }
        num / (den * den)
    }

    /// Best prefix of the sensors ordered by variance weight per sample.
    fn ratio_prefix(&self) -> Vec<bool> {
        let k = self.weight.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            (self.weight[a] / self.count[a]).total_cmp(&(self.weight[b] / self.count[b]))
        });
        let (mut num, mut den) = (0.0, 0.0);
        let (mut best_len, mut best) = (k, f64::INFINITY);
        for (j, &i) in order.iter().enumerate() {
            num += self.weight[i];
            den += self.count[i];
            let c = num / (den * den);
            if c < best {
                best = c;
                best_len = j + 1;
            }
        }
        let mut flags = vec![false; k];
        for &i in &order[..best_len] {
            flags[i] = true;
        }
        flags
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionOptions {
    /// Number of descents from the given vector and from random non-empty
    /// vectors; the first starts from the given vector. A descent from the
    /// ratio-ordered prefix always runs in addition.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self { restarts: 1, seed: 0 }
    }
}

/// Swap-matching local search started from `init` (all-ones if `init` is empty)
/// and from the cheapest prefix of sensors ordered by variance weight per
/// sample; the better local optimum is returned.
pub fn select_models(reports: &[LocalModelReport], init: &SelectionVector) -> Result<SelectionVector> {
    select_models_with(reports, init, SelectionOptions::default())
}

pub fn select_models_with(
    reports: &[LocalModelReport],
    init: &SelectionVector,
    opts: SelectionOptions,
) -> Result<SelectionVector> {
    let k = reports.len();
    if k == 0 {
        return Err(invalid("reports", "no local models"));
    }
    if let Some(r) = reports.iter().find(|r| r.sample_count == 0) {
        return Err(invalid("sample_count", format!("sensor {} reports zero samples", r.sensor_id)));
    }
    let start = if init.any() { init.clone() } else { SelectionVector::all(k) };
    check_selection(reports, &start)?;
    let table = CostTable::new(reports);
    let mut best = local_search(&table, start.flags);
    let mut best_cost = table.cost(&best);
    // Descent from all-ones can stall far above the optimum; a second descent
    // from the cheapest weight-per-sample prefix is almost always optimal.
    let cand = local_search(&table, table.ratio_prefix());
    let c = table.cost(&cand);
    if c < best_cost {
        best = cand;
        best_cost = c;
    }
    let mut rng = rng_from_seed(opts.seed);
    for _ in 1..opts.restarts {
        let mut flags: Vec<bool> = (0..k).map(|_| rng.random::<bool>()).collect();
        if !flags.iter().any(|&f| f) {
            flags[rng.random_range(0..k)] = true;
        }
        let cand = local_search(&table, flags);
        let c = table.cost(&cand);
        if c < best_cost {
            best = cand;
            best_cost = c;
        }
    }
    Ok(SelectionVector { flags: best })
}

/// First-improvement descent over single flips, then (1,0) -> (0,1) swaps.
fn local_search(table: &CostTable, mut flags: Vec<bool>) -> Vec<bool> {
    let k = flags.len();
    let mut cur = table.cost(&flags);
    'outer: loop {
        for i in 0..k {
            flags[i] = !flags[i];
            if flags.iter().any(|&f| f) {
                let c = table.cost(&flags);
                if c < cur {
                    cur = c;
                    continue 'outer;
                }
            }
            flags[i] = !flags[i];
        }
        for i in 0..k {
            if !flags[i] {
                continue;
            }
            for j in 0..k {
                if flags[j] {
                    continue;
                }
                flags[i] = false;
                flags[j] = true;
                let c = table.cost(&flags);
                if c < cur {
                    cur = c;
                    continue 'outer;
                }
                flags[i] = true;
                flags[j] = false;
            }
        }
        return flags;
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    sensor_id: usize,
    sigma: f64,
    xi: f64,
    sample_count: usize,
    hurst: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail_prob: Option<f64>,
}

/// Writes `sensor_id,sigma,xi,sample_count,hurst` rows, followed by `x0,tail_prob`
/// columns when every report carries them.
pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[LocalModelReport]) -> Result<()> {
    let with_threshold = reports.iter().all(|r| r.x0.is_some() && r.tail_prob.is_some());
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(ReportRow {
            sensor_id: r.sensor_id,
            sigma: r.model.sigma,
            xi: r.model.xi,
            sample_count: r.sample_count,
            hurst: r.hurst,
            x0: r.x0.filter(|_| with_threshold),
            tail_prob: r.tail_prob.filter(|_| with_threshold),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports_csv(path: impl AsRef<Path>) -> Result<Vec<LocalModelReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<ReportRow>() {
        let row = row?;
        if row.sample_count == 0 {
            return Err(invalid("sample_count", format!("sensor {} has zero samples", row.sensor_id)));
        }
        out.push(LocalModelReport {
            sensor_id: row.sensor_id,
            model: GpdParams::new(row.sigma, row.xi)?,
            sample_count: row.sample_count,
            hurst: row.hurst,
            x0: row.x0,
            tail_prob: row.tail_prob,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(id: usize, sigma: f64, xi: f64, n: usize, h: f64) -> LocalModelReport {
        LocalModelReport::new(id, GpdParams { sigma, xi }, n, h)
    }

    #[test]
    fn fed_average_examples() {
        let r = [rep(0, 1.0, 0.0, 10, 0.5), rep(1, 2.0, 0.5, 10, 0.5)];
        let g = fed_average(&r, &SelectionVector::all(2)).unwrap();
        assert!((g.sigma - 1.5).abs() < 1e-15 && (g.xi - 0.25).abs() < 1e-15);
        let one = fed_average(&r, &SelectionVector { flags: vec![false, true] }).unwrap();
        assert_eq!(one, r[1].model);
        let r = [rep(0, 1.0, 0.0, 30, 0.5), rep(1, 5.0, 0.4, 10, 0.5)];
        let g = fed_average(&r, &SelectionVector::all(2)).unwrap();
        assert!((g.sigma - 2.0).abs() < 1e-15 && (g.xi - 0.1).abs() < 1e-15);
    }

    #[test]
    fn fed_average_rejects_empty_selection() {
        let r = [rep(0, 1.0, 0.0, 10, 0.5)];
        assert!(fed_average(&r, &SelectionVector { flags: vec![false] }).is_err());
        assert!(fed_average(&r, &SelectionVector::all(2)).is_err());
    }

    #[test]
    fn cost_examples() {
        let one = [rep(0, 1.0, 0.0, 10, 0.5)];
        assert!((selection_cost(&one, &SelectionVector::all(1)).unwrap() - 0.1).abs() < 1e-15);
        let two = [rep(0, 1.0, 0.0, 10, 0.5), rep(1, 1.0, 0.0, 10, 0.5)];
        let both = selection_cost(&two, &SelectionVector::all(2)).unwrap();
        let single = selection_cost(&two, &SelectionVector { flags: vec![true, false] }).unwrap();
        assert!((both - 0.05).abs() < 1e-15);
        assert!(both < single);
    }

    #[test]
    fn cost_tends_to_one_as_hurst_approaches_one() {
        let r = [rep(0, 1.0, 0.0, 10, 1.0 - 1e-12)];
        let c = selection_cost(&r, &SelectionVector::all(1)).unwrap();
        assert!((c - 1.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn weight_matches_double_sum() {
        let r = rep(0, 1.0, 0.0, 7, 0.8);
        let mut direct = 0.0;
        for i in 1..=7usize {
            for m in 1..=(7 - i) {
                direct += (m as f64).powf(2.0 * 0.8 - 2.0);
            }
        }
        assert!((variance_weight(&r) - (7.0 + 2.0 * direct)).abs() < 1e-12);
    }

    #[test]
    fn identical_srd_sensors_select_everything() {
        let r: Vec<_> = (0..6).map(|i| rep(i, 1.0, 0.0, 20, 0.5)).collect();
        let init = SelectionVector { flags: vec![false, true, false, false, false, false] };
        assert_eq!(select_models(&r, &init).unwrap(), SelectionVector::all(6));
    }

    #[test]
    fn single_sensor_is_selected() {
        let r = [rep(0, 1.0, 0.0, 5, 0.9)];
        let s = select_models(&r, &SelectionVector { flags: vec![false] }).unwrap();
        assert_eq!(s.flags, vec![true]);
    }

    #[test]
    fn strongly_correlated_sensor_is_dropped() {
        let mut r: Vec<_> = (0..5).map(|i| rep(i, 1.0, 0.0, 5, 0.5)).collect();
        r.push(rep(5, 1.0, 0.0, 5, 0.95));
        let s = select_models(&r, &SelectionVector::all(6)).unwrap();
        assert_eq!(s.flags, vec![true, true, true, true, true, false]);
    }

    #[test]
    fn hurst_rejects_short_and_constant() {
        assert!(hurst_estimate(&[1.0; 32]).is_err());
        assert!(matches!(hurst_estimate(&[3.0; 256]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn window_sizes_span_range() {
        for n in [64, 100, 500, 1 << 14] {
            let s = rs_window_sizes(n);
            assert!(s.len() >= 4, "n={n}: {s:?}");
            assert_eq!(s[0], 8);
            assert_eq!(*s.last().unwrap(), n / 2);
        }
    }

    #[test]
    fn report_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("models.csv");
        let mut reports = vec![rep(3, 1.25, -0.125, 17, 0.75), rep(9, 0.5, 0.25, 4, 0.5)];
        write_reports_csv(&p, &reports).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sensor_id,sigma,xi,sample_count,hurst\n"));
        assert_eq!(read_reports_csv(&p).unwrap(), reports);
        for r in &mut reports {
            r.x0 = Some(5.5);
            r.tail_prob = Some(0.01);
        }
        write_reports_csv(&p, &reports).unwrap();
        assert_eq!(read_reports_csv(&p).unwrap(), reports);
        let sel = SelectionVector { flags: vec![false, true] };
        let sp = dir.path().join("selection.csv");
        sel.write_csv(&sp, &reports).unwrap();
        assert_eq!(SelectionVector::read_csv(&sp, &reports).unwrap(), sel);
    }

    #[test]
    fn escapes_the_all_ones_local_optimum() {
        // Two large, strongly correlated sensors next to one small SRD sensor:
        // from all-ones no single flip or swap helps, yet the SRD sensor alone
        // is far cheaper.
        let r = [rep(0, 1.0, 0.0, 100, 0.98), rep(1, 1.0, 0.0, 100, 0.98), rep(2, 1.0, 0.0, 5, 0.5)];
        let table = CostTable::new(&r);
        let stuck = local_search(&table, vec![true; 3]);
        let sel = select_models(&r, &SelectionVector::all(3)).unwrap();
        assert!(table.cost(&sel.flags) < table.cost(&stuck));
        assert_eq!(sel.flags, vec![false, false, true]);
    }

    proptest::proptest! {
        #[test]
        fn selection_is_a_local_optimum_no_worse_than_init(
            sensors in proptest::collection::vec((5usize..60, 0.5f64..0.99, proptest::bool::ANY), 1..9),
            mask in 1u64..256,
        ) {
            let r: Vec<_> = sensors
                .iter()
                .enumerate()
                .map(|(i, &(n, h, srd))| rep(i, 1.0, 0.0, n, if srd { 0.5 } else { h }))
                .collect();
            let k = r.len();
            let init = SelectionVector::from_mask(mask & ((1 << k) - 1), k);
            let sel = select_models(&r, &init).unwrap();
            let table = CostTable::new(&r);
            let got = table.cost(&sel.flags);
            let start = if init.any() { init } else { SelectionVector::all(k) };
            proptest::prop_assert!(got <= table.cost(&start.flags));
            let mut probe = sel.flags.clone();
            for i in 0..k {
                probe[i] = !probe[i];
                if probe.iter().any(|&f| f) {
                    proptest::prop_assert!(table.cost(&probe) >= got);
                }
                probe[i] = !probe[i];
            }
        }
    }
}
