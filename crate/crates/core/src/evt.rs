//! Peaks-over-threshold modelling with the generalized Pareto distribution.
//!
//! Inter-arrival samples `x` are mapped to `X = -ln x` so that short
//! inter-arrivals form the upper tail. Exceedances over an empirical quantile
//! are fitted by batch gradient ascent on the average log-likelihood.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Below this |xi| the CCDF and density use their xi -> 0 expansions.
pub const XI_SERIES_DENSITY: f64 = 1e-6;
/// Below this |xi| the xi-component of the score uses its expansion.
pub const XI_SERIES_GRADIENT: f64 = 1e-4;
/// Lower bound enforced on sigma during fitting.
pub const SIGMA_FLOOR: f64 = 1e-6;

const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
}

impl Default for GpdParams {
    /// Common starting point shared by all sensors.
    fn default() -> Self {
        Self { sigma: 1.0, xi: 0.1 }
    }
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma", format!("{sigma} must be > 0")));
        }
        if !xi.is_finite() {
            return Err(invalid("xi", "must be finite"));
        }
        Ok(Self { sigma, xi })
    }

    /// `1 + xi y / sigma > 0`.
    #[inline]
    pub fn supports(&self, y: f64) -> bool {
        self.sigma > 0.0 && 1.0 + self.xi * y / self.sigma > 0.0
    }

    /// Survival function `(1 + xi y/sigma)^(-1/xi)`.
    pub fn ccdf(&self, y: f64) -> f64 {
        let u = y / self.sigma;
        if self.xi.abs() < XI_SERIES_DENSITY {
            let xi = self.xi;
            (-u + xi * u * u / 2.0 - xi * xi * u * u * u / 3.0).exp()
        } else if self.supports(y) {
            (-(self.xi * u).ln_1p() / self.xi).exp()
        } else {
            0.0
        }
    }

    /// Log-density `-ln sigma - (1 + 1/xi) ln(1 + xi y / sigma)`.
    pub fn ln_density(&self, y: f64) -> f64 {
        let u = y / self.sigma;
        if !self.supports(y) {
            return f64::NEG_INFINITY;
        }
        let l = (self.xi * u).ln_1p();
        let l_over_xi = if self.xi.abs() < XI_SERIES_DENSITY {
            u - self.xi * u * u / 2.0 + self.xi * self.xi * u * u * u / 3.0
        } else {
            l / self.xi
        };
        -self.sigma.ln() - l - l_over_xi
    }

    /// Score `(d/dsigma, d/dxi) ln phi(theta | y)`.
    pub fn score(&self, y: f64) -> [f64; 2] {
        let (s, xi) = (self.sigma, self.xi);
        let d_sigma = (xi + 1.0) * y / (s * s + s * xi * y) - 1.0 / s;
        let d_xi = if xi.abs() < XI_SERIES_GRADIENT {
            let u = y / s;
            let (u2, u3) = (u * u, u * u * u);
            -u + u2 / 2.0 + xi * (u2 - 2.0 * u3 / 3.0) + xi * xi * (0.75 * u3 * u - u3)
        } else {
            (xi * y / s).ln_1p() / (xi * xi) - (1.0 + 1.0 / xi) * y / (s + xi * y)
        };
        [d_sigma, d_xi]
    }

    /// Inverse-transform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        if self.xi.abs() < XI_SERIES_DENSITY {
            -self.sigma * u.ln()
        } else {
            self.sigma / self.xi * (u.powf(-self.xi) - 1.0)
        }
    }
}

pub fn gpd_ccdf(p: &GpdParams, y: f64) -> f64 {
    p.ccdf(y)
}

pub fn loglik_gradient(p: &GpdParams, y: f64) -> [f64; 2] {
    p.score(y)
}

/// Exceedances of `X = -ln x` over an empirical threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSet {
    pub threshold_x0: f64,
    /// Empirical `P(X > x0)`, i.e. `values.len() / total`.
    pub tail_prob: f64,
    pub values: Vec<f64>,
    pub total: usize,
}

impl ExceedanceSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn average_ln_likelihood(&self, p: &GpdParams) -> f64 {
        self.values.iter().map(|&y| p.ln_density(y)).sum::<f64>() / self.values.len() as f64
    }

    pub fn mean_score(&self, p: &GpdParams) -> [f64; 2] {
        let mut g = [0.0; 2];
        for &y in &self.values {
            let s = p.score(y);
            g[0] += s[0];
            g[1] += s[1];
        }
        let n = self.values.len() as f64;
        [g[0] / n, g[1] / n]
    }

    /// Writes an `index,y` CSV with a header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "y"])?;
        for (i, y) in self.values.iter().enumerate() {
            w.write_record([i.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `y` column of a CSV; threshold and tail probability are not
    /// stored in the file and come back as NaN.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let col = r
            .headers()?
            .iter()
            .position(|h| h.trim() == "y")
            .ok_or_else(|| invalid("csv", "missing `y` column"))?;
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let y: f64 = rec[col]
                .trim()
                .parse()
                .map_err(|e| invalid("y", format!("{e}")))?;
            if !(y > 0.0) {
                return Err(invalid("y", format!("exceedance {y} must be > 0")));
            }
            values.push(y);
        }
        let total = values.len();
        Ok(Self { threshold_x0: f64::NAN, tail_prob: f64::NAN, values, total })
    }
}

/// Exceedances of `-ln x` above its nearest-rank `(1 - tail_quantile)` quantile.
pub fn extract_exceedances(interarrivals: &[f64], tail_quantile: f64) -> Result<ExceedanceSet> {
    if let Some(bad) = interarrivals.iter().find(|&&x| !(x > 0.0)) {
        return Err(invalid("interarrivals", format!("{bad} is not positive")));
    }
    let xs: Vec<f64> = interarrivals.iter().map(|x| -x.ln()).collect();
    exceedances_of(&xs, tail_quantile)
}

/// Same as [`extract_exceedances`] for samples already on the `X` scale.
pub fn exceedances_of(xs: &[f64], tail_quantile: f64) -> Result<ExceedanceSet> {
    if !(tail_quantile > 0.0 && tail_quantile < 0.5) {
        return Err(invalid("tail_quantile", format!("{tail_quantile} not in (0, 0.5)")));
    }
    let n = xs.len();
    let need = (2.0 / tail_quantile).ceil() as usize;
    if n < need {
        return Err(invalid("samples", format!("{n} < required {need}")));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(invalid("samples", "NaN in input"));
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    // ceil((1 - q) n) computed as n - floor(q n) to stay exact at integer q n.
    let tail_count = (tail_quantile * n as f64 + 1e-9).floor() as usize;
    let rank = n - tail_count;
    let x0 = sorted[rank - 1];
    let values: Vec<f64> = xs.iter().filter(|&&x| x > x0).map(|&x| x - x0).collect();
    if values.is_empty() {
        return Err(Error::Degenerate(format!("no sample strictly exceeds x0 = {x0}")));
    }
    Ok(ExceedanceSet {
        threshold_x0: x0,
        tail_prob: values.len() as f64 / n as f64,
        values,
        total: n,
    })
}

/// Ascent trace, one entry per iteration (average log-likelihood after the step).
pub type FitTrace = Vec<f64>;

/// `iters` steps of batch gradient ascent on the average log-likelihood.
pub fn fit_local(data: &ExceedanceSet, init: GpdParams, rate: f64, iters: usize) -> Result<GpdParams> {
    fit_local_traced(data, init, rate, iters).map(|(p, _)| p)
}

pub fn fit_local_traced(
    data: &ExceedanceSet,
    init: GpdParams,
    rate: f64,
    iters: usize,
) -> Result<(GpdParams, FitTrace)> {
    if data.is_empty() {
        return Err(invalid("data", "empty exceedance set"));
    }
    if !(rate > 0.0) {
        return Err(invalid("rate", format!("{rate} must be > 0")));
    }
    let y_max = data.values.iter().copied().fold(0.0, f64::max);
    let feasible = |p: &GpdParams| p.sigma >= SIGMA_FLOOR && p.supports(y_max);
    if !feasible(&init) {
        return Err(invalid("init", "initial parameters violate the support condition"));
    }
    let mut theta = init;
    let mut ll = data.average_ln_likelihood(&theta);
    if !ll.is_finite() {
        return Err(Error::NoValidStep { sigma: theta.sigma, xi: theta.xi });
    }
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let g = data.mean_score(&theta);
        if !(g[0].is_finite() && g[1].is_finite()) {
            return Err(Error::NoValidStep { sigma: theta.sigma, xi: theta.xi });
        }
        let mut step = rate;
        for _ in 0..MAX_HALVINGS {
            let cand = GpdParams {
                sigma: (theta.sigma + step * g[0]).max(SIGMA_FLOOR),
                xi: theta.xi + step * g[1],
            };
            if feasible(&cand) {
                let cand_ll = data.average_ln_likelihood(&cand);
                if cand_ll >= ll {
                    theta = cand;
                    ll = cand_ll;
                    break;
                }
            }
            step *= 0.5;
        }
        // Exhausting the halvings means no ascent direction is numerically
        // resolvable; theta is kept as is.
        trace.push(ll);
    }
    Ok((theta, trace))
}
