//! Fractional Gaussian noise synthesis.
//!
//! The primary route is circulant embedding (Davies-Harte), which reproduces
//! the fGn autocovariance exactly in O(n log n). When the embedding has a
//! negative eigenvalue the sampler falls back to the Durbin-Levinson
//! conditional recursion, which is O(n²) but valid for any positive-definite
//! covariance.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Autocovariance of unit-variance fGn at integer lag `k`.
pub fn autocovariance(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

/// Which algorithm produced a sample path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Independent,
    CirculantEmbedding,
    Sequential,
}

/// Draws `n` values of zero-mean, unit-variance fGn with the given Hurst exponent.
pub fn sample<R: Rng + ?Sized>(hurst: f64, n: usize, rng: &mut R) -> (Vec<f64>, Method) {
    if n == 0 {
        return (Vec::new(), Method::Independent);
    }
    if hurst == 0.5 {
        let v = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        return (v, Method::Independent);
    }
    match circulant_eigenvalues(hurst, n) {
        Some(eig) => (circulant_sample(&eig, n, rng), Method::CirculantEmbedding),
        None => (sequential_sample(hurst, n, rng), Method::Sequential),
    }
}

/// Eigenvalues of the minimal circulant embedding of size 2n, or `None` if
/// any is negative beyond round-off.
fn circulant_eigenvalues(hurst: f64, n: usize) -> Option<Vec<f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex64> = Vec::with_capacity(m);
    for k in 0..=n {
        row.push(Complex64::new(autocovariance(hurst, k), 0.0));
    }
    for k in (1..n).rev() {
        row.push(Complex64::new(autocovariance(hurst, k), 0.0));
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let tol = 1e-10 * row[0].re.abs().max(1.0);
    let mut eig = Vec::with_capacity(m);
    for z in row {
        if z.re < -tol {
            return None;
        }
        eig.push(z.re.max(0.0));
    }
    Some(eig)
}

fn circulant_sample<R: Rng + ?Sized>(eig: &[f64], n: usize, rng: &mut R) -> Vec<f64> {
    let m = eig.len();
    let scale = 1.0 / m as f64;
    let mut buf: Vec<Complex64> = eig
        .iter()
        .map(|&l| {
            let s = (l * scale).sqrt();
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex64::new(s * a, s * b)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    buf.truncate(n);
    buf.into_iter().map(|z| z.re).collect()
}

/// Durbin-Levinson recursion on the exact fGn autocovariance.
pub(crate) fn sequential_sample<R: Rng + ?Sized>(hurst: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma: Vec<f64> = (0..n).map(|k| autocovariance(hurst, k)).collect();
    let mut out = Vec::with_capacity(n);
    let mut phi: Vec<f64> = Vec::with_capacity(n);
    let mut prev: Vec<f64> = Vec::with_capacity(n);
    let mut var = gamma[0];
    let z: f64 = rng.sample(StandardNormal);
    out.push(z * var.sqrt());
    for t in 1..n {
        let acc: f64 = (0..t - 1).map(|j| prev[j] * gamma[t - 1 - j]).sum();
        let kappa = (gamma[t] - acc) / var;
        phi.clear();
        for j in 0..t - 1 {
            phi.push(prev[j] - kappa * prev[t - 2 - j]);
        }
        phi.push(kappa);
        var *= 1.0 - kappa * kappa;
        let mean: f64 = (0..t).map(|j| phi[j] * out[t - 1 - j]).sum();
        let z: f64 = rng.sample(StandardNormal);
        out.push(mean + z * var.max(0.0).sqrt());
        std::mem::swap(&mut phi, &mut prev);
    }
    out
}
