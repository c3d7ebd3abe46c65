//! Monte Carlo plumbing: reproducible per-chunk random streams, `L^q`
//! estimates with delta-method standard errors, and log₂ slope fits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples drawn from one random stream before moving to the next.
pub const CHUNK: usize = 256;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser, used to derive per-path seeds from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Evaluates `f` once per sample, chunk `c` drawing from stream `c` of
/// `seed`. The output order is the sample order whatever the thread count.
pub fn sample_map<T, F>(samples: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    per_chunk.into_iter().flatten().collect()
}

/// Evaluates `f(i)` for `i in 0..count`, in parallel, returning results in
/// index order.
pub fn index_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// `(E|F|^q)^{1/q}` from sample values of `|F|`.
pub fn lq_norm(values: &[f64], q: f64) -> Result<LqEstimate> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("q = {q} must be >= 1")));
    }
    if values.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let n = values.len() as f64;
    let mut mean = 0.0;
    for v in values {
        mean += v.abs().powf(q);
    }
    mean /= n;
    if mean == 0.0 {
        return Ok(LqEstimate {
            estimate: 0.0,
            stderr: 0.0,
            samples: values.len(),
        });
    }
    let mut var = 0.0;
    for v in values {
        let dev = v.abs().powf(q) - mean;
        var += dev * dev;
    }
    var /= (n - 1.0).max(1.0);
    let se_mean = (var / n).sqrt();
    let estimate = mean.powf(1.0 / q);
    Ok(LqEstimate {
        estimate,
        stderr: estimate / (q * mean) * se_mean,
        samples: values.len(),
    })
}

/// Empirical frequency with its binomial standard error.
pub fn proportion(hits: usize, total: usize) -> LqEstimate {
    let n = total.max(1) as f64;
    let p = hits as f64 / n;
    LqEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        samples: total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log₂ residuals.
    pub residual: f64,
    /// Standard error of the slope propagated from per-point errors; zero
    /// when none were supplied.
    pub slope_stderr: f64,
}

/// Least squares of `log₂ value` against `scale`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    fit_slope_with_errors(points, None)
}

/// As [`fit_slope`], with `errors[i]` the standard error of `points[i].1`.
pub fn fit_slope_with_errors(points: &[(f64, f64)], errors: Option<&[f64]>) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(e) = errors {
        if e.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: e.len(),
            });
        }
    }
    for &(x, y) in points {
        if !(y > 0.0) || !y.is_finite() || !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "slope fit needs finite positive values, got ({x}, {y})"
            )));
        }
    }
    let n = points.len() as f64;
    let xbar = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ys: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("slope fit needs distinct scales".into()));
    }
    let sxy: f64 = points
        .iter()
        .zip(&ys)
        .map(|(p, y)| (p.0 - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residual = (points
        .iter()
        .zip(&ys)
        .map(|(p, y)| (y - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let slope_stderr = match errors {
        None => 0.0,
        Some(e) => points
            .iter()
            .zip(e)
            .map(|(p, se)| {
                let w = (p.0 - xbar) / sxx;
                let se_log = se / (p.1 * std::f64::consts::LN_2);
                (w * se_log).powi(2)
            })
            .sum::<f64>()
            .sqrt(),
    };
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
        slope_stderr,
    })
}
