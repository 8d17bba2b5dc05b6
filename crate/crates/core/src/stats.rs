//! Aggregate statistics over independent runs: interquartile mean,
//! percentile bootstrap intervals, probability of improvement, and the
//! two-sample Kolmogorov-Smirnov test.

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::error::{Error, Result};

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Empty(what));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{what} contains a non-finite value"
        )));
    }
    Ok(())
}

/// Mean after dropping `floor(n/4)` values from each end of the sorted
/// sample.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "interquartile mean needs at least 4 values, got {}",
            values.len()
        )));
    }
    check_finite(values, "sample")?;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 4;
    let kept = &v[k..v.len() - k];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn resample(values: &[f64], rng: &mut dyn RngCore, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..values.len()).map(|_| values[rng.random_range(0..values.len())]));
}

/// Percentile bootstrap interval for `statistic` at confidence `level`.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: &dyn Fn(&[f64]) -> f64,
    n_resamples: usize,
    level: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64)> {
    check_finite(values, "sample")?;
    if n_resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 resamples, got {n_resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let mut buf = Vec::with_capacity(values.len());
    let mut stats: Vec<f64> = (0..n_resamples)
        .map(|_| {
            resample(values, rng, &mut buf);
            statistic(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&stats, tail),
        quantile_sorted(&stats, 1.0 - tail),
    ))
}

/// Fraction of pairs `(x_i, y_j)` with `x_i > y_j`, ties counting one half.
pub fn probability_of_improvement(x: &[f64], y: &[f64]) -> Result<f64> {
    check_finite(x, "first sample")?;
    check_finite(y, "second sample")?;
    let mut score = 0.0;
    for &a in x {
        for &b in y {
            score += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(score / (x.len() * y.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Improvement {
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Probability of improvement with a percentile bootstrap interval from
/// resampling both samples independently.
pub fn probability_of_improvement_ci(
    x: &[f64],
    y: &[f64],
    n_resamples: usize,
    level: f64,
    rng: &mut dyn RngCore,
) -> Result<Improvement> {
    let probability = probability_of_improvement(x, y)?;
    if n_resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 resamples, got {n_resamples}"
        )));
    }
    let (mut bx, mut by) = (Vec::new(), Vec::new());
    let mut stats: Vec<f64> = (0..n_resamples)
        .map(|_| {
            resample(x, rng, &mut bx);
            resample(y, rng, &mut by);
            probability_of_improvement(&bx, &by).expect("resamples are valid")
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Improvement {
        probability,
        ci_low: quantile_sorted(&stats, tail),
        ci_high: quantile_sorted(&stats, 1.0 - tail),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest sample size on either side for which the exact null
/// distribution is used.
pub const KS_EXACT_LIMIT: usize = 12;

/// `max |n_y·F_x - n_x·F_y|` scaled by `n_x·n_y`, as an integer.
fn ks_scaled_statistic(x: &[f64], y: &[f64]) -> u64 {
    let (n, m) = (x.len() as i64, y.len() as i64);
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0i64;
    while i < xs.len() || j < ys.len() {
        let t = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        best = best.max((i as i64 * m - j as i64 * n).abs());
    }
    best as u64
}

/// Probability under the null that the scaled statistic is at least `d`:
/// one minus the share of monotone lattice paths from (0,0) to (n,m) that
/// keep `|i·m - j·n| < d` at every point.
fn ks_exact_p(n: usize, m: usize, d: u64) -> f64 {
    let inside = |i: usize, j: usize| ((i * m) as i64 - (j * n) as i64).unsigned_abs() < d;
    let mut paths = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            if !inside(i, j) {
                continue;
            }
            paths[i][j] = if i == 0 && j == 0 {
                1.0
            } else {
                let up = if i > 0 { paths[i - 1][j] } else { 0.0 };
                let left = if j > 0 { paths[i][j - 1] } else { 0.0 };
                up + left
            };
        }
    }
    let mut total = 1.0f64;
    for k in 1..=n {
        total = total * (m + k) as f64 / k as f64;
    }
    (1.0 - paths[n][m] / total.round()).clamp(0.0, 1.0)
}

/// Asymptotic Kolmogorov tail with the small-sample correction of
/// Stephens.
fn ks_asymptotic_p(n: usize, m: usize, d: f64) -> f64 {
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sided two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    check_finite(x, "first sample")?;
    check_finite(y, "second sample")?;
    let (n, m) = (x.len(), y.len());
    let scaled = ks_scaled_statistic(x, y);
    let statistic = scaled as f64 / (n * m) as f64;
    if scaled == 0 {
        return Ok(KsResult {
            statistic,
            p_value: 1.0,
            exact: true,
        });
    }
    let exact = n <= KS_EXACT_LIMIT && m <= KS_EXACT_LIMIT;
    let p_value = if exact {
        ks_exact_p(n, m, scaled)
    } else {
        ks_asymptotic_p(n, m, statistic)
    };
    Ok(KsResult {
        statistic,
        p_value,
        exact,
    })
}
