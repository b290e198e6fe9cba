//! Relative weight change between snapshots, weight/gradient histograms, and
//! relative gap arithmetic.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Coordinates whose starting magnitude is below this are left out of the mean.
pub const ZERO_WEIGHT_THRESHOLD: f64 = 1e-12;

/// `(1/N) Σ_j |(w_after_j − w_before_j) / w_before_j|` over coordinates with `|w_before_j| ≥ 1e-12`.
pub fn relative_weight_change(before: &[f64], after: &[f64]) -> Result<f64> {
    if before.len() != after.len() {
        return Err(Error::Dimension {
            op: "relative_weight_change",
            left: vec![before.len()],
            right: vec![after.len()],
        });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&w0, &w1) in before.iter().zip(after) {
        if w0.abs() < ZERO_WEIGHT_THRESHOLD {
            continue;
        }
        sum += ((w1 - w0) / w0).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::degenerate("every coordinate has a zero starting weight"));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightChangePoint {
    pub update: u64,
    pub value: f64,
}

/// One series per group from consecutive `(update, flattened group values)` snapshots.
/// Each point is stamped with the earlier snapshot's update index.
pub fn weight_change_series(snapshots: &[(u64, Vec<f64>)]) -> Result<Vec<WeightChangePoint>> {
    snapshots
        .windows(2)
        .map(|w| {
            Ok(WeightChangePoint {
                update: w[0].0,
                value: relative_weight_change(&w[0].1, &w[1].1)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `(low, high, count)` per bin.
    pub bins: Vec<(f64, f64, usize)>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

/// Fixed-width histogram over the observed range. A constant input fills bin 0.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::contract("histogram needs values and at least one bin"));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            (
                min + k as f64 * width,
                if k + 1 == bins { max } else { min + (k + 1) as f64 * width },
                c,
            )
        })
        .collect();
    Ok(Histogram { bins, min, max, mean, std })
}

/// `100 · (candidate − baseline) / baseline`.
pub fn relative_gap(candidate: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::contract(format!("gap baseline must be positive, got {baseline}")));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapRounding {
    /// Nearest integer percent.
    Integer,
    /// One decimal, truncated toward zero.
    TruncateOneDecimal,
}

pub fn round_gap(pct: f64, mode: GapRounding) -> f64 {
    match mode {
        GapRounding::Integer => pct.round(),
        // The small nudge keeps values like 3.9 (stored as 3.8999…) from dropping a tenth.
        GapRounding::TruncateOneDecimal => ((pct * 10.0) + 1e-9 * pct.signum()).trunc() / 10.0,
    }
}

/// `group,update_index,rel_change` rows.
pub fn weight_change_csv(header: &str, series: &[(String, Vec<WeightChangePoint>)]) -> String {
    let mut s = format!("{header}group,update_index,rel_change\n");
    for (group, points) in series {
        for p in points {
            writeln!(s, "{group},{},{}", p.update, p.value).unwrap();
        }
    }
    s
}

/// `group,bin_low,bin_high,count` rows.
pub fn histogram_csv(header: &str, hists: &[(String, Histogram)]) -> String {
    let mut s = format!("{header}group,bin_low,bin_high,count\n");
    for (group, h) in hists {
        for (lo, hi, c) in &h.bins {
            writeln!(s, "{group},{lo},{hi},{c}").unwrap();
        }
    }
    s
}

/// `group,kind,min,max,mean,std` rows.
pub fn stats_csv(header: &str, rows: &[(String, &str, Histogram)]) -> String {
    let mut s = format!("{header}group,kind,min,max,mean,std\n");
    for (group, kind, h) in rows {
        writeln!(s, "{group},{kind},{},{},{},{}", h.min, h.max, h.mean, h.std).unwrap();
    }
    s
}
