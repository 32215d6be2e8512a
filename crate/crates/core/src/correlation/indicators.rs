//! Pairwise difference indicators between two equal-length rate vectors.

use serde::{Deserialize, Serialize};

use super::CorrelationError;

/// The four difference indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Indicator {
    /// Mean absolute difference.
    Ad,
    /// Euclidean norm of the difference divided by the length.
    Ed,
    /// Cumulative dynamic-time-warping cost divided by the length.
    Cddtw,
    /// One minus the Pearson correlation.
    Pd,
}

impl Indicator {
    pub const ALL: [Indicator; 4] = [Indicator::Ad, Indicator::Ed, Indicator::Cddtw, Indicator::Pd];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::Ad => "AD",
            Indicator::Ed => "ED",
            Indicator::Cddtw => "CDDTW",
            Indicator::Pd => "PD",
        }
    }

    pub fn evaluate(self, a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
        match self {
            Indicator::Ad => arithmetic_difference(a, b),
            Indicator::Ed => euclidean_difference(a, b),
            Indicator::Cddtw => cddtw(a, b),
            Indicator::Pd => pearson_distance(a, b),
        }
    }
}

impl std::fmt::Display for Indicator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), CorrelationError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CorrelationError::PairShape {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CorrelationError::NonFinite);
    }
    Ok(())
}

/// `sum |a_i - b_i| / m`
pub fn arithmetic_difference(a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// `sqrt(sum (a_i - b_i)^2) / m`. The divisor is the length itself, not its
/// square root.
pub fn euclidean_difference(a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(a, b)?;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(ss.sqrt() / a.len() as f64)
}

/// Length-normalized DTW cost with absolute-difference local cost.
///
/// `C(i, j) = |a_i - b_j| + min(C(i-1, j), C(i, j-1), C(i-1, j-1))`, with the
/// first row and column accumulating along their only predecessor.
pub fn cddtw(a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(a, b)?;
    let m = a.len();
    let mut prev = vec![0.0_f64; m];
    let mut cur = vec![0.0_f64; m];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            let cost = (ai - bj).abs();
            cur[j] = cost
                + match (i, j) {
                    (0, 0) => 0.0,
                    (0, _) => cur[j - 1],
                    (_, 0) => prev[0],
                    _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
                };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1] / m as f64)
}

/// `1 - r` where `r` is the sample Pearson correlation. Fails on constant
/// inputs instead of producing NaN.
pub fn pearson_distance(a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
    check_pair(a, b)?;
    if is_constant(a) || is_constant(b) {
        return Err(CorrelationError::DegenerateSeries);
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let r = (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0);
    Ok(1.0 - r)
}

pub(crate) fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}
