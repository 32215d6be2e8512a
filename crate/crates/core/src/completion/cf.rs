//! User-based (spatial) and item-based (temporal) collaborative filtering
//! over a region x year window centered on each target.

use super::{check_matrix_targets, clamp_rate, fallback, unobserved, CompleterConfig, CompletionError, MatrixEstimate, MatrixPrediction, Source};
use crate::data::DiseaseMatrix;
use crate::geo::NeighborOrder;

/// Upper bound on a similarity; reached when two rows (or columns) agree
/// exactly over their overlap.
pub const SIMILARITY_CAP: f64 = 1e12;

/// Reciprocal root-mean-square deviation over `count` overlapping entries.
fn similarity(sum_sq: f64, count: usize) -> f64 {
    if sum_sq == 0.0 {
        SIMILARITY_CAP
    } else {
        (1.0 / (sum_sq / count as f64).sqrt()).min(SIMILARITY_CAP)
    }
}

fn time_window(j: usize, years: usize, w: usize) -> std::ops::RangeInclusive<usize> {
    let half = (w - 1) / 2;
    j.saturating_sub(half)..=(j + half).min(years - 1)
}

fn check_neighbors(matrix: &DiseaseMatrix, neighbors: &NeighborOrder) -> Result<(), CompletionError> {
    if neighbors.len() != matrix.num_regions() {
        return Err(CompletionError::InvalidInput(format!(
            "neighbor order covers {} regions, matrix has {}",
            neighbors.len(),
            matrix.num_regions()
        )));
    }
    Ok(())
}

/// Weighted average of the nearest regions' values at year `j`, weighted by
/// each region's similarity to region `i` over the window years.
pub(crate) fn ucf_estimate(matrix: &DiseaseMatrix, neighbors: &NeighborOrder, w: usize, i: usize, j: usize) -> Option<f64> {
    let cols = time_window(j, matrix.num_years(), w);
    let (mut num, mut den) = (0.0, 0.0);
    for &k in neighbors.nearest(i, w - 1) {
        let Some(vkj) = matrix.get(k, j) else { continue };
        let (mut ss, mut overlap) = (0.0, 0);
        for c in cols.clone() {
            if let (Some(a), Some(b)) = (matrix.get(i, c), matrix.get(k, c)) {
                ss += (a - b) * (a - b);
                overlap += 1;
            }
        }
        if overlap == 0 {
            continue;
        }
        let sim = similarity(ss, overlap);
        num += vkj * sim;
        den += sim;
    }
    (den > 0.0).then(|| num / den)
}

/// Weighted average of region `i`'s values in the window years, weighted by
/// each year's similarity to year `j` over the window regions.
pub(crate) fn icf_estimate(matrix: &DiseaseMatrix, neighbors: &NeighborOrder, w: usize, i: usize, j: usize) -> Option<f64> {
    let rows: Vec<usize> = std::iter::once(i).chain(neighbors.nearest(i, w - 1).iter().copied()).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for k in time_window(j, matrix.num_years(), w) {
        if k == j {
            continue;
        }
        let Some(vik) = matrix.get(i, k) else { continue };
        let (mut ss, mut overlap) = (0.0, 0);
        for &r in &rows {
            if let (Some(a), Some(b)) = (matrix.get(r, j), matrix.get(r, k)) {
                ss += (a - b) * (a - b);
                overlap += 1;
            }
        }
        if overlap == 0 {
            continue;
        }
        let sim = similarity(ss, overlap);
        num += vik * sim;
        den += sim;
    }
    (den > 0.0).then(|| num / den)
}

type Estimator = fn(&DiseaseMatrix, &NeighborOrder, usize, usize, usize) -> Option<f64>;

fn predict_with(
    estimator: Estimator,
    matrix: &DiseaseMatrix,
    neighbors: &NeighborOrder,
    config: &CompleterConfig,
    targets: &[(usize, usize)],
) -> Result<MatrixPrediction, CompletionError> {
    config.validate()?;
    check_neighbors(matrix, neighbors)?;
    check_matrix_targets(matrix, targets)?;
    let entries = targets
        .iter()
        .map(|&(i, j)| {
            let (value, source) = match estimator(matrix, neighbors, config.window_size, i, j) {
                Some(v) => (v, Source::Model),
                None => fallback(matrix, i, j)?,
            };
            Ok(MatrixEstimate {
                region: i,
                year: j,
                value: clamp_rate(value),
                source,
            })
        })
        .collect::<Result<_, CompletionError>>()?;
    Ok(MatrixPrediction { entries, notes: Vec::new() })
}

/// UCF prediction of every masked entry.
pub fn ucf_predict(matrix: &DiseaseMatrix, neighbors: &NeighborOrder, config: &CompleterConfig) -> Result<MatrixPrediction, CompletionError> {
    ucf_predict_at(matrix, neighbors, config, &unobserved(matrix))
}

pub fn ucf_predict_at(
    matrix: &DiseaseMatrix,
    neighbors: &NeighborOrder,
    config: &CompleterConfig,
    targets: &[(usize, usize)],
) -> Result<MatrixPrediction, CompletionError> {
    predict_with(ucf_estimate, matrix, neighbors, config, targets)
}

/// ICF prediction of every masked entry. The window regions are the target
/// region and its `w - 1` nearest neighbors.
pub fn icf_predict(matrix: &DiseaseMatrix, neighbors: &NeighborOrder, config: &CompleterConfig) -> Result<MatrixPrediction, CompletionError> {
    icf_predict_at(matrix, neighbors, config, &unobserved(matrix))
}

pub fn icf_predict_at(
    matrix: &DiseaseMatrix,
    neighbors: &NeighborOrder,
    config: &CompleterConfig,
    targets: &[(usize, usize)],
) -> Result<MatrixPrediction, CompletionError> {
    predict_with(icf_estimate, matrix, neighbors, config, targets)
}
