//! Spatial and temporal correlation analysis over a single disease matrix.
//!
//! Regions with any unobserved year are dropped before analysis (listwise
//! deletion) and reported as excluded.

mod indicators;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DiseaseMatrix;
use crate::geo::PairGroupSet;

pub use indicators::{arithmetic_difference, cddtw, euclidean_difference, pearson_distance, Indicator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error("series lengths differ or are empty ({left} vs {right})")]
    PairShape { left: usize, right: usize },
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("constant series has no defined correlation")]
    DegenerateSeries,
    #[error("nothing to analyze: {0}")]
    EmptyAnalysis(String),
}

/// How the two compared vectors of a distance group are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairVectors {
    /// Each pair contributes the two regions' year series; the group value is
    /// the mean of the per-pair indicators. Invariant under region
    /// relabeling.
    #[default]
    YearSeries,
    /// For each year, the group's first regions and second regions form the
    /// two vectors (one element per pair); the group value is the mean over
    /// years. CDDTW and PD depend on pair order and orientation here.
    AcrossPairs,
}

/// Indicator summary of one distance group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    /// Upper edge of the group's distance bin (km).
    pub upper_km: f64,
    /// Number of retained region pairs in the group.
    pub pair_count: usize,
    /// Mean indicator value per [`Indicator::ALL`] entry; `None` when no
    /// contributing vector pair was defined for it.
    pub values: [Option<f64>; 4],
    /// Number of contributions behind each value.
    pub contributions: [usize; 4],
}

impl GroupSummary {
    pub fn value(&self, ind: Indicator) -> Option<f64> {
        self.values[indicator_slot(ind)]
    }

    pub fn is_empty(&self) -> bool {
        self.pair_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialCorrelationProfile {
    pub groups: Vec<GroupSummary>,
    /// Regions dropped for having unobserved years.
    pub excluded_regions: Vec<usize>,
    pub retained_pairs: usize,
    pub mode: PairVectors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemporalCorrelationGrid {
    pub years: usize,
    /// One years x years matrix per [`Indicator::ALL`] entry. `None` marks an
    /// undefined PD (constant year vector).
    pub grids: [Array2<Option<f64>>; 4],
    pub excluded_regions: Vec<usize>,
}

impl TemporalCorrelationGrid {
    pub fn grid(&self, ind: Indicator) -> &Array2<Option<f64>> {
        &self.grids[indicator_slot(ind)]
    }
}

fn indicator_slot(ind: Indicator) -> usize {
    Indicator::ALL.iter().position(|&i| i == ind).unwrap()
}

fn fully_observed(matrix: &DiseaseMatrix) -> (Vec<bool>, Vec<usize>) {
    let keep: Vec<bool> = (0..matrix.num_regions())
        .map(|i| matrix.mask().row(i).iter().all(|&m| m))
        .collect();
    let excluded = keep.iter().enumerate().filter(|(_, &k)| !k).map(|(i, _)| i).collect();
    (keep, excluded)
}

/// Order-independent mean: values are sorted before summation so the result
/// does not depend on pair enumeration order.
fn stable_mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn spatial_profile(matrix: &DiseaseMatrix, groups: &PairGroupSet) -> Result<SpatialCorrelationProfile, CorrelationError> {
    spatial_profile_with(matrix, groups, PairVectors::YearSeries)
}

pub fn spatial_profile_with(
    matrix: &DiseaseMatrix,
    groups: &PairGroupSet,
    mode: PairVectors,
) -> Result<SpatialCorrelationProfile, CorrelationError> {
    let (keep, excluded_regions) = fully_observed(matrix);
    let values = matrix.values();
    let series = |i: usize| values.row(i).to_vec();

    let mut summaries = Vec::with_capacity(groups.num_groups());
    let mut retained_pairs = 0;
    for (g, pairs) in groups.groups().iter().enumerate() {
        let pairs: Vec<(usize, usize)> = pairs.iter().copied().filter(|&(i, j)| keep[i] && keep[j]).collect();
        retained_pairs += pairs.len();
        let mut contributions: [Vec<f64>; 4] = Default::default();
        let mut push = |a: &[f64], b: &[f64]| {
            for (slot, ind) in Indicator::ALL.iter().enumerate() {
                match ind.evaluate(a, b) {
                    Ok(v) => contributions[slot].push(v),
                    Err(CorrelationError::DegenerateSeries) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        };
        match mode {
            PairVectors::YearSeries => {
                for &(i, j) in &pairs {
                    push(&series(i), &series(j))?;
                }
            }
            PairVectors::AcrossPairs => {
                if !pairs.is_empty() {
                    for t in 0..matrix.num_years() {
                        let a: Vec<f64> = pairs.iter().map(|&(i, _)| values[[i, t]]).collect();
                        let b: Vec<f64> = pairs.iter().map(|&(_, j)| values[[j, t]]).collect();
                        push(&a, &b)?;
                    }
                }
            }
        }
        let counts = [0, 1, 2, 3].map(|s| contributions[s].len());
        let means = [0, 1, 2, 3].map(|s| stable_mean(&mut contributions[s]));
        summaries.push(GroupSummary {
            upper_km: groups.upper_km(g),
            pair_count: pairs.len(),
            values: means,
            contributions: counts,
        });
    }
    if retained_pairs == 0 {
        return Err(CorrelationError::EmptyAnalysis("every distance group is empty".into()));
    }
    Ok(SpatialCorrelationProfile {
        groups: summaries,
        excluded_regions,
        retained_pairs,
        mode,
    })
}

/// Indicator values between every pair of year columns, computed on the
/// region-indexed vectors of the retained regions.
pub fn temporal_grid(matrix: &DiseaseMatrix) -> Result<TemporalCorrelationGrid, CorrelationError> {
    let years = matrix.num_years();
    if years < 2 {
        return Err(CorrelationError::EmptyAnalysis(format!("need at least 2 years, got {years}")));
    }
    let (keep, excluded_regions) = fully_observed(matrix);
    let columns: Vec<Vec<f64>> = (0..years)
        .map(|t| {
            matrix
                .values()
                .column(t)
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .collect()
        })
        .collect();
    if columns[0].is_empty() {
        return Err(CorrelationError::EmptyAnalysis("no region is observed in every year".into()));
    }
    let mut grids: [Array2<Option<f64>>; 4] = Default::default();
    for (slot, ind) in Indicator::ALL.iter().enumerate() {
        let mut grid = Array2::from_elem((years, years), None);
        for a in 0..years {
            grid[[a, a]] = match ind {
                Indicator::Pd if indicators::is_constant(&columns[a]) => None,
                _ => Some(0.0),
            };
            for b in 0..a {
                let v = match ind.evaluate(&columns[a], &columns[b]) {
                    Ok(v) => Some(v),
                    Err(CorrelationError::DegenerateSeries) => None,
                    Err(e) => return Err(e),
                };
                grid[[a, b]] = v;
                grid[[b, a]] = v;
            }
        }
        grids[slot] = grid;
    }
    Ok(TemporalCorrelationGrid {
        years,
        grids,
        excluded_regions,
    })
}

/// Min-max rescale to [0, 1] for plot output. Undefined entries stay `None`;
/// a constant input maps to zeros.
pub fn min_max_normalize(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let defined = values.iter().flatten();
    let lo = defined.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = defined.copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| {
            v.map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
        })
        .collect()
}
