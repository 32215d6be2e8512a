//! Missing-entry completion.
//!
//! Five recovery algorithms share one contract: fit on the observed entries
//! and predict a given set of masked entries. UCF, ICF, their blend and NMF
//! work on one [`DiseaseMatrix`] at a time; HOTD works on the whole cube.
//! All predictions are clamped to `[0, 1]`.

mod blend;
mod cf;
mod nmf;
pub mod tucker;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{slice_disease_index, Cell, DataError, DiseaseMatrix, HealthCube, ObservationMask};
use crate::geo::NeighborOrder;

pub use blend::{blend_predict, blend_predict_at, fit_blend_on_history, fit_blend_weights, BlendWeights, MIN_BLEND_FIT};
pub use cf::{icf_predict, icf_predict_at, ucf_predict, ucf_predict_at, SIMILARITY_CAP};
pub use nmf::{nmf_fit, nmf_predict, nmf_predict_at, NmfFit};
pub use tucker::{hotd_predict, hotd_predict_at, tucker_fit, TuckerFit, TuckerModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompletionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("target {0:?} is observed or out of range")]
    InvalidTarget(Cell),
    #[error("target {0:?} listed twice")]
    DuplicateTarget(Cell),
    #[error("no observed entry to fall back on")]
    NoObservedData,
    #[error("loss diverged after repeated step halving")]
    Divergence,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Tuning knobs for all completers. Every field is echoed into experiment
/// reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompleterConfig {
    /// Odd CF window size (temporal columns, and target row plus `w - 1`
    /// nearest regions).
    pub window_size: usize,
    pub nmf_rank: usize,
    pub nmf_iters: usize,
    pub nmf_tol: f64,
    /// `None` derives `(min(8, N), min(6, D), min(4, T))` from the data.
    pub tucker_ranks: Option<[usize; 3]>,
    pub tucker_lambda: f64,
    pub tucker_iters: usize,
    /// Fraction of observed history hidden when fitting blend weights.
    pub blend_holdout: f64,
    pub rng_seed: u64,
}

impl Default for CompleterConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            nmf_rank: 4,
            nmf_iters: 500,
            nmf_tol: 1e-6,
            tucker_ranks: None,
            tucker_lambda: 1e-3,
            tucker_iters: 300,
            blend_holdout: 0.2,
            rng_seed: 0,
        }
    }
}

impl CompleterConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CompletionError> {
        let bad = |m: String| Err(CompletionError::InvalidConfig(m));
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return bad(format!("window size must be odd and >= 3, got {}", self.window_size));
        }
        if self.nmf_rank == 0 {
            return bad("nmf rank must be positive".into());
        }
        if !(self.nmf_tol >= 0.0) {
            return bad(format!("nmf tolerance must be >= 0, got {}", self.nmf_tol));
        }
        if let Some(r) = self.tucker_ranks {
            if r.contains(&0) {
                return bad(format!("tucker ranks must be positive, got {r:?}"));
            }
        }
        if !(self.tucker_lambda >= 0.0 && self.tucker_lambda.is_finite()) {
            return bad(format!("tucker lambda must be >= 0, got {}", self.tucker_lambda));
        }
        if !(self.blend_holdout > 0.0 && self.blend_holdout < 1.0) {
            return bad(format!("blend holdout must be in (0, 1), got {}", self.blend_holdout));
        }
        Ok(())
    }

    /// Tucker ranks for a cube of the given shape.
    pub fn tucker_ranks_for(&self, (n, d, t): (usize, usize, usize)) -> [usize; 3] {
        self.tucker_ranks.unwrap_or([8.min(n), 6.min(d), 4.min(t)])
    }
}

/// Where a predicted value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Model,
    /// The entry had no usable neighbors; the observed mean of its row was
    /// used.
    RowMean,
    ColumnMean,
    GlobalMean,
}

impl Source {
    pub fn is_fallback(self) -> bool {
        self != Source::Model
    }
}

/// Non-fatal conditions met while completing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Note {
    BlendWeights { icf: f64, ucf: f64 },
    BlendEqualWeights,
    NmfNotConverged { iterations: usize },
    NmfRankClamped { rank: usize },
    HotdIterationCap { iterations: usize },
}

impl Note {
    fn tag(&self) -> Option<&'static str> {
        match self {
            Note::BlendWeights { .. } => None,
            Note::BlendEqualWeights => Some("blend_equal_weights"),
            Note::NmfNotConverged { .. } => Some("nmf_not_converged"),
            Note::NmfRankClamped { .. } => Some("nmf_rank_clamped"),
            Note::HotdIterationCap { .. } => Some("hotd_iteration_cap"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixEstimate {
    pub region: usize,
    pub year: usize,
    pub value: f64,
    pub source: Source,
}

/// Predictions for masked entries of one [`DiseaseMatrix`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixPrediction {
    pub entries: Vec<MatrixEstimate>,
    pub notes: Vec<Note>,
}

impl MatrixPrediction {
    pub fn value_at(&self, region: usize, year: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.region == region && e.year == year)
            .map(|e| e.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedEntry {
    pub cell: Cell,
    pub value: f64,
    pub source: Source,
}

/// Predictions for masked cube entries, sorted by (region, disease, year).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prediction {
    pub entries: Vec<PredictedEntry>,
    pub notes: Vec<Note>,
}

impl Prediction {
    pub fn value_of(&self, cell: Cell) -> Option<f64> {
        self.entries
            .binary_search_by(|e| e.cell.cmp(&cell))
            .ok()
            .map(|i| self.entries[i].value)
    }

    pub fn fallback_count(&self) -> usize {
        self.entries.iter().filter(|e| e.source.is_fallback()).count()
    }

    /// Short, deterministic flag strings for reports.
    pub fn flag_summary(&self) -> Vec<String> {
        let mut tags: BTreeMap<&'static str, usize> = BTreeMap::new();
        for n in &self.notes {
            if let Some(t) = n.tag() {
                *tags.entry(t).or_default() += 1;
            }
        }
        let mut out = Vec::new();
        let fallbacks = self.fallback_count();
        if fallbacks > 0 {
            out.push(format!("fallback={fallbacks}"));
        }
        out.extend(tags.into_iter().map(|(t, n)| format!("{t}={n}")));
        out
    }
}

/// Borrowed inputs shared by every completer call.
#[derive(Debug, Clone, Copy)]
pub struct CompletionInput<'a> {
    pub cube: &'a HealthCube,
    pub mask: &'a ObservationMask,
    pub neighbors: &'a NeighborOrder,
}

/// Fit on the observed entries of `input`, predict `targets`.
///
/// Every target must be unobserved in `input.mask`. The returned prediction
/// holds exactly the targets, sorted.
pub trait Completer: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, input: &CompletionInput<'_>, targets: &[Cell]) -> Result<Prediction, CompletionError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ucf,
    Icf,
    Blend,
    Nmf,
    Hotd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Ucf, Algorithm::Icf, Algorithm::Blend, Algorithm::Nmf, Algorithm::Hotd];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ucf => "ucf",
            Algorithm::Icf => "icf",
            Algorithm::Blend => "blend",
            Algorithm::Nmf => "nmf",
            Algorithm::Hotd => "hotd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected ucf, icf, blend, nmf or hotd)"))
    }
}

/// One of the five built-in algorithms with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardCompleter {
    pub algorithm: Algorithm,
    pub config: CompleterConfig,
}

impl StandardCompleter {
    pub fn new(algorithm: Algorithm, config: CompleterConfig) -> Self {
        Self { algorithm, config }
    }
}

impl Completer for StandardCompleter {
    fn name(&self) -> &str {
        self.algorithm.as_str()
    }

    fn complete(&self, input: &CompletionInput<'_>, targets: &[Cell]) -> Result<Prediction, CompletionError> {
        self.config.validate()?;
        let targets = check_targets(input, targets)?;
        if self.algorithm == Algorithm::Hotd {
            return hotd_predict_at(input.cube, input.mask, &self.config, &targets);
        }

        let mut by_disease: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for c in &targets {
            by_disease.entry(c.disease).or_default().push((c.region, c.year));
        }
        let first_target_year = targets.iter().map(|c| c.year).min().unwrap_or(0);

        let mut out = Prediction::default();
        for (disease, cells) in by_disease {
            let matrix = slice_disease_index(input.cube, input.mask, disease)?;
            let part = self.complete_matrix(&matrix, input.neighbors, first_target_year, &cells, &mut out.notes)?;
            out.entries.extend(part.entries.into_iter().map(|e| PredictedEntry {
                cell: Cell::new(e.region, disease, e.year),
                value: e.value,
                source: e.source,
            }));
            out.notes.extend(part.notes);
        }
        out.entries.sort_by(|a, b| a.cell.cmp(&b.cell));
        Ok(out)
    }
}

impl StandardCompleter {
    fn complete_matrix(
        &self,
        matrix: &DiseaseMatrix,
        neighbors: &NeighborOrder,
        first_target_year: usize,
        cells: &[(usize, usize)],
        notes: &mut Vec<Note>,
    ) -> Result<MatrixPrediction, CompletionError> {
        match self.algorithm {
            Algorithm::Ucf => ucf_predict_at(matrix, neighbors, &self.config, cells),
            Algorithm::Icf => icf_predict_at(matrix, neighbors, &self.config, cells),
            Algorithm::Blend => {
                let history = matrix.leading_years(first_target_year);
                blend_predict_at(matrix, &history, neighbors, &self.config, cells)
            }
            Algorithm::Nmf => {
                let cap = matrix.num_regions().min(matrix.num_years()).saturating_sub(1).max(1);
                let mut config = self.config.clone();
                if config.nmf_rank > cap {
                    config.nmf_rank = cap;
                    notes.push(Note::NmfRankClamped { rank: cap });
                }
                nmf_predict_at(matrix, &config, cells)
            }
            Algorithm::Hotd => unreachable!("handled at cube level"),
        }
    }
}

/// Sorted, de-duplicated, bounds- and mask-checked copy of `targets`.
pub(crate) fn check_targets(input: &CompletionInput<'_>, targets: &[Cell]) -> Result<Vec<Cell>, CompletionError> {
    if input.mask.shape() != input.cube.shape() {
        return Err(DataError::ShapeMismatch(format!(
            "mask is {:?} but cube is {:?}",
            input.mask.shape(),
            input.cube.shape()
        ))
        .into());
    }
    if input.neighbors.len() != input.cube.num_regions() {
        return Err(CompletionError::InvalidInput(format!(
            "neighbor order covers {} regions, cube has {}",
            input.neighbors.len(),
            input.cube.num_regions()
        )));
    }
    check_cube_targets(input.cube, input.mask, targets)
}

/// [`check_targets`] without the neighbor order.
pub(crate) fn check_cube_targets(cube: &HealthCube, mask: &ObservationMask, targets: &[Cell]) -> Result<Vec<Cell>, CompletionError> {
    if mask.shape() != cube.shape() {
        return Err(DataError::ShapeMismatch(format!("mask is {:?} but cube is {:?}", mask.shape(), cube.shape())).into());
    }
    let (n, d, t) = cube.shape();
    let mut sorted = targets.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(CompletionError::DuplicateTarget(w[0]));
        }
    }
    for &c in &sorted {
        if c.region >= n || c.disease >= d || c.year >= t || mask.is_observed(c.region, c.disease, c.year) {
            return Err(CompletionError::InvalidTarget(c));
        }
    }
    Ok(sorted)
}

/// Checks matrix-level targets and returns them in order.
pub(crate) fn check_matrix_targets(matrix: &DiseaseMatrix, targets: &[(usize, usize)]) -> Result<(), CompletionError> {
    let (n, m) = (matrix.num_regions(), matrix.num_years());
    for &(i, j) in targets {
        if i >= n || j >= m || matrix.is_observed(i, j) {
            return Err(CompletionError::InvalidTarget(Cell::new(i, 0, j)));
        }
    }
    Ok(())
}

pub(crate) fn unobserved(matrix: &DiseaseMatrix) -> Vec<(usize, usize)> {
    matrix
        .mask()
        .indexed_iter()
        .filter(|(_, &m)| !m)
        .map(|(ix, _)| ix)
        .collect()
}

/// Row mean, else column mean, else global mean of observed entries.
pub(crate) fn fallback(matrix: &DiseaseMatrix, region: usize, year: usize) -> Result<(f64, Source), CompletionError> {
    if let Some(v) = matrix.row_mean(region) {
        return Ok((v, Source::RowMean));
    }
    if let Some(v) = matrix.column_mean(year) {
        return Ok((v, Source::ColumnMean));
    }
    matrix
        .observed_mean()
        .map(|v| (v, Source::GlobalMean))
        .ok_or(CompletionError::NoObservedData)
}

pub(crate) fn clamp_rate(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{nearest_neighbors, DistanceMatrix};
    use ndarray::{Array2, Array3};

    fn fixture() -> (HealthCube, ObservationMask, NeighborOrder) {
        let values = Array3::from_shape_fn((6, 2, 5), |(r, d, t)| 0.05 + 0.01 * r as f64 + 0.02 * d as f64 + 0.001 * t as f64);
        let cube = HealthCube::new(values, vec!["A".into(), "B".into()], (2010..2015).collect()).unwrap();
        let mask = ObservationMask::full(cube.shape()).with_hidden([Cell::new(2, 0, 4), Cell::new(3, 1, 4), Cell::new(5, 1, 4)]);
        let d = DistanceMatrix::from_raw(Array2::from_shape_fn((6, 6), |(i, j)| (i as f64 - j as f64).abs())).unwrap();
        (cube, mask, nearest_neighbors(&d))
    }

    #[test]
    fn every_algorithm_predicts_exactly_the_targets() {
        let (cube, mask, neighbors) = fixture();
        let input = CompletionInput {
            cube: &cube,
            mask: &mask,
            neighbors: &neighbors,
        };
        let targets = vec![Cell::new(5, 1, 4), Cell::new(2, 0, 4), Cell::new(3, 1, 4)];
        for algo in Algorithm::ALL {
            let config = CompleterConfig {
                nmf_rank: 2,
                ..Default::default()
            };
            let p = StandardCompleter::new(algo, config).complete(&input, &targets).unwrap();
            let cells: Vec<Cell> = p.entries.iter().map(|e| e.cell).collect();
            assert_eq!(cells, vec![Cell::new(2, 0, 4), Cell::new(3, 1, 4), Cell::new(5, 1, 4)], "{algo}");
            assert!(p.entries.iter().all(|e| (0.0..=1.0).contains(&e.value)), "{algo}");
        }
    }

    #[test]
    fn observed_and_duplicate_targets_are_rejected() {
        let (cube, mask, neighbors) = fixture();
        let input = CompletionInput {
            cube: &cube,
            mask: &mask,
            neighbors: &neighbors,
        };
        let c = StandardCompleter::new(Algorithm::Ucf, CompleterConfig::default());
        assert_eq!(
            c.complete(&input, &[Cell::new(0, 0, 0)]).unwrap_err(),
            CompletionError::InvalidTarget(Cell::new(0, 0, 0))
        );
        assert_eq!(
            c.complete(&input, &[Cell::new(2, 0, 4), Cell::new(2, 0, 4)]).unwrap_err(),
            CompletionError::DuplicateTarget(Cell::new(2, 0, 4))
        );
    }

    #[test]
    fn config_validation() {
        assert!(CompleterConfig::default().validate().is_ok());
        for bad in [
            CompleterConfig {
                window_size: 4,
                ..Default::default()
            },
            CompleterConfig {
                window_size: 1,
                ..Default::default()
            },
            CompleterConfig {
                tucker_lambda: -1.0,
                ..Default::default()
            },
            CompleterConfig {
                tucker_ranks: Some([2, 0, 1]),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(CompleterConfig::default().tucker_ranks_for((100, 5, 10)), [8, 5, 4]);
        assert_eq!(CompleterConfig::default().tucker_ranks_for((3, 18, 2)), [3, 6, 2]);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("svd".parse::<Algorithm>().is_err());
    }
}
