//! Offline choice of which regions to survey (TS-A), made once from
//! historical data before any new data arrives.
//!
//! All strategies score every region and keep the top `round(p * N)`, with
//! ties going to the lower region index.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{Algorithm, Completer, CompleterConfig, CompletionInput, StandardCompleter};
use crate::data::{Cell, HealthCube, ObservationMask};
use crate::exec::Execution;
use crate::geo::NeighborOrder;

/// Neighborhood half-width for RMDC: each region is compared with its `2m`
/// nearest neighbors.
pub const DEFAULT_HALF_WIDTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("proportion must be in (0, 1], got {0}")]
    InvalidProportion(f64),
    #[error("every dispersion term had a zero neighborhood mean")]
    SelectionDegenerate,
    #[error("committee needs at least 2 members, got {0}")]
    CommitteeTooSmall(usize),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Random,
    Rmdc,
    Qcb,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 3] = [SelectionMethod::Random, SelectionMethod::Rmdc, SelectionMethod::Qcb];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::Random => "random",
            SelectionMethod::Rmdc => "rmdc",
            SelectionMethod::Qcb => "qcb",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SelectionMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown selection method `{s}` (expected random, rmdc or qcb)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    /// Selected region indices, ascending.
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
    pub method: SelectionMethod,
    pub proportion: f64,
    pub flags: Vec<String>,
}

impl SelectionResult {
    pub fn is_selected(&self, region: usize) -> bool {
        self.selected.binary_search(&region).is_ok()
    }

    /// Same scores, different proportion.
    pub fn resized(&self, proportion: f64) -> Result<SelectionResult, SelectionError> {
        if self.method == SelectionMethod::Random {
            return Err(SelectionError::InvalidInput("random selections are not nested; redraw instead".into()));
        }
        let k = selection_size(self.scores.len(), proportion)?;
        Ok(SelectionResult {
            selected: top_k(&self.scores, k),
            scores: self.scores.clone(),
            method: self.method,
            proportion,
            flags: self.flags.clone(),
        })
    }
}

/// `round(p * n)` clamped to `[1, n]`.
pub fn selection_size(n: usize, proportion: f64) -> Result<usize, SelectionError> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(SelectionError::InvalidProportion(proportion));
    }
    if n == 0 {
        return Err(SelectionError::InvalidInput("no regions".into()));
    }
    Ok(((proportion * n as f64).round() as usize).clamp(1, n))
}

/// Indices of the `k` largest scores, lower index first among ties, returned
/// ascending.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = order[..k.min(order.len())].to_vec();
    picked.sort_unstable();
    picked
}

fn finish(scores: Vec<f64>, method: SelectionMethod, proportion: f64, flags: Vec<String>) -> Result<SelectionResult, SelectionError> {
    let k = selection_size(scores.len(), proportion)?;
    Ok(SelectionResult {
        selected: top_k(&scores, k),
        scores,
        method,
        proportion,
        flags,
    })
}

/// Uniform sample without replacement.
pub fn select_random(n: usize, proportion: f64, seed: u64) -> Result<SelectionResult, SelectionError> {
    let k = selection_size(n, proportion)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = sample(&mut rng, n, k).into_vec();
    selected.sort_unstable();
    let mut scores = vec![0.0; n];
    for &i in &selected {
        scores[i] = 1.0;
    }
    Ok(SelectionResult {
        selected,
        scores,
        method: SelectionMethod::Random,
        proportion,
        flags: Vec::new(),
    })
}

/// `sqrt(sum (v_k - mean)^2) / mean`, or `None` when the mean is zero.
pub fn dispersion_coefficient(values: &[f64]) -> Option<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if mean == 0.0 {
        return None;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some(ss.sqrt() / mean)
}

/// Per-region dispersion scores, plus flags for skipped terms.
///
/// For each disease the latest year observed in every region is used.
pub fn rmdc_scores(
    history: &HealthCube,
    mask: &ObservationMask,
    neighbors: &NeighborOrder,
    half_width: usize,
) -> Result<(Vec<f64>, Vec<String>), SelectionError> {
    let (n, d, t) = history.shape();
    check_common(history, mask, neighbors)?;
    let mut flags = Vec::new();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut usable_diseases = 0;
    let mut zero_means = 0;
    for disease in 0..d {
        let Some(year) = (0..t).rev().find(|&y| mask.observed_count(disease, y) == n) else {
            flags.push(format!("rmdc_no_full_year={}", history.diseases()[disease]));
            continue;
        };
        usable_diseases += 1;
        let v = |r: usize| history.values()[[r, disease, year]];
        for i in 0..n {
            let hood: Vec<f64> = std::iter::once(i).chain(neighbors.nearest(i, 2 * half_width).iter().copied()).map(v).collect();
            match dispersion_coefficient(&hood) {
                Some(dc) => {
                    sums[i] += dc;
                    counts[i] += 1;
                }
                None => zero_means += 1,
            }
        }
    }
    if usable_diseases == 0 {
        return Err(SelectionError::InsufficientHistory("no disease has a year observed in every region".into()));
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(SelectionError::SelectionDegenerate);
    }
    if zero_means > 0 {
        flags.push(format!("rmdc_zero_mean={zero_means}"));
    }
    let scores = sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
    Ok((scores, flags))
}

/// Regions with the largest neighborhood dispersion coefficient.
pub fn select_rmdc(
    history: &HealthCube,
    mask: &ObservationMask,
    neighbors: &NeighborOrder,
    proportion: f64,
    half_width: usize,
) -> Result<SelectionResult, SelectionError> {
    selection_size(history.num_regions(), proportion)?;
    let (scores, flags) = rmdc_scores(history, mask, neighbors, half_width)?;
    finish(scores, SelectionMethod::Rmdc, proportion, flags)
}

fn check_common(history: &HealthCube, mask: &ObservationMask, neighbors: &NeighborOrder) -> Result<(), SelectionError> {
    if mask.shape() != history.shape() {
        return Err(SelectionError::InvalidInput(format!(
            "mask is {:?} but history is {:?}",
            mask.shape(),
            history.shape()
        )));
    }
    if neighbors.len() != history.num_regions() {
        return Err(SelectionError::InvalidInput(format!(
            "neighbor order covers {} regions, history has {}",
            neighbors.len(),
            history.num_regions()
        )));
    }
    Ok(())
}

fn population_variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
}

struct QcbCell {
    variance: Option<f64>,
    failures: Vec<usize>,
}

/// Leave-one-region-out committee disagreement.
///
/// For every region and historical year, that region's observed entries in
/// that year are hidden and each committee member predicts them. The score is
/// the population variance of the members' predictions, averaged over
/// diseases and then over years.
pub fn qcb_scores(
    history: &HealthCube,
    mask: &ObservationMask,
    committee: &[&dyn Completer],
    neighbors: &NeighborOrder,
    exec: Execution,
) -> Result<(Vec<f64>, Vec<String>), SelectionError> {
    if committee.len() < 2 {
        return Err(SelectionError::CommitteeTooSmall(committee.len()));
    }
    check_common(history, mask, neighbors)?;
    let (n, d, t) = history.shape();
    if t < 2 {
        return Err(SelectionError::InsufficientHistory(format!("committee selection needs 2 historical years, got {t}")));
    }
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..t).map(move |y| (i, y))).collect();
    let cells = exec.map(&jobs, |&(i, y)| {
        let targets: Vec<Cell> = (0..d).map(|k| Cell::new(i, k, y)).filter(|c| mask.is_observed(c.region, c.disease, c.year)).collect();
        if targets.is_empty() {
            return QcbCell {
                variance: None,
                failures: Vec::new(),
            };
        }
        let hidden = mask.with_hidden(targets.iter().copied());
        let input = CompletionInput {
            cube: history,
            mask: &hidden,
            neighbors,
        };
        let mut predictions: Vec<Vec<f64>> = vec![Vec::new(); targets.len()];
        let mut failures = Vec::new();
        for (m, member) in committee.iter().enumerate() {
            match member.complete(&input, &targets) {
                Ok(p) => {
                    for (slot, e) in predictions.iter_mut().zip(&p.entries) {
                        slot.push(e.value);
                    }
                }
                Err(_) => failures.push(m),
            }
        }
        let vars: Vec<f64> = predictions.iter().filter(|p| p.len() >= 2).map(|p| population_variance(p)).collect();
        QcbCell {
            variance: (!vars.is_empty()).then(|| vars.iter().sum::<f64>() / vars.len() as f64),
            failures,
        }
    });

    let mut failed: BTreeMap<usize, usize> = BTreeMap::new();
    let mut scores = vec![0.0; n];
    for i in 0..n {
        let per_year = &cells[i * t..(i + 1) * t];
        let vars: Vec<f64> = per_year.iter().filter_map(|c| c.variance).collect();
        if !vars.is_empty() {
            scores[i] = vars.iter().sum::<f64>() / vars.len() as f64;
        }
        for c in per_year {
            for &m in &c.failures {
                *failed.entry(m).or_default() += 1;
            }
        }
    }
    let flags = failed
        .into_iter()
        .map(|(m, count)| format!("qcb_member_failed={}:{count}", committee[m].name()))
        .collect();
    Ok((scores, flags))
}

/// Regions where the committee disagrees most.
pub fn select_qcb(
    history: &HealthCube,
    mask: &ObservationMask,
    committee: &[&dyn Completer],
    neighbors: &NeighborOrder,
    proportion: f64,
    exec: Execution,
) -> Result<SelectionResult, SelectionError> {
    selection_size(history.num_regions(), proportion)?;
    let (scores, flags) = qcb_scores(history, mask, committee, neighbors, exec)?;
    finish(scores, SelectionMethod::Qcb, proportion, flags)
}

/// Committee of built-in completers sharing `config`, seeded with `seed`.
pub fn standard_committee(algorithms: &[Algorithm], config: &CompleterConfig, seed: u64) -> Vec<StandardCompleter> {
    algorithms
        .iter()
        .map(|&a| StandardCompleter::new(a, config.with_seed(seed)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::{CompletionError, PredictedEntry, Prediction, Source};
    use crate::geo::{nearest_neighbors, DistanceMatrix};
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    fn line_neighbors(n: usize) -> NeighborOrder {
        nearest_neighbors(&DistanceMatrix::from_raw(Array2::from_shape_fn((n, n), |(i, j)| (i as f64 - j as f64).abs())).unwrap())
    }

    fn cube(values: Array3<f64>) -> (HealthCube, ObservationMask) {
        let (_, d, t) = values.dim();
        let c = HealthCube::new(values, (0..d).map(|k| format!("D{k}")).collect(), (2000..2000 + t as i32).collect()).unwrap();
        let m = ObservationMask::full(c.shape());
        (c, m)
    }

    struct Constant(f64);

    impl Completer for Constant {
        fn name(&self) -> &str {
            "constant"
        }

        fn complete(&self, _: &CompletionInput<'_>, targets: &[Cell]) -> Result<Prediction, CompletionError> {
            let mut cells = targets.to_vec();
            cells.sort();
            Ok(Prediction {
                entries: cells
                    .into_iter()
                    .map(|cell| PredictedEntry {
                        cell,
                        value: self.0,
                        source: Source::Model,
                    })
                    .collect(),
                notes: Vec::new(),
            })
        }
    }

    struct Failing;

    impl Completer for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn complete(&self, _: &CompletionInput<'_>, _: &[Cell]) -> Result<Prediction, CompletionError> {
            Err(CompletionError::NoObservedData)
        }
    }

    #[test]
    fn size_rounds_and_clamps() {
        assert_eq!(selection_size(10, 0.25).unwrap(), 3);
        assert_eq!(selection_size(10, 0.01).unwrap(), 1);
        assert_eq!(selection_size(10, 1.0).unwrap(), 10);
        assert!(matches!(selection_size(10, 0.0), Err(SelectionError::InvalidProportion(_))));
        assert!(matches!(selection_size(10, 1.5), Err(SelectionError::InvalidProportion(_))));
    }

    #[test]
    fn random_full_and_deterministic() {
        assert_eq!(select_random(7, 1.0, 3).unwrap().selected, (0..7).collect::<Vec<_>>());
        assert_eq!(select_random(50, 0.3, 9).unwrap(), select_random(50, 0.3, 9).unwrap());
        assert!(select_random(5, -0.1, 0).is_err());
    }

    #[test]
    fn random_is_uniform() {
        let mut hits = [0u32; 10];
        let draws = 10_000;
        for seed in 0..draws {
            for i in select_random(10, 0.1, seed).unwrap().selected {
                hits[i] += 1;
            }
        }
        let mean = draws as f64 * 0.1;
        let sd = (draws as f64 * 0.1 * 0.9).sqrt();
        for h in hits {
            assert!((h as f64 - mean).abs() <= 3.0 * sd, "{hits:?}");
        }
    }

    #[test]
    fn dispersion_coefficient_example() {
        let dc = dispersion_coefficient(&[1.0, 1.0, 1.0, 1.0, 3.0]).unwrap();
        assert!((dc - 3.2f64.sqrt() / 1.4).abs() < 1e-15);
        assert!((dc - 1.27775).abs() < 1e-5);
        assert_eq!(dispersion_coefficient(&[0.0, 0.0]), None);
    }

    #[test]
    fn rmdc_identical_values_pick_lowest_indices() {
        let (c, m) = cube(Array3::from_elem((10, 2, 3), 0.05));
        let r = select_rmdc(&c, &m, &line_neighbors(10), 0.3, 2).unwrap();
        assert!(r.scores.iter().all(|&s| s == 0.0));
        assert_eq!(r.selected, vec![0, 1, 2]);
    }

    #[test]
    fn rmdc_flags_zero_means_and_degenerate() {
        let (c, m) = cube(Array3::zeros((6, 1, 2)));
        assert_eq!(select_rmdc(&c, &m, &line_neighbors(6), 0.5, 1).unwrap_err(), SelectionError::SelectionDegenerate);

        let mut v = Array3::from_elem((6, 2, 2), 0.1);
        v.slice_mut(ndarray::s![.., 1, ..]).fill(0.0);
        v[[3, 0, 1]] = 0.4;
        let (c, m) = cube(v);
        let r = select_rmdc(&c, &m, &line_neighbors(6), 0.2, 1).unwrap();
        assert!(r.flags.contains(&"rmdc_zero_mean=6".to_string()), "{:?}", r.flags);
        assert_eq!(r.selected, vec![3]);
    }

    #[test]
    fn rmdc_uses_latest_complete_year() {
        let mut v = Array3::from_elem((6, 1, 3), 0.1);
        v[[5, 0, 1]] = 0.9; // latest complete year
        v[[0, 0, 2]] = 0.9; // year 2 has a hole, ignored
        let (c, m) = cube(v);
        let m = m.with_hidden([Cell::new(2, 0, 2)]);
        let r = select_rmdc(&c, &m, &line_neighbors(6), 0.2, 1).unwrap();
        // Regions 4 and 5 share the neighborhood {3, 4, 5}; the tie goes to 4.
        assert_eq!(r.scores[4], r.scores[5]);
        assert_eq!(r.selected, vec![4]);
    }

    #[test]
    fn qcb_constant_committee_variance() {
        let (c, m) = cube(Array3::from_elem((5, 2, 3), 0.1));
        let (a, b) = (Constant(0.2), Constant(0.4));
        let committee: Vec<&dyn Completer> = vec![&a, &b];
        let r = select_qcb(&c, &m, &committee, &line_neighbors(5), 0.4, Execution::Sequential).unwrap();
        assert!(r.scores.iter().all(|&s| (s - 0.01).abs() < 1e-15), "{:?}", r.scores);
        assert_eq!(r.selected, vec![0, 1]);
    }

    #[test]
    fn qcb_identical_members_score_zero_and_failures_are_flagged() {
        let (c, m) = cube(Array3::from_shape_fn((6, 2, 4), |(r, d, t)| 0.05 + 0.01 * ((r * 7 + d * 3 + t) % 5) as f64));
        let config = CompleterConfig::default();
        let (u1, u2) = (StandardCompleter::new(Algorithm::Ucf, config.clone()), StandardCompleter::new(Algorithm::Ucf, config));
        let committee: Vec<&dyn Completer> = vec![&u1, &u2, &Failing];
        let r = select_qcb(&c, &m, &committee, &line_neighbors(6), 0.5, Execution::Sequential).unwrap();
        assert!(r.scores.iter().all(|&s| s == 0.0));
        assert_eq!(r.selected, vec![0, 1, 2]);
        assert_eq!(r.flags, vec!["qcb_member_failed=failing:24".to_string()]);
        let one: Vec<&dyn Completer> = vec![&u1];
        assert_eq!(
            select_qcb(&c, &m, &one, &line_neighbors(6), 0.5, Execution::Sequential).unwrap_err(),
            SelectionError::CommitteeTooSmall(1)
        );
    }

    #[test]
    fn qcb_parallel_matches_sequential() {
        let (c, m) = cube(Array3::from_shape_fn((8, 2, 5), |(r, d, t)| 0.05 + 0.003 * ((r * r + 3 * d + 2 * t) % 11) as f64));
        let committee = standard_committee(&[Algorithm::Ucf, Algorithm::Icf, Algorithm::Nmf], &CompleterConfig { nmf_rank: 2, ..Default::default() }, 1);
        let refs: Vec<&dyn Completer> = committee.iter().map(|c| c as &dyn Completer).collect();
        let nb = line_neighbors(8);
        let seq = qcb_scores(&c, &m, &refs, &nb, Execution::Sequential).unwrap();
        let par = qcb_scores(&c, &m, &refs, &nb, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert!(seq.0.iter().any(|&s| s > 0.0));
    }

    proptest! {
        #[test]
        fn top_k_nests(scores in proptest::collection::vec(0.0f64..1.0, 1..40), p1 in 0.01f64..1.0, p2 in 0.01f64..1.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let n = scores.len();
            let small = top_k(&scores, selection_size(n, lo).unwrap());
            let large = top_k(&scores, selection_size(n, hi).unwrap());
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }

        #[test]
        fn adding_a_constant_lowers_dispersion(v in proptest::collection::vec(0.01f64..1.0, 3..11), c in 0.01f64..1.0) {
            let before = dispersion_coefficient(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let after = dispersion_coefficient(&shifted).unwrap();
            prop_assert!(after < before || before == 0.0);
        }
    }
}
