//! Linear blend of ICF and UCF estimates with least-squares weights.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cf::{icf_estimate, ucf_estimate};
use super::{check_matrix_targets, clamp_rate, fallback, unobserved, CompleterConfig, CompletionError, MatrixEstimate, MatrixPrediction, Note, Source};
use crate::data::DiseaseMatrix;
use crate::geo::NeighborOrder;

/// Fewer held-out entries than this and the weights default to 0.5 / 0.5.
pub const MIN_BLEND_FIT: usize = 10;

/// `prediction = icf * icf_estimate + ucf * ucf_estimate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendWeights {
    pub icf: f64,
    pub ucf: f64,
    /// True when the weights are the 0.5 / 0.5 default rather than fitted.
    pub equal_fallback: bool,
    pub fitted_on: usize,
}

impl BlendWeights {
    fn equal(fitted_on: usize) -> Self {
        Self {
            icf: 0.5,
            ucf: 0.5,
            equal_fallback: true,
            fitted_on,
        }
    }

    pub fn apply(&self, icf: f64, ucf: f64) -> f64 {
        self.icf * icf + self.ucf * ucf
    }
}

/// Ordinary least squares of `truth` on the two estimate columns, no
/// intercept and no sum constraint. When the two columns are collinear the
/// weight is split evenly between them.
pub fn fit_blend_weights(icf: &[f64], ucf: &[f64], truth: &[f64]) -> BlendWeights {
    let n = truth.len();
    assert!(icf.len() == n && ucf.len() == n, "blend fit inputs differ in length");
    if n < MIN_BLEND_FIT {
        return BlendWeights::equal(n);
    }
    let (mut stt, mut sss, mut sts, mut sty, mut ssy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&t, &s), &y) in icf.iter().zip(ucf).zip(truth) {
        stt += t * t;
        sss += s * s;
        sts += t * s;
        sty += t * y;
        ssy += s * y;
    }
    let det = stt * sss - sts * sts;
    if det > 1e-12 * stt * sss {
        return BlendWeights {
            icf: (sty * sss - ssy * sts) / det,
            ucf: (ssy * stt - sty * sts) / det,
            equal_fallback: false,
            fitted_on: n,
        };
    }
    // Collinear: regress on the averaged column and split the coefficient.
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((&t, &s), &y) in icf.iter().zip(ucf).zip(truth) {
        let x = 0.5 * (t + s);
        sxx += x * x;
        sxy += x * y;
    }
    if sxx == 0.0 {
        return BlendWeights::equal(n);
    }
    let c = sxy / sxx;
    BlendWeights {
        icf: c / 2.0,
        ucf: c / 2.0,
        equal_fallback: false,
        fitted_on: n,
    }
}

/// Hides a seeded random fraction of the observed history, estimates the
/// hidden entries with ICF and UCF, and fits the blend weights on the
/// entries both methods could estimate.
pub fn fit_blend_on_history(history: &DiseaseMatrix, neighbors: &NeighborOrder, config: &CompleterConfig) -> BlendWeights {
    if history.num_years() == 0 || neighbors.len() != history.num_regions() {
        return BlendWeights::equal(0);
    }
    let observed = history.observed_entries();
    let k = (config.blend_holdout * observed.len() as f64).round() as usize;
    if k < MIN_BLEND_FIT {
        return BlendWeights::equal(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut held: Vec<(usize, usize)> = sample(&mut rng, observed.len(), k).into_iter().map(|i| observed[i]).collect();
    held.sort_unstable();
    let hidden = history.with_hidden(&held);

    let w = config.window_size;
    let (mut t, mut s, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for &(i, j) in &held {
        if let (Some(ti), Some(si)) = (icf_estimate(&hidden, neighbors, w, i, j), ucf_estimate(&hidden, neighbors, w, i, j)) {
            t.push(ti);
            s.push(si);
            y.push(history.values()[[i, j]]);
        }
    }
    fit_blend_weights(&t, &s, &y)
}

/// Blend prediction of every masked entry of `matrix`, with weights fitted on
/// `history`.
pub fn blend_predict(
    matrix: &DiseaseMatrix,
    history: &DiseaseMatrix,
    neighbors: &NeighborOrder,
    config: &CompleterConfig,
) -> Result<MatrixPrediction, CompletionError> {
    blend_predict_at(matrix, history, neighbors, config, &unobserved(matrix))
}

/// Where only one of ICF and UCF can estimate an entry, that estimate is used
/// alone; where neither can, the row/column/global fallback applies.
pub fn blend_predict_at(
    matrix: &DiseaseMatrix,
    history: &DiseaseMatrix,
    neighbors: &NeighborOrder,
    config: &CompleterConfig,
    targets: &[(usize, usize)],
) -> Result<MatrixPrediction, CompletionError> {
    config.validate()?;
    if neighbors.len() != matrix.num_regions() {
        return Err(CompletionError::InvalidInput(format!(
            "neighbor order covers {} regions, matrix has {}",
            neighbors.len(),
            matrix.num_regions()
        )));
    }
    check_matrix_targets(matrix, targets)?;
    let weights = fit_blend_on_history(history, neighbors, config);
    let w = config.window_size;
    let entries = targets
        .iter()
        .map(|&(i, j)| {
            let icf = icf_estimate(matrix, neighbors, w, i, j);
            let ucf = ucf_estimate(matrix, neighbors, w, i, j);
            let (value, source) = match (icf, ucf) {
                (Some(t), Some(s)) => (weights.apply(t, s), Source::Model),
                (Some(v), None) | (None, Some(v)) => (v, Source::Model),
                (None, None) => fallback(matrix, i, j)?,
            };
            Ok(MatrixEstimate {
                region: i,
                year: j,
                value: clamp_rate(value),
                source,
            })
        })
        .collect::<Result<_, CompletionError>>()?;
    let mut notes = vec![Note::BlendWeights {
        icf: weights.icf,
        ucf: weights.ucf,
    }];
    if weights.equal_fallback {
        notes.push(Note::BlendEqualWeights);
    }
    Ok(MatrixPrediction { entries, notes })
}
