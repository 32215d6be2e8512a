//! Non-negative matrix factorization fitted on observed entries only.
//!
//! Multiplicative updates for the masked objective
//! `1/2 * sum_{observed} (V_ij - (WH)_ij)^2`:
//!
//! ```text
//! W <- W * ((M*V) H^T) / ((M*(WH)) H^T)
//! H <- H * (W^T (M*V)) / (W^T (M*(WH)))
//! ```

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_matrix_targets, clamp_rate, unobserved, CompleterConfig, CompletionError, MatrixEstimate, MatrixPrediction, Note, Source};
use crate::data::DiseaseMatrix;

const DENOM_EPS: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    pub w: Array2<f64>,
    pub h: Array2<f64>,
    /// Objective after initialization and after every iteration.
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl NmfFit {
    pub fn iterations(&self) -> usize {
        self.objective.len() - 1
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.w.dot(&self.h)
    }
}

fn masked_objective(v: &Array2<f64>, m: &Array2<f64>, wh: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    ndarray::Zip::from(v).and(m).and(wh).for_each(|&v, &m, &x| {
        let r = m * (v - x);
        acc += r * r;
    });
    0.5 * acc
}

pub fn nmf_fit(matrix: &DiseaseMatrix, config: &CompleterConfig) -> Result<NmfFit, CompletionError> {
    let (n, m) = (matrix.num_regions(), matrix.num_years());
    let r = config.nmf_rank;
    if r == 0 || r >= n.min(m) {
        return Err(CompletionError::InvalidConfig(format!(
            "nmf rank must satisfy 0 < r < min(n, m) = {}, got {r}",
            n.min(m)
        )));
    }
    let weight = matrix.mask().mapv(|b| if b { 1.0 } else { 0.0 });
    let mut v = Array2::zeros((n, m));
    for ((i, j), &obs) in matrix.mask().indexed_iter() {
        if obs {
            let x = matrix.values()[[i, j]];
            if !(x >= 0.0 && x.is_finite()) {
                return Err(CompletionError::InvalidInput(format!("entry ({i}, {j}) = {x} is not a non-negative number")));
            }
            v[[i, j]] = x;
        }
    }
    let mean = matrix.observed_mean().ok_or(CompletionError::NoObservedData)?;
    let scale = (mean / r as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut w = Array2::from_shape_fn((n, r), |_| scale * rng.gen_range(f64::EPSILON..1.0));
    let mut h = Array2::from_shape_fn((r, m), |_| scale * rng.gen_range(f64::EPSILON..1.0));

    let mv = &v * &weight;
    let mut wh = w.dot(&h);
    let mut objective = vec![masked_objective(&v, &weight, &wh)];
    let mut converged = objective[0] == 0.0;
    while !converged && objective.len() <= config.nmf_iters {
        let mwh = &wh * &weight;
        let num = mv.dot(&h.t());
        let den = mwh.dot(&h.t());
        ndarray::Zip::from(&mut w).and(&num).and(&den).for_each(|w, &a, &b| *w *= a / (b + DENOM_EPS));

        let mwh = w.dot(&h) * &weight;
        let num = w.t().dot(&mv);
        let den = w.t().dot(&mwh);
        ndarray::Zip::from(&mut h).and(&num).and(&den).for_each(|h, &a, &b| *h *= a / (b + DENOM_EPS));

        wh = w.dot(&h);
        let f = masked_objective(&v, &weight, &wh);
        let prev = *objective.last().unwrap();
        objective.push(f);
        if f == 0.0 || (prev - f) / prev < config.nmf_tol {
            converged = true;
        }
    }
    Ok(NmfFit {
        w,
        h,
        objective,
        converged,
    })
}

pub fn nmf_predict(matrix: &DiseaseMatrix, config: &CompleterConfig) -> Result<MatrixPrediction, CompletionError> {
    nmf_predict_at(matrix, config, &unobserved(matrix))
}

pub fn nmf_predict_at(matrix: &DiseaseMatrix, config: &CompleterConfig, targets: &[(usize, usize)]) -> Result<MatrixPrediction, CompletionError> {
    config.validate()?;
    check_matrix_targets(matrix, targets)?;
    let fit = nmf_fit(matrix, config)?;
    let wh = fit.reconstruct();
    let entries = targets
        .iter()
        .map(|&(i, j)| MatrixEstimate {
            region: i,
            year: j,
            value: clamp_rate(wh[[i, j]]),
            source: Source::Model,
        })
        .collect();
    let mut notes = Vec::new();
    if !fit.converged {
        notes.push(Note::NmfNotConverged {
            iterations: fit.iterations(),
        });
    }
    Ok(MatrixPrediction { entries, notes })
}
