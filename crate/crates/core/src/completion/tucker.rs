//! Regularized Tucker decomposition of the region x disease x year cube,
//! fitted on observed entries by gradient descent.
//!
//! Model: `X ~ G x1 A x2 B x3 C`. Loss:
//!
//! ```text
//! L = 1/2 ||M * (X - G x1 A x2 B x3 C)||^2 + lambda/2 (||G||^2 + ||A||^2 + ||B||^2 + ||C||^2)
//! ```
//!
//! Each step tries a Barzilai-Borwein length and backtracks (halving) until
//! the Armijo condition holds, so the loss never increases between accepted
//! iterates.

use ndarray::{Array2, Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_cube_targets, clamp_rate, CompleterConfig, CompletionError, Note, PredictedEntry, Prediction, Source};
use crate::data::{Cell, HealthCube, ObservationMask};

const ARMIJO_C: f64 = 1e-4;
const MAX_NONFINITE_RETRIES: usize = 5;
const MAX_BACKTRACKS: usize = 60;
const REL_TOL: f64 = 1e-13;

/// Axis permutation that brings `mode` to the front.
fn front(mode: usize) -> [usize; 3] {
    match mode {
        0 => [0, 1, 2],
        1 => [1, 0, 2],
        2 => [2, 0, 1],
        _ => panic!("mode {mode} out of range"),
    }
}

/// Mode-`mode` unfolding: rows indexed by that mode.
pub fn unfold(t: &Array3<f64>, mode: usize) -> Array2<f64> {
    let p = t.view().permuted_axes(front(mode));
    let rows = p.shape()[0];
    let cols = p.len() / rows.max(1);
    p.as_standard_layout().into_owned().into_shape_with_order((rows, cols)).unwrap()
}

/// `t x_mode u`: contracts axis `mode` of `t` with the columns of `u`.
pub fn mode_product(t: &Array3<f64>, u: &Array2<f64>, mode: usize) -> Array3<f64> {
    assert_eq!(t.shape()[mode], u.ncols(), "mode-{mode} product dimension mismatch");
    let perm = front(mode);
    let p = t.view().permuted_axes(perm);
    let (a, b) = (p.shape()[1], p.shape()[2]);
    let prod = u.dot(&unfold(t, mode));
    let stacked = prod.into_shape_with_order((u.nrows(), a, b)).unwrap();
    let inverse = match mode {
        0 => [0, 1, 2],
        1 => [1, 0, 2],
        _ => [1, 2, 0],
    };
    stacked.permuted_axes(inverse).as_standard_layout().into_owned()
}

/// Core tensor and the three factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerModel {
    pub core: Array3<f64>,
    /// Region, disease and year factors.
    pub factors: [Array2<f64>; 3],
}

impl TuckerModel {
    /// Entries uniform in `(-0.5, 0.5) / sqrt(rank)`; the core uses the
    /// product of the ranks.
    pub fn random(dims: (usize, usize, usize), ranks: [usize; 3], rng: &mut impl Rng) -> Self {
        let dims = [dims.0, dims.1, dims.2];
        let core_scale = 1.0 / ((ranks[0] * ranks[1] * ranks[2]) as f64).sqrt();
        let core = Array3::from_shape_fn((ranks[0], ranks[1], ranks[2]), |_| core_scale * rng.gen_range(-0.5..0.5));
        let factors = [0, 1, 2].map(|k| {
            let scale = 1.0 / (ranks[k] as f64).sqrt();
            Array2::from_shape_fn((dims[k], ranks[k]), |_| scale * rng.gen_range(-0.5..0.5))
        });
        Self { core, factors }
    }

    pub fn reconstruct(&self) -> Array3<f64> {
        let [a, b, c] = &self.factors;
        let t = mode_product(&self.core, a, 0);
        let t = mode_product(&t, b, 1);
        mode_product(&t, c, 2)
    }

    fn sq_norm(&self) -> f64 {
        self.core.iter().chain(self.factors.iter().flat_map(|f| f.iter())).map(|x| x * x).sum()
    }

    pub fn dot(&self, other: &TuckerModel) -> f64 {
        let core: f64 = Zip::from(&self.core).and(&other.core).fold(0.0, |acc, a, b| acc + a * b);
        core + (0..3)
            .map(|k| Zip::from(&self.factors[k]).and(&other.factors[k]).fold(0.0, |acc, a, b| acc + a * b))
            .sum::<f64>()
    }

    /// `self + alpha * dir`
    pub fn step(&self, alpha: f64, dir: &TuckerModel) -> TuckerModel {
        TuckerModel {
            core: &self.core + &(&dir.core * alpha),
            factors: [0, 1, 2].map(|k| &self.factors[k] + &(&dir.factors[k] * alpha)),
        }
    }

    fn residual(&self, data: &Array3<f64>, weight: &Array3<f64>) -> Array3<f64> {
        let mut e = self.reconstruct();
        Zip::from(&mut e).and(data).and(weight).for_each(|e, &x, &w| *e = w * (*e - x));
        e
    }

    /// Loss on entries where `weight` is 1. `data` must be finite everywhere.
    pub fn loss(&self, data: &Array3<f64>, weight: &Array3<f64>, lambda: f64) -> f64 {
        let e = self.residual(data, weight);
        0.5 * e.iter().map(|x| x * x).sum::<f64>() + 0.5 * lambda * self.sq_norm()
    }

    /// Analytic gradient of [`TuckerModel::loss`], shaped like the model.
    pub fn gradient(&self, data: &Array3<f64>, weight: &Array3<f64>, lambda: f64) -> TuckerModel {
        self.loss_and_gradient(data, weight, lambda).1
    }

    pub fn loss_and_gradient(&self, data: &Array3<f64>, weight: &Array3<f64>, lambda: f64) -> (f64, TuckerModel) {
        let [a, b, c] = &self.factors;
        let e = self.residual(data, weight);
        let loss = 0.5 * e.iter().map(|x| x * x).sum::<f64>() + 0.5 * lambda * self.sq_norm();

        let (at, bt, ct) = (a.t().to_owned(), b.t().to_owned(), c.t().to_owned());
        let e_a = mode_product(&e, &at, 0);
        let f_c = mode_product(&e_a, &bt, 1); // R1 x J x ... contracted on modes 0,1
        let f_b = mode_product(&e_a, &ct, 2);
        let f_a = mode_product(&mode_product(&e, &bt, 1), &ct, 2);
        let mut g_core = mode_product(&f_c, &ct, 2);
        g_core.scaled_add(lambda, &self.core);

        let grad_factor = |f: &Array3<f64>, mode: usize, own: &Array2<f64>| {
            let mut g = unfold(f, mode).dot(&unfold(&self.core, mode).t());
            g.scaled_add(lambda, own);
            g
        };
        let grad = TuckerModel {
            core: g_core,
            factors: [grad_factor(&f_a, 0, a), grad_factor(&f_b, 1, b), grad_factor(&f_c, 2, c)],
        };
        (loss, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFit {
    pub model: TuckerModel,
    /// Loss at initialization and after every accepted step.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

impl TuckerFit {
    pub fn iterations(&self) -> usize {
        self.loss_trace.len() - 1
    }
}

/// Fits the model to the entries of `data` where `mask` is true.
pub fn tucker_fit(
    data: &Array3<f64>,
    mask: &Array3<bool>,
    ranks: [usize; 3],
    lambda: f64,
    max_iters: usize,
    seed: u64,
) -> Result<TuckerFit, CompletionError> {
    let dims = data.dim();
    if mask.dim() != dims {
        return Err(CompletionError::InvalidInput(format!("mask is {:?} but data is {dims:?}", mask.dim())));
    }
    let shape = [dims.0, dims.1, dims.2];
    if (0..3).any(|k| ranks[k] == 0 || ranks[k] > shape[k]) {
        return Err(CompletionError::InvalidConfig(format!("tucker ranks {ranks:?} do not fit cube {dims:?}")));
    }
    let weight = mask.mapv(|b| if b { 1.0 } else { 0.0 });
    let mut clean = Array3::zeros(dims);
    for (ix, &obs) in mask.indexed_iter() {
        if obs {
            let x = data[ix];
            if !x.is_finite() {
                return Err(CompletionError::InvalidInput(format!("observed entry {ix:?} is not finite")));
            }
            clean[ix] = x;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = TuckerModel::random(dims, ranks, &mut rng);
    let (mut loss, mut grad) = model.loss_and_gradient(&clean, &weight, lambda);
    if !loss.is_finite() {
        return Err(CompletionError::Divergence);
    }
    let mut trace = vec![loss];
    let mut step = 1.0 / grad.dot(&grad).sqrt().max(1.0);
    let mut converged = false;

    for _ in 0..max_iters {
        let gnorm2 = grad.dot(&grad);
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut t = step;
        let mut nonfinite = 0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = model.step(-t, &grad);
            let f = trial.loss(&clean, &weight, lambda);
            if !f.is_finite() {
                nonfinite += 1;
                if nonfinite > MAX_NONFINITE_RETRIES {
                    return Err(CompletionError::Divergence);
                }
            } else if f <= loss - ARMIJO_C * t * gnorm2 {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            converged = true;
            break;
        };
        let (next_loss, next_grad) = next.loss_and_gradient(&clean, &weight, lambda);
        let s = next.step(-1.0, &model);
        let y = next_grad.step(-1.0, &grad);
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.dot(&s) / sy } else { 2.0 * t };

        let decrease = (loss - next_loss) / loss.max(f64::MIN_POSITIVE);
        model = next;
        loss = next_loss;
        grad = next_grad;
        trace.push(loss);
        if decrease < REL_TOL {
            converged = true;
            break;
        }
    }
    Ok(TuckerFit {
        model,
        loss_trace: trace,
        converged,
    })
}

/// HOTD prediction of every masked entry of the cube.
pub fn hotd_predict(cube: &HealthCube, mask: &ObservationMask, config: &CompleterConfig) -> Result<Prediction, CompletionError> {
    hotd_predict_at(cube, mask, config, &mask.unobserved_cells())
}

pub fn hotd_predict_at(cube: &HealthCube, mask: &ObservationMask, config: &CompleterConfig, targets: &[Cell]) -> Result<Prediction, CompletionError> {
    config.validate()?;
    let targets = check_cube_targets(cube, mask, targets)?;
    let ranks = config.tucker_ranks_for(cube.shape());
    let fit = tucker_fit(cube.values(), mask.as_array(), ranks, config.tucker_lambda, config.tucker_iters, config.rng_seed)?;
    let full = fit.model.reconstruct();
    let entries = targets
        .into_iter()
        .map(|c| PredictedEntry {
            cell: c,
            value: clamp_rate(full[[c.region, c.disease, c.year]]),
            source: Source::Model,
        })
        .collect();
    let mut notes = Vec::new();
    if !fit.converged {
        notes.push(Note::HotdIterationCap {
            iterations: fit.iterations(),
        });
    }
    Ok(Prediction { entries, notes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_reconstruct(m: &TuckerModel) -> Array3<f64> {
        let [a, b, c] = &m.factors;
        let (r1, r2, r3) = m.core.dim();
        Array3::from_shape_fn((a.nrows(), b.nrows(), c.nrows()), |(i, j, k)| {
            let mut s = 0.0;
            for p in 0..r1 {
                for q in 0..r2 {
                    for r in 0..r3 {
                        s += m.core[[p, q, r]] * a[[i, p]] * b[[j, q]] * c[[k, r]];
                    }
                }
            }
            s
        })
    }

    #[test]
    fn reconstruction_matches_quadruple_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TuckerModel::random((5, 4, 3), [2, 3, 2], &mut rng);
        let fast = m.reconstruct();
        let slow = naive_reconstruct(&m);
        assert!(Zip::from(&fast).and(&slow).all(|a, b| (a - b).abs() < 1e-14));
    }

    #[test]
    fn unfold_orders_rows_by_mode() {
        let t = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| (100 * i + 10 * j + k) as f64);
        for mode in 0..3 {
            let u = unfold(&t, mode);
            assert_eq!(u.nrows(), t.shape()[mode]);
            for (r, row) in u.rows().into_iter().enumerate() {
                for &x in row {
                    let digit = match mode {
                        0 => (x as usize) / 100,
                        1 => (x as usize / 10) % 10,
                        _ => x as usize % 10,
                    };
                    assert_eq!(digit, r);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Array3::from_shape_fn((4, 3, 5), |_| rng.gen_range(0.0..1.0));
        let mask = Array3::from_shape_fn((4, 3, 5), |_| rng.gen_bool(0.7));
        let weight = mask.mapv(|b| if b { 1.0 } else { 0.0 });
        let model = TuckerModel::random((4, 3, 5), [2, 2, 2], &mut rng);
        let g = model.gradient(&data, &weight, 0.1);
        let h = 1e-6;
        for p in 0..2 {
            for q in 0..2 {
                let mut dir = TuckerModel {
                    core: Array3::zeros((2, 2, 2)),
                    factors: model.factors.clone().map(|f| f * 0.0),
                };
                dir.core[[p, q, 1]] = 1.0;
                dir.factors[1][[2, q]] = 1.0;
                let fd = (model.step(h, &dir).loss(&data, &weight, 0.1) - model.step(-h, &dir).loss(&data, &weight, 0.1)) / (2.0 * h);
                let an = g.dot(&dir);
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn loss_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array3::from_shape_fn((6, 4, 5), |_| rng.gen_range(0.0..0.2));
        let mask = Array3::from_shape_fn((6, 4, 5), |_| rng.gen_bool(0.8));
        let fit = tucker_fit(&data, &mask, [3, 2, 2], 1e-3, 200, 4).unwrap();
        assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_cube_predicts_zero() {
        let cube = HealthCube::new(Array3::zeros((5, 3, 4)), vec!["A".into(), "B".into(), "C".into()], (2000..2004).collect()).unwrap();
        let mask = ObservationMask::full(cube.shape()).with_hidden([Cell::new(1, 1, 3), Cell::new(4, 0, 0)]);
        let config = CompleterConfig {
            tucker_ranks: Some([2, 2, 2]),
            ..Default::default()
        };
        let p = hotd_predict(&cube, &mask, &config).unwrap();
        assert_eq!(p.entries.len(), 2);
        assert!(p.entries.iter().all(|e| e.value < 1e-3));

        let fit = tucker_fit(cube.values(), mask.as_array(), [2, 2, 2], 1e-3, 300, 0).unwrap();
        assert!(fit.loss_trace.last().unwrap() < &(fit.loss_trace[0] * 1e-3));
    }

    #[test]
    fn rank_above_dimension_is_rejected() {
        let data = Array3::zeros((3, 2, 2));
        let mask = Array3::from_elem((3, 2, 2), true);
        assert!(matches!(tucker_fit(&data, &mask, [2, 3, 1], 0.0, 10, 0), Err(CompletionError::InvalidConfig(_))));
    }
}
