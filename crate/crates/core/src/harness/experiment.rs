//! Proportion sweeps: select surveyed regions from history, hide everything
//! else in the target year, complete, and score against the hidden truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{mae, rmse};
use crate::completion::{Algorithm, Completer, CompleterConfig, CompletionInput, StandardCompleter};
use crate::data::{Cell, HealthCube, ObservationMask, RegionCatalog};
use crate::exec::Execution;
use crate::geo::{nearest_neighbors, DistanceMatrix, NeighborOrder};
use crate::selection::{
    qcb_scores, rmdc_scores, select_random, selection_size, standard_committee, top_k, SelectionError, SelectionMethod, SelectionResult,
    DEFAULT_HALF_WIDTH,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("selection failed: {0}")]
    Selection(#[from] SelectionError),
    #[error("geography: {0}")]
    Geo(String),
}

fn default_proportions() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn default_committee() -> Vec<Algorithm> {
    vec![Algorithm::Ucf, Algorithm::Icf, Algorithm::Nmf]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub target_year: i32,
    pub proportions: Vec<f64>,
    pub selection_methods: Vec<SelectionMethod>,
    pub completers: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub completer_config: CompleterConfig,
    /// Repeat for every year from `target_year` on, folding each year's
    /// completed values into the history of the next.
    pub longitudinal: bool,
    pub rmdc_half_width: usize,
    pub qcb_committee: Vec<Algorithm>,
    /// Scheduling only; never changes the report.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            target_year: 0,
            proportions: default_proportions(),
            selection_methods: vec![SelectionMethod::Random],
            completers: Algorithm::ALL.to_vec(),
            seeds: vec![0],
            completer_config: CompleterConfig::default(),
            longitudinal: false,
            rmdc_half_width: DEFAULT_HALF_WIDTH,
            qcb_committee: default_committee(),
            execution: Execution::default(),
        }
    }
}

impl ExperimentSpec {
    fn validate(&self, cube: &HealthCube) -> Result<usize, ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        let Some(target) = cube.year_index(self.target_year) else {
            return bad(format!("target year {} is not in the data", self.target_year));
        };
        if target == 0 {
            return Err(ExperimentError::InsufficientHistory(format!("no year before {}", self.target_year)));
        }
        if let Some(p) = self.proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return bad(format!("proportion {p} is outside (0, 1]"));
        }
        for (name, empty) in [
            ("proportions", self.proportions.is_empty()),
            ("selection_methods", self.selection_methods.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} is empty"));
            }
        }
        if self.selection_methods.contains(&SelectionMethod::Qcb) && self.qcb_committee.len() < 2 {
            return bad("qcb committee needs at least 2 members".into());
        }
        self.completer_config.validate().map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
        Ok(target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub selection_method: SelectionMethod,
    pub completer: String,
    pub proportion: f64,
    pub seed: u64,
    pub target_year: i32,
    /// Disease code, or `ALL` for metrics pooled over every disease.
    pub disease: String,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub n_scored: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub regions: usize,
    pub diseases: Vec<String>,
    pub years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub spec: ExperimentSpec,
    pub dataset: DatasetSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// One pooled (`ALL`) record per grid point.
    pub records: Vec<ExperimentRecord>,
    /// Per-disease breakdown of every grid point.
    pub disease_records: Vec<ExperimentRecord>,
    pub provenance: Provenance,
}

/// Builds a completer for a seed. Used to run experiments with completers
/// other than the built-in ones.
pub type CompleterFactory<'a> = &'a (dyn Fn(u64) -> Box<dyn Completer> + Sync);

/// Runs the full grid with the built-in completers listed in `spec`.
pub fn run_experiment(
    cube: &HealthCube,
    mask: &ObservationMask,
    catalog: &RegionCatalog,
    spec: &ExperimentSpec,
) -> Result<ExperimentReport, ExperimentError> {
    let factories: Vec<Box<dyn Fn(u64) -> Box<dyn Completer> + Sync>> = spec
        .completers
        .iter()
        .map(|&a| {
            let config = spec.completer_config.clone();
            Box::new(move |seed: u64| Box::new(StandardCompleter::new(a, config.with_seed(seed))) as Box<dyn Completer>)
                as Box<dyn Fn(u64) -> Box<dyn Completer> + Sync>
        })
        .collect();
    let refs: Vec<CompleterFactory<'_>> = factories.iter().map(|f| f.as_ref()).collect();
    run_experiment_with(cube, mask, catalog, spec, &refs)
}

/// Runs the grid with caller-supplied completers; `spec.completers` is
/// ignored.
pub fn run_experiment_with(
    cube: &HealthCube,
    mask: &ObservationMask,
    catalog: &RegionCatalog,
    spec: &ExperimentSpec,
    completers: &[CompleterFactory<'_>],
) -> Result<ExperimentReport, ExperimentError> {
    let target = spec.validate(cube)?;
    if completers.is_empty() {
        return Err(ExperimentError::InvalidSpec("no completers".into()));
    }
    if mask.shape() != cube.shape() || catalog.len() != cube.num_regions() {
        return Err(ExperimentError::InvalidSpec(format!(
            "cube {:?}, mask {:?} and catalog of {} regions disagree",
            cube.shape(),
            mask.shape(),
            catalog.len()
        )));
    }
    let neighbors = nearest_neighbors(&DistanceMatrix::from_catalog(catalog).map_err(|e| ExperimentError::Geo(e.to_string()))?);
    let ctx = Context {
        truth: cube,
        truth_mask: mask,
        neighbors: &neighbors,
        spec,
        target,
    };

    let mut jobs = Vec::new();
    for &method in &spec.selection_methods {
        for &seed in &spec.seeds {
            for &proportion in &spec.proportions {
                for c in 0..completers.len() {
                    jobs.push(Job {
                        method,
                        seed,
                        proportion,
                        completer: c,
                    });
                }
            }
        }
    }

    // Selection scores from the untouched history are shared by every job
    // with the same method and seed.
    let mut score_cache = BTreeMap::new();
    if !spec.longitudinal {
        let keys: Vec<(SelectionMethod, u64)> = spec
            .selection_methods
            .iter()
            .filter(|m| **m != SelectionMethod::Random)
            .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
            .collect();
        let scored = spec.execution.map(&keys, |&(m, s)| ctx.scores(cube, mask, target, m, s));
        for (k, v) in keys.into_iter().zip(scored) {
            score_cache.insert(k, v?);
        }
    }

    let results = spec.execution.map(&jobs, |job| ctx.run_job(job, completers[job.completer], &score_cache));
    let mut records = Vec::new();
    let mut disease_records = Vec::new();
    for r in results {
        for (pooled, per_disease) in r? {
            records.push(pooled);
            disease_records.extend(per_disease);
        }
    }
    Ok(ExperimentReport {
        records,
        disease_records,
        provenance: Provenance {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            dataset: DatasetSummary {
                regions: cube.num_regions(),
                diseases: cube.diseases().to_vec(),
                years: cube.years().to_vec(),
            },
        },
    })
}

struct Job {
    method: SelectionMethod,
    seed: u64,
    proportion: f64,
    completer: usize,
}

type Scores = (Vec<f64>, Vec<String>);

struct Context<'a> {
    truth: &'a HealthCube,
    truth_mask: &'a ObservationMask,
    neighbors: &'a NeighborOrder,
    spec: &'a ExperimentSpec,
    target: usize,
}

impl Context<'_> {
    /// Ranking scores computed from the years before `year`.
    fn scores(&self, cube: &HealthCube, mask: &ObservationMask, year: usize, method: SelectionMethod, seed: u64) -> Result<Scores, ExperimentError> {
        let history = cube.leading_years(year);
        let history_mask = mask.leading_years(year);
        Ok(match method {
            SelectionMethod::Random => unreachable!("random selection has no scores"),
            SelectionMethod::Rmdc => rmdc_scores(&history, &history_mask, self.neighbors, self.spec.rmdc_half_width)?,
            SelectionMethod::Qcb => {
                let committee = standard_committee(&self.spec.qcb_committee, &self.spec.completer_config, seed);
                let refs: Vec<&dyn Completer> = committee.iter().map(|c| c as &dyn Completer).collect();
                qcb_scores(&history, &history_mask, &refs, self.neighbors, Execution::Sequential)?
            }
        })
    }

    fn select(&self, job: &Job, scores: Option<&Scores>) -> Result<SelectionResult, ExperimentError> {
        let n = self.truth.num_regions();
        if job.method == SelectionMethod::Random {
            return Ok(select_random(n, job.proportion, job.seed)?);
        }
        let (scores, flags) = scores.expect("scores computed for ranked methods");
        Ok(SelectionResult {
            selected: top_k(scores, selection_size(n, job.proportion)?),
            scores: scores.clone(),
            method: job.method,
            proportion: job.proportion,
            flags: flags.clone(),
        })
    }

    fn run_job(
        &self,
        job: &Job,
        factory: CompleterFactory<'_>,
        cache: &BTreeMap<(SelectionMethod, u64), Scores>,
    ) -> Result<Vec<(ExperimentRecord, Vec<ExperimentRecord>)>, ExperimentError> {
        let completer = factory(job.seed);
        let last = if self.spec.longitudinal { self.truth.num_years() - 1 } else { self.target };
        let mut cube = self.truth.clone();
        let mut mask = self.truth_mask.clone();
        let mut out = Vec::new();
        for year in self.target..=last {
            let selection = if job.method == SelectionMethod::Random {
                self.select(job, None)?
            } else if self.spec.longitudinal {
                let s = self.scores(&cube, &mask, year, job.method, job.seed)?;
                self.select(job, Some(&s))?
            } else {
                self.select(job, cache.get(&(job.method, job.seed)))?
            };
            let (records, predicted) = self.score_year(job, completer.as_ref(), &cube, &mask, year, &selection);
            out.push(records);
            if self.spec.longitudinal {
                cube = cube.with_entries(predicted.iter().copied());
                mask = mask.with_revealed(predicted.iter().map(|(c, _)| *c));
            }
        }
        Ok(out)
    }

    /// Completes one target year and scores it. Returns the pooled and
    /// per-disease records plus the predicted cells.
    fn score_year(
        &self,
        job: &Job,
        completer: &dyn Completer,
        cube: &HealthCube,
        mask: &ObservationMask,
        year: usize,
        selection: &SelectionResult,
    ) -> ((ExperimentRecord, Vec<ExperimentRecord>), Vec<(Cell, f64)>) {
        let (n, d, _) = cube.shape();
        let targets: Vec<Cell> = (0..n)
            .filter(|&r| !selection.is_selected(r))
            .flat_map(|r| (0..d).map(move |k| Cell::new(r, k, year)))
            .filter(|c| self.truth_mask.is_observed(c.region, c.disease, c.year))
            .collect();

        let visible = cube.leading_years(year + 1);
        let visible_mask = mask.leading_years(year + 1).with_hidden(targets.iter().copied());
        let mut flags = selection.flags.clone();
        let mut pairs_by_disease: Vec<Vec<(f64, f64)>> = vec![Vec::new(); d];
        let mut predicted = Vec::new();
        if !targets.is_empty() {
            let input = CompletionInput {
                cube: &visible,
                mask: &visible_mask,
                neighbors: self.neighbors,
            };
            match completer.complete(&input, &targets) {
                Ok(p) => {
                    flags.extend(p.flag_summary());
                    for e in &p.entries {
                        let truth = self.truth.values()[[e.cell.region, e.cell.disease, e.cell.year]];
                        pairs_by_disease[e.cell.disease].push((truth, e.value));
                        predicted.push((e.cell, e.value));
                    }
                }
                Err(e) => flags.push(format!("completion_failed={e}")),
            }
        }

        let record = |disease: String, pairs: &[(f64, f64)]| ExperimentRecord {
            selection_method: job.method,
            completer: completer.name().to_string(),
            proportion: job.proportion,
            seed: job.seed,
            target_year: cube.years()[year],
            disease,
            rmse: rmse(pairs),
            mae: mae(pairs),
            n_scored: pairs.len(),
            flags: flags.clone(),
        };
        let pooled: Vec<(f64, f64)> = pairs_by_disease.iter().flatten().copied().collect();
        let per_disease = pairs_by_disease
            .iter()
            .enumerate()
            .map(|(k, pairs)| record(cube.diseases()[k].clone(), pairs))
            .collect();
        ((record("ALL".into(), &pooled), per_disease), predicted)
    }
}
