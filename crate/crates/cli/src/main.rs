//! `cph`: synthesize, analyze, select and complete morbidity datasets.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cph_core::completion::{Algorithm, Completer, CompleterConfig, CompletionInput, StandardCompleter};
use cph_core::correlation::{spatial_profile_with, temporal_grid, PairVectors};
use cph_core::data::{slice_disease, Cell};
use cph_core::exec::Execution;
use cph_core::geo::{build_pair_groups, nearest_neighbors, DistanceMatrix};
use cph_core::harness::{generate_synthetic, mae, rmse, run_experiment, ExperimentSpec, SyntheticSpec};
use cph_core::io::{self, Dataset, IoError};
use cph_core::selection::{select_qcb, select_random, select_rmdc, standard_committee, SelectionMethod, DEFAULT_HALF_WIDTH};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "cph", version, about = "Compressive population health toolkit")]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (regions.csv, morbidity.csv).
    Synth(SynthArgs),
    /// Spatial profile and temporal grid for one disease.
    Correlate(CorrelateArgs),
    /// Pick regions for direct data collection.
    Select(SelectArgs),
    /// Predict missing entries.
    Complete(CompleteArgs),
    /// Run a selection x completer x proportion x seed grid.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    regions: usize,
    #[arg(long, default_value_t = 5)]
    diseases: usize,
    #[arg(long, default_value_t = 10)]
    years: usize,
    #[arg(long, default_value_t = 2009)]
    start_year: i32,
    #[arg(long, default_value_t = 10.0)]
    length_scale_km: f64,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    drift: f64,
    #[arg(long, default_value_t = 0.1)]
    trend: f64,
    /// Comma-separated per-disease base rates.
    #[arg(long, value_delimiter = ',')]
    base_rates: Option<Vec<f64>>,
    /// Comma-separated per-disease spatial amplitudes.
    #[arg(long, value_delimiter = ',')]
    amplitudes: Option<Vec<f64>>,
    #[arg(long, default_value_t = 6)]
    kernels: usize,
    #[arg(long, default_value_t = 50.0)]
    box_km: f64,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairMode {
    YearSeries,
    AcrossPairs,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Directory holding regions.csv and morbidity.csv.
    #[arg(long)]
    data: PathBuf,
    /// Disease code; defaults to the first one.
    #[arg(long)]
    disease: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    #[arg(long, default_value_t = 53)]
    groups: usize,
    #[arg(long, value_enum, default_value = "year-series")]
    pair_vectors: PairMode,
    /// Min-max scale each indicator to [0, 1].
    #[arg(long)]
    normalize: bool,
    /// Output directory for spatial_profile.csv and temporal_grid.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: SelectionMethod,
    #[arg(long)]
    proportion: f64,
    #[arg(long)]
    seed: u64,
    /// Only years before this one are used; defaults to the last year.
    #[arg(long)]
    target_year: Option<i32>,
    #[arg(long, default_value_t = DEFAULT_HALF_WIDTH)]
    half_width: usize,
    /// QCB committee members.
    #[arg(long, value_delimiter = ',', default_value = "ucf,icf,nmf")]
    committee: Vec<Algorithm>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    algo: Algorithm,
    /// CSV of `region_id,disease,year` cells to predict.
    #[arg(long, conflicts_with = "hide_fraction", required_unless_present = "hide_fraction")]
    targets: Option<PathBuf>,
    /// Hide this fraction of observed entries and predict them.
    #[arg(long, requires = "seed")]
    hide_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Completer settings; unset values keep their defaults.
#[derive(Args, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ConfigArgs {
    #[arg(long)]
    window_size: Option<usize>,
    #[arg(long)]
    nmf_rank: Option<usize>,
    #[arg(long)]
    nmf_iters: Option<usize>,
    #[arg(long)]
    nmf_tol: Option<f64>,
    /// Three comma-separated ranks.
    #[arg(long, value_delimiter = ',')]
    tucker_ranks: Option<Vec<usize>>,
    #[arg(long)]
    tucker_lambda: Option<f64>,
    #[arg(long)]
    tucker_iters: Option<usize>,
    #[arg(long)]
    blend_holdout: Option<f64>,
}

impl ConfigArgs {
    fn or(self, other: ConfigArgs) -> ConfigArgs {
        ConfigArgs {
            window_size: self.window_size.or(other.window_size),
            nmf_rank: self.nmf_rank.or(other.nmf_rank),
            nmf_iters: self.nmf_iters.or(other.nmf_iters),
            nmf_tol: self.nmf_tol.or(other.nmf_tol),
            tucker_ranks: self.tucker_ranks.or(other.tucker_ranks),
            tucker_lambda: self.tucker_lambda.or(other.tucker_lambda),
            tucker_iters: self.tucker_iters.or(other.tucker_iters),
            blend_holdout: self.blend_holdout.or(other.blend_holdout),
        }
    }

    fn build(self, seed: u64) -> Result<CompleterConfig, Failure> {
        let d = CompleterConfig::default();
        let tucker_ranks = match self.tucker_ranks {
            None => None,
            Some(r) => Some(<[usize; 3]>::try_from(r).map_err(|r| Failure::new("invalid", format!("tucker-ranks needs 3 values, got {}", r.len())))?),
        };
        let config = CompleterConfig {
            window_size: self.window_size.unwrap_or(d.window_size),
            nmf_rank: self.nmf_rank.unwrap_or(d.nmf_rank),
            nmf_iters: self.nmf_iters.unwrap_or(d.nmf_iters),
            nmf_tol: self.nmf_tol.unwrap_or(d.nmf_tol),
            tucker_ranks,
            tucker_lambda: self.tucker_lambda.unwrap_or(d.tucker_lambda),
            tucker_iters: self.tucker_iters.unwrap_or(d.tucker_iters),
            blend_holdout: self.blend_holdout.unwrap_or(d.blend_holdout),
            rng_seed: seed,
        };
        config.validate().map_err(|e| Failure::new("invalid", e.to_string()))?;
        Ok(config)
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    /// Flat TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Output directory for report.csv and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct GridArgs {
    #[arg(long)]
    target_year: Option<i32>,
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<SelectionMethod>>,
    #[arg(long, value_delimiter = ',')]
    completers: Option<Vec<Algorithm>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(default)]
    longitudinal: bool,
    #[arg(long)]
    half_width: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    committee: Option<Vec<Algorithm>>,
    #[command(flatten)]
    #[serde(flatten)]
    completer: ConfigArgs,
}

const CONFIG_KEYS: [&str; 16] = [
    "target-year",
    "proportions",
    "methods",
    "completers",
    "seeds",
    "longitudinal",
    "half-width",
    "committee",
    "window-size",
    "nmf-rank",
    "nmf-iters",
    "nmf-tol",
    "tucker-ranks",
    "tucker-lambda",
    "tucker-iters",
    "blend-holdout",
];

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let message = f.message.replace('\n', " ");
            eprintln!("error: {}: {message}", f.kind);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = match cli.threads {
        Some(0) => return Err(Failure::new("invalid", "--threads must be at least 1")),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::new("invalid", e.to_string()))?;
            Execution::Parallel
        }
        None => Execution::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Correlate(a) => correlate(a),
        Command::Select(a) => select(a, exec),
        Command::Complete(a) => complete(a),
        Command::Experiment(a) => experiment(a, exec),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| IoError::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), Failure> {
    w.flush().map_err(|e| IoError::io(path, e).into())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        regions: a.regions,
        diseases: a.diseases,
        years: a.years,
        start_year: a.start_year,
        length_scale_km: a.length_scale_km,
        rho: a.rho,
        sigma: a.sigma,
        drift: a.drift,
        trend: a.trend,
        base_rates: a.base_rates,
        amplitudes: a.amplitudes,
        kernels: a.kernels,
        box_km: a.box_km,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec).map_err(|m| Failure::new("invalid", m))?;
    for w in &data.warnings {
        eprintln!("warning: {w}");
    }
    let dataset = Dataset {
        cube: data.cube,
        mask: data.mask,
        catalog: data.catalog,
    };
    io::write_dataset(&a.out, &dataset)?;
    Ok(())
}

fn correlate(a: CorrelateArgs) -> Result<(), Failure> {
    let ds = io::read_dataset(&a.data)?;
    let disease = match a.disease {
        Some(d) => d,
        None => ds.cube.diseases().first().cloned().ok_or_else(|| Failure::new("invalid", "dataset has no diseases"))?,
    };
    let matrix = slice_disease(&ds.cube, &ds.mask, &disease).map_err(|e| Failure::new("invalid", e.to_string()))?;
    let groups = build_pair_groups(&ds.catalog, a.bin_width, a.groups).map_err(|e| Failure::new("geo", e.to_string()))?;
    let mode = match a.pair_vectors {
        PairMode::YearSeries => PairVectors::YearSeries,
        PairMode::AcrossPairs => PairVectors::AcrossPairs,
    };
    let profile = spatial_profile_with(&matrix, &groups, mode).map_err(|e| Failure::new("correlation", e.to_string()))?;
    let grid = temporal_grid(&matrix).map_err(|e| Failure::new("correlation", e.to_string()))?;

    let path = a.out.join("spatial_profile.csv");
    let mut w = create(&path)?;
    io::write_spatial_profile(&mut w, &profile, a.normalize)?;
    finish(w, &path)?;
    let path = a.out.join("temporal_grid.csv");
    let mut w = create(&path)?;
    io::write_temporal_grid(&mut w, &grid, ds.cube.years(), a.normalize)?;
    finish(w, &path)
}

fn history_len(ds: &Dataset, target_year: Option<i32>) -> Result<usize, Failure> {
    match target_year {
        None => Ok(ds.cube.num_years()),
        Some(y) => ds
            .cube
            .year_index(y)
            .ok_or_else(|| Failure::new("invalid", format!("target year {y} is not in the data"))),
    }
}

fn select(a: SelectArgs, exec: Execution) -> Result<(), Failure> {
    let ds = io::read_dataset(&a.data)?;
    let t = history_len(&ds, a.target_year)?;
    let history = ds.cube.leading_years(t);
    let mask = ds.mask.leading_years(t);
    let selection_err = |e: cph_core::selection::SelectionError| Failure::new("selection", e.to_string());
    let result = match a.method {
        SelectionMethod::Random => select_random(ds.catalog.len(), a.proportion, a.seed),
        method => {
            let dist = DistanceMatrix::from_catalog(&ds.catalog).map_err(|e| Failure::new("geo", e.to_string()))?;
            let neighbors = nearest_neighbors(&dist);
            if method == SelectionMethod::Rmdc {
                select_rmdc(&history, &mask, &neighbors, a.proportion, a.half_width)
            } else {
                let config = CompleterConfig::default();
                let members = standard_committee(&a.committee, &config, a.seed);
                let committee: Vec<&dyn Completer> = members.iter().map(|m| m as &dyn Completer).collect();
                select_qcb(&history, &mask, &committee, &neighbors, a.proportion, exec)
            }
        }
    }
    .map_err(selection_err)?;
    for f in &result.flags {
        eprintln!("warning: {f}");
    }
    let mut w = create(&a.out)?;
    io::write_selection(&mut w, &result, &ds.catalog)?;
    finish(w, &a.out)
}

fn complete(a: CompleteArgs) -> Result<(), Failure> {
    let ds = io::read_dataset(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let (targets, mask) = match (&a.targets, a.hide_fraction) {
        (Some(path), _) => {
            let cells = io::read_targets(path, &ds.cube, &ds.catalog)?;
            (cells, ds.mask.clone())
        }
        (None, Some(f)) => {
            if !(f > 0.0 && f < 1.0) {
                return Err(Failure::new("invalid", format!("hide fraction must be in (0, 1), got {f}")));
            }
            let (n, d, t) = ds.cube.shape();
            let observed: Vec<Cell> = (0..n)
                .flat_map(|i| (0..d).flat_map(move |k| (0..t).map(move |y| Cell::new(i, k, y))))
                .filter(|c| ds.mask.is_observed(c.region, c.disease, c.year))
                .collect();
            let count = (f * observed.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cells: Vec<Cell> = sample(&mut rng, observed.len(), count).into_iter().map(|i| observed[i]).collect();
            cells.sort();
            let hidden = ds.mask.with_hidden(cells.iter().copied());
            (cells, hidden)
        }
        (None, None) => unreachable!("clap requires --targets or --hide-fraction"),
    };

    let config = a.config.build(seed)?;
    let dist = DistanceMatrix::from_catalog(&ds.catalog).map_err(|e| Failure::new("geo", e.to_string()))?;
    let neighbors = nearest_neighbors(&dist);
    let input = CompletionInput {
        cube: &ds.cube,
        mask: &mask,
        neighbors: &neighbors,
    };
    let prediction = StandardCompleter::new(a.algo, config)
        .complete(&input, &targets)
        .map_err(|e| Failure::new("completion", e.to_string()))?;
    for f in prediction.flag_summary() {
        eprintln!("note: {f}");
    }
    if a.hide_fraction.is_some() {
        let pairs: Vec<(f64, f64)> = prediction
            .entries
            .iter()
            .map(|e| (ds.cube.values()[[e.cell.region, e.cell.disease, e.cell.year]], e.value))
            .collect();
        if let (Some(r), Some(m)) = (rmse(&pairs), mae(&pairs)) {
            eprintln!("hidden {}: rmse {} mae {}", pairs.len(), io::format_float(r), io::format_float(m));
        }
    }
    let mut w = create(&a.out)?;
    io::write_predictions(&mut w, &prediction, &ds.cube, &ds.catalog)?;
    finish(w, &a.out)
}

fn experiment(a: ExperimentArgs, exec: Execution) -> Result<(), Failure> {
    let file = match &a.config {
        None => GridArgs::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
            let bad = |m: String| Failure::new("config", format!("{}: {m}", path.display()));
            let table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.message().to_string()))?;
            if let Some(key) = table.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
                return Err(bad(format!("unknown key `{key}`")));
            }
            GridArgs::deserialize(table).map_err(|e| bad(e.message().to_string()))?
        }
    };
    let flags = a.grid;
    let ds = io::read_dataset(&a.data)?;
    let d = ExperimentSpec::default();
    let seeds = flags.seeds.or(file.seeds).ok_or_else(|| Failure::new("invalid", "--seeds is required"))?;
    let target_year = match flags.target_year.or(file.target_year) {
        Some(y) => y,
        None => *ds.cube.years().last().ok_or_else(|| Failure::new("invalid", "dataset has no years"))?,
    };
    let spec = ExperimentSpec {
        target_year,
        proportions: flags.proportions.or(file.proportions).unwrap_or(d.proportions),
        selection_methods: flags.methods.or(file.methods).unwrap_or(d.selection_methods),
        completers: flags.completers.or(file.completers).unwrap_or(d.completers),
        seeds,
        completer_config: flags.completer.or(file.completer).build(0)?,
        longitudinal: flags.longitudinal || file.longitudinal,
        rmdc_half_width: flags.half_width.or(file.half_width).unwrap_or(d.rmdc_half_width),
        qcb_committee: flags.committee.or(file.committee).unwrap_or(d.qcb_committee),
        execution: exec,
    };
    let report = run_experiment(&ds.cube, &ds.mask, &ds.catalog, &spec).map_err(|e| Failure::new("experiment", e.to_string()))?;

    let path = a.out.join("report.csv");
    let mut w = create(&path)?;
    io::write_report_csv(&mut w, &report)?;
    finish(w, &path)?;
    let path = a.out.join("report.json");
    let mut w = create(&path)?;
    io::write_report_json(&mut w, &report)?;
    finish(w, &path)
}
