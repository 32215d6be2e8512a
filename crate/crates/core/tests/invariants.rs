use cph_core::completion::{Algorithm, Completer, CompleterConfig, CompletionInput, StandardCompleter};
use cph_core::correlation::spatial_profile;
use cph_core::data::{slice_disease_index, Cell, DiseaseMatrix, HealthCube, ObservationMask, Region, RegionCatalog};
use cph_core::exec::Execution;
use cph_core::geo::{build_pair_groups, nearest_neighbors, DistanceMatrix};
use cph_core::harness::{generate_synthetic, run_experiment, ExperimentSpec, SyntheticSpec};
use cph_core::io::{read_dataset, write_dataset, Dataset};
use cph_core::selection::SelectionMethod;
use ndarray::{Array2, Array3};
use proptest::prelude::*;

fn small_synthetic(seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        regions: 30,
        diseases: 3,
        years: 6,
        seed,
        ..SyntheticSpec::default()
    };
    let s = generate_synthetic(&spec).unwrap();
    Dataset {
        cube: s.cube,
        mask: s.mask,
        catalog: s.catalog,
    }
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(n, d, t)| {
        (
            prop::collection::vec((-89.9f64..89.9, -179.9f64..179.9), n),
            prop::collection::vec(0.0f64..=1.0, n * d * t),
            prop::collection::vec(any::<bool>(), n * d * t),
        )
            .prop_map(move |(coords, rates, observed)| {
                let regions = coords
                    .iter()
                    .enumerate()
                    .map(|(i, &(lat, lon))| Region::new(format!("W{i:02}"), format!("ward, {i}"), lat, lon))
                    .collect();
                let catalog = RegionCatalog::new(regions).unwrap();
                // Region 0 is fully observed so every disease and year occurs.
                let mask = Array3::from_shape_fn((n, d, t), |(i, k, y)| i == 0 || observed[(i * d + k) * t + y]);
                let values = Array3::from_shape_fn((n, d, t), |(i, k, y)| {
                    if mask[[i, k, y]] {
                        rates[(i * d + k) * t + y]
                    } else {
                        f64::NAN
                    }
                });
                let cube = HealthCube::new(values, (1..=d).map(|k| format!("D{k}")).collect(), (0..t).map(|y| 2001 + y as i32).collect()).unwrap();
                let mask = ObservationMask::for_cube(&cube, mask).unwrap();
                Dataset { cube, mask, catalog }
            })
    })
}

fn same_dataset(a: &Dataset, b: &Dataset) -> bool {
    a.catalog == b.catalog
        && a.mask == b.mask
        && a.cube.diseases() == b.cube.diseases()
        && a.cube.years() == b.cube.years()
        && a.cube
            .values()
            .iter()
            .zip(b.cube.values())
            .all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_then_ingest_is_identity(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert!(same_dataset(&ds, &back));
    }
}

#[test]
fn synthetic_dataset_round_trips() {
    let ds = small_synthetic(11);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    assert!(same_dataset(&ds, &read_dataset(dir.path()).unwrap()));
}

#[test]
fn future_years_do_not_leak_into_reports() {
    let ds = small_synthetic(3);
    let spec = ExperimentSpec {
        target_year: 2012,
        proportions: vec![0.2, 0.5],
        selection_methods: vec![SelectionMethod::Random, SelectionMethod::Rmdc, SelectionMethod::Qcb],
        completers: Algorithm::ALL.to_vec(),
        seeds: vec![0],
        execution: Execution::Sequential,
        ..ExperimentSpec::default()
    };
    let base = run_experiment(&ds.cube, &ds.mask, &ds.catalog, &spec).unwrap();

    let target = ds.cube.year_index(2012).unwrap();
    let mut values = ds.cube.values().clone();
    for ((_, _, y), v) in values.indexed_iter_mut() {
        if y > target {
            *v = 1.0 - *v;
        }
    }
    let altered = HealthCube::new(values, ds.cube.diseases().to_vec(), ds.cube.years().to_vec()).unwrap();
    let other = run_experiment(&altered, &ds.mask, &ds.catalog, &spec).unwrap();
    assert_eq!(base.records, other.records);
    assert_eq!(base.disease_records, other.disease_records);
}

#[test]
fn completers_never_read_masked_values() {
    let ds = small_synthetic(5);
    let neighbors = nearest_neighbors(&DistanceMatrix::from_catalog(&ds.catalog).unwrap());
    let (n, d, t) = ds.cube.shape();
    let targets: Vec<Cell> = (0..n).step_by(3).flat_map(|i| (0..d).map(move |k| Cell::new(i, k, t - 1))).collect();
    let mask = ds.mask.with_hidden(targets.iter().copied());
    let scrambled = ds.cube.with_entries(targets.iter().map(|&c| (c, 0.9)));
    for algo in Algorithm::ALL {
        let completer = StandardCompleter::new(algo, CompleterConfig::default());
        let run = |cube: &HealthCube| {
            let input = CompletionInput {
                cube,
                mask: &mask,
                neighbors: &neighbors,
            };
            completer.complete(&input, &targets).unwrap()
        };
        assert_eq!(run(&ds.cube), run(&scrambled), "{algo}");
    }
}

#[test]
fn spatial_profile_ignores_region_order() {
    let ds = small_synthetic(9);
    let matrix = slice_disease_index(&ds.cube, &ds.mask, 1).unwrap();
    let groups = build_pair_groups(&ds.catalog, 1.0, 53).unwrap();
    let base = spatial_profile(&matrix, &groups).unwrap();

    let n = ds.catalog.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let catalog = RegionCatalog::new(perm.iter().map(|&p| ds.catalog.region(p).clone()).collect()).unwrap();
    let values = Array2::from_shape_fn(matrix.values().dim(), |(i, y)| matrix.values()[[perm[i], y]]);
    let shuffled = DiseaseMatrix::dense(values);
    let groups = build_pair_groups(&catalog, 1.0, 53).unwrap();
    let other = spatial_profile(&shuffled, &groups).unwrap();

    assert_eq!(base.groups.len(), other.groups.len());
    for (a, b) in base.groups.iter().zip(&other.groups) {
        assert_eq!(a.pair_count, b.pair_count);
        for (x, y) in a.values.iter().zip(&b.values) {
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}"),
                (x, y) => assert_eq!(x, y),
            }
        }
    }
}
