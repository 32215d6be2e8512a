//! Shared domain types: the region catalog, the region x disease x year
//! morbidity cube, its observation mask, and single-disease matrices.
//!
//! Entries that are missing at source and entries hidden for an experiment
//! are both represented by `mask == false`. The value stored behind a false
//! mask bit is arbitrary (ingestion writes NaN) and must not be read.

use std::collections::HashMap;
use std::fmt;

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown disease `{0}`")]
    UnknownDisease(String),
    #[error("invalid region catalog: {0}")]
    InvalidCatalog(String),
}

/// A single region with its representative coordinate (WGS84 degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

impl Region {
    pub fn new(id: impl Into<String>, name: impl Into<String>, lat: f64, lon: f64) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            lat,
            lon,
        }
    }
}

/// Ordered list of regions. The list order is the region index used by every
/// other structure in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCatalog {
    regions: Vec<Region>,
    index: HashMap<String, usize>,
}

impl RegionCatalog {
    /// Builds a catalog, rejecting empty or duplicate ids and out-of-range
    /// coordinates.
    pub fn new(regions: Vec<Region>) -> Result<Self, DataError> {
        let catalog = Self::new_unchecked(regions);
        if let Some(v) = catalog.violations().into_iter().next() {
            return Err(DataError::InvalidCatalog(v.to_string()));
        }
        Ok(catalog)
    }

    /// Builds a catalog without checking its invariants. Use
    /// [`validate_cube`] to obtain a report of what is wrong with it.
    pub fn new_unchecked(regions: Vec<Region>) -> Self {
        let mut index = HashMap::with_capacity(regions.len());
        for (i, r) in regions.iter().enumerate() {
            index.entry(r.id.clone()).or_insert(i);
        }
        Self { regions, index }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, i: usize) -> &Region {
        &self.regions[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashMap::new();
        for (i, r) in self.regions.iter().enumerate() {
            if r.id.is_empty() {
                out.push(Violation::EmptyRegionId { index: i });
            } else if seen.insert(r.id.as_str(), i).is_some() {
                out.push(Violation::DuplicateRegionId { id: r.id.clone() });
            }
            let lat_ok = (-90.0..=90.0).contains(&r.lat);
            let lon_ok = (-180.0..=180.0).contains(&r.lon);
            if !lat_ok || !lon_ok {
                out.push(Violation::CoordinateOutOfRange {
                    region: r.id.clone(),
                    lat: r.lat,
                    lon: r.lon,
                });
            }
        }
        out
    }
}

/// Dense region x disease x year array of morbidity rates.
#[derive(Debug, Clone, PartialEq)]
pub struct HealthCube {
    values: Array3<f64>,
    diseases: Vec<String>,
    years: Vec<i32>,
}

impl HealthCube {
    /// Only the structural invariant (array shape against the label lists) is
    /// enforced here; rate ranges and year ordering are reported by
    /// [`validate_cube`].
    pub fn new(values: Array3<f64>, diseases: Vec<String>, years: Vec<i32>) -> Result<Self, DataError> {
        let (_, d, t) = values.dim();
        if d != diseases.len() || t != years.len() {
            return Err(DataError::ShapeMismatch(format!(
                "values are {:?} but {} diseases and {} years were given",
                values.dim(),
                diseases.len(),
                years.len()
            )));
        }
        Ok(Self { values, diseases, years })
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn diseases(&self) -> &[String] {
        &self.diseases
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn num_regions(&self) -> usize {
        self.values.dim().0
    }

    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }

    pub fn num_years(&self) -> usize {
        self.years.len()
    }

    pub fn disease_index(&self, code: &str) -> Option<usize> {
        self.diseases.iter().position(|d| d == code)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    /// The stored rate if (and only if) the entry is observed.
    pub fn observed(&self, mask: &ObservationMask, region: usize, disease: usize, year: usize) -> Option<f64> {
        mask.is_observed(region, disease, year)
            .then(|| self.values[[region, disease, year]])
    }

    /// Keeps the first `n` years.
    pub fn leading_years(&self, n: usize) -> HealthCube {
        HealthCube {
            values: self.values.slice(s![.., .., ..n]).to_owned(),
            diseases: self.diseases.clone(),
            years: self.years[..n].to_vec(),
        }
    }

    /// Returns a copy with the given entries overwritten.
    pub fn with_entries(&self, entries: impl IntoIterator<Item = (Cell, f64)>) -> HealthCube {
        let mut values = self.values.clone();
        for (c, v) in entries {
            values[[c.region, c.disease, c.year]] = v;
        }
        HealthCube {
            values,
            diseases: self.diseases.clone(),
            years: self.years.clone(),
        }
    }
}

/// Index of one entry of a [`HealthCube`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub region: usize,
    pub disease: usize,
    pub year: usize,
}

impl Cell {
    pub fn new(region: usize, disease: usize, year: usize) -> Self {
        Self { region, disease, year }
    }
}

/// Boolean observation mask with cached per-(disease, year) observed counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    mask: Array3<bool>,
    counts: Array2<usize>,
}

impl ObservationMask {
    pub fn new(mask: Array3<bool>) -> Self {
        let counts = mask.map_axis(Axis(0), |lane| lane.iter().filter(|&&b| b).count());
        Self { mask, counts }
    }

    /// Mask of the given shape with every entry observed.
    pub fn full(shape: (usize, usize, usize)) -> Self {
        Self::new(Array3::from_elem(shape, true))
    }

    /// Mask whose shape must match `cube`.
    pub fn for_cube(cube: &HealthCube, mask: Array3<bool>) -> Result<Self, DataError> {
        if mask.dim() != cube.shape() {
            return Err(DataError::ShapeMismatch(format!(
                "mask is {:?} but cube is {:?}",
                mask.dim(),
                cube.shape()
            )));
        }
        Ok(Self::new(mask))
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.mask.dim()
    }

    pub fn as_array(&self) -> &Array3<bool> {
        &self.mask
    }

    pub fn is_observed(&self, region: usize, disease: usize, year: usize) -> bool {
        self.mask[[region, disease, year]]
    }

    pub fn observed_count(&self, disease: usize, year: usize) -> usize {
        self.counts[[disease, year]]
    }

    pub fn total_observed(&self) -> usize {
        self.counts.sum()
    }

    /// Copy with the listed cells marked unobserved.
    pub fn with_hidden(&self, cells: impl IntoIterator<Item = Cell>) -> Self {
        self.with_cells(cells, false)
    }

    /// Copy with the listed cells marked observed.
    pub fn with_revealed(&self, cells: impl IntoIterator<Item = Cell>) -> Self {
        self.with_cells(cells, true)
    }

    fn with_cells(&self, cells: impl IntoIterator<Item = Cell>, value: bool) -> Self {
        let mut mask = self.mask.clone();
        let mut counts = self.counts.clone();
        for c in cells {
            let slot = &mut mask[[c.region, c.disease, c.year]];
            if *slot != value {
                *slot = value;
                let count = &mut counts[[c.disease, c.year]];
                if value {
                    *count += 1;
                } else {
                    *count -= 1;
                }
            }
        }
        Self { mask, counts }
    }

    pub fn leading_years(&self, n: usize) -> Self {
        Self::new(self.mask.slice(s![.., .., ..n]).to_owned())
    }

    /// Every unobserved cell in (region, disease, year) order.
    pub fn unobserved_cells(&self) -> Vec<Cell> {
        self.mask
            .indexed_iter()
            .filter(|(_, &m)| !m)
            .map(|((r, d, t), _)| Cell::new(r, d, t))
            .collect()
    }
}

/// Region x year matrix for one disease, with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DiseaseMatrix {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl DiseaseMatrix {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self, DataError> {
        if values.dim() != mask.dim() {
            return Err(DataError::ShapeMismatch(format!(
                "values are {:?} but mask is {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        Ok(Self { values, mask })
    }

    /// Fully observed matrix.
    pub fn dense(values: Array2<f64>) -> Self {
        let mask = Array2::from_elem(values.dim(), true);
        Self { values, mask }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn num_regions(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_years(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_observed(&self, region: usize, year: usize) -> bool {
        self.mask[[region, year]]
    }

    pub fn get(&self, region: usize, year: usize) -> Option<f64> {
        self.mask[[region, year]].then(|| self.values[[region, year]])
    }

    /// Copy with the listed (region, year) entries masked out.
    pub fn with_hidden(&self, entries: &[(usize, usize)]) -> Self {
        let mut mask = self.mask.clone();
        for &(i, j) in entries {
            mask[[i, j]] = false;
        }
        Self {
            values: self.values.clone(),
            mask,
        }
    }

    /// The first `n` year columns.
    pub fn leading_years(&self, n: usize) -> Self {
        Self {
            values: self.values.slice(s![.., ..n]).to_owned(),
            mask: self.mask.slice(s![.., ..n]).to_owned(),
        }
    }

    /// Observed entries as (region, year) pairs, row-major.
    pub fn observed_entries(&self) -> Vec<(usize, usize)> {
        self.mask
            .indexed_iter()
            .filter(|(_, &m)| m)
            .map(|(ix, _)| ix)
            .collect()
    }

    pub fn observed_mean(&self) -> Option<f64> {
        mean_observed(self.values.iter().zip(self.mask.iter()))
    }

    pub fn row_mean(&self, region: usize) -> Option<f64> {
        mean_observed(self.values.row(region).iter().zip(self.mask.row(region).iter()))
    }

    pub fn column_mean(&self, year: usize) -> Option<f64> {
        mean_observed(self.values.column(year).iter().zip(self.mask.column(year).iter()))
    }
}

fn mean_observed<'a>(it: impl Iterator<Item = (&'a f64, &'a bool)>) -> Option<f64> {
    let (sum, n) = it
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Extracts the region x year plane of `disease`.
pub fn slice_disease(cube: &HealthCube, mask: &ObservationMask, disease: &str) -> Result<DiseaseMatrix, DataError> {
    let d = cube
        .disease_index(disease)
        .ok_or_else(|| DataError::UnknownDisease(disease.to_string()))?;
    slice_disease_index(cube, mask, d)
}

pub fn slice_disease_index(cube: &HealthCube, mask: &ObservationMask, disease: usize) -> Result<DiseaseMatrix, DataError> {
    if mask.shape() != cube.shape() {
        return Err(DataError::ShapeMismatch(format!(
            "mask is {:?} but cube is {:?}",
            mask.shape(),
            cube.shape()
        )));
    }
    if disease >= cube.num_diseases() {
        return Err(DataError::UnknownDisease(format!("#{disease}")));
    }
    Ok(DiseaseMatrix {
        values: cube.values.index_axis(Axis(1), disease).to_owned(),
        mask: mask.mask.index_axis(Axis(1), disease).to_owned(),
    })
}

/// Writes `matrix` back into the `disease` plane, returning new instances.
pub fn insert_disease(
    cube: &HealthCube,
    mask: &ObservationMask,
    disease: &str,
    matrix: &DiseaseMatrix,
) -> Result<(HealthCube, ObservationMask), DataError> {
    let d = cube
        .disease_index(disease)
        .ok_or_else(|| DataError::UnknownDisease(disease.to_string()))?;
    let expected = (cube.num_regions(), cube.num_years());
    if matrix.values.dim() != expected {
        return Err(DataError::ShapeMismatch(format!(
            "matrix is {:?} but cube plane is {:?}",
            matrix.values.dim(),
            expected
        )));
    }
    let mut values = cube.values.clone();
    values.index_axis_mut(Axis(1), d).assign(&matrix.values);
    let mut m = mask.mask.clone();
    m.index_axis_mut(Axis(1), d).assign(&matrix.mask);
    Ok((
        HealthCube {
            values,
            diseases: cube.diseases.clone(),
            years: cube.years.clone(),
        },
        ObservationMask::new(m),
    ))
}

/// One invariant violation found by [`validate_cube`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    RateOutOfRange {
        region: String,
        disease: String,
        year: i32,
        value: f64,
    },
    ShapeMismatch {
        detail: String,
    },
    DuplicateRegionId {
        id: String,
    },
    EmptyRegionId {
        index: usize,
    },
    CoordinateOutOfRange {
        region: String,
        lat: f64,
        lon: f64,
    },
    YearsNotIncreasing {
        previous: i32,
        next: i32,
    },
    DuplicateDisease {
        code: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RateOutOfRange {
                region,
                disease,
                year,
                value,
            } => write!(f, "rate out of range: {value} at ({region}, {disease}, {year})"),
            Violation::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            Violation::DuplicateRegionId { id } => write!(f, "duplicate region id `{id}`"),
            Violation::EmptyRegionId { index } => write!(f, "empty region id at index {index}"),
            Violation::CoordinateOutOfRange { region, lat, lon } => {
                write!(f, "coordinate out of range for `{region}`: ({lat}, {lon})")
            }
            Violation::YearsNotIncreasing { previous, next } => {
                write!(f, "years not strictly increasing: {previous} then {next}")
            }
            Violation::DuplicateDisease { code } => write!(f, "duplicate disease code `{code}`"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every cube and catalog invariant and lists what is broken.
///
/// With a mask, only observed entries are range-checked; without one, every
/// stored value that is not NaN is.
pub fn validate_cube(cube: &HealthCube, catalog: &RegionCatalog, mask: Option<&ObservationMask>) -> ValidationReport {
    let mut violations = catalog.violations();

    if cube.num_regions() != catalog.len() {
        violations.push(Violation::ShapeMismatch {
            detail: format!("cube has {} regions, catalog has {}", cube.num_regions(), catalog.len()),
        });
    }
    if let Some(m) = mask {
        if m.shape() != cube.shape() {
            violations.push(Violation::ShapeMismatch {
                detail: format!("mask is {:?} but cube is {:?}", m.shape(), cube.shape()),
            });
        }
    }
    for w in cube.years.windows(2) {
        if w[1] <= w[0] {
            violations.push(Violation::YearsNotIncreasing {
                previous: w[0],
                next: w[1],
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    for code in &cube.diseases {
        if !seen.insert(code) {
            violations.push(Violation::DuplicateDisease { code: code.clone() });
        }
    }

    let mask = mask.filter(|m| m.shape() == cube.shape());
    for ((r, d, t), &v) in cube.values.indexed_iter() {
        let present = match mask {
            Some(m) => m.is_observed(r, d, t),
            None => !v.is_nan(),
        };
        if present && !(0.0..=1.0).contains(&v) {
            let region = catalog
                .regions
                .get(r)
                .map(|x| x.id.clone())
                .unwrap_or_else(|| format!("#{r}"));
            violations.push(Violation::RateOutOfRange {
                region,
                disease: cube.diseases[d].clone(),
                year: cube.years[t],
                value: v,
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn catalog(n: usize) -> RegionCatalog {
        RegionCatalog::new(
            (0..n)
                .map(|i| Region::new(format!("R{i}"), format!("Region {i}"), 51.5, -0.1 + 0.01 * i as f64))
                .collect(),
        )
        .unwrap()
    }

    fn distinct_cube() -> (HealthCube, ObservationMask) {
        // 3 regions x 2 diseases x 2 years, value encodes its own index.
        let values = Array3::from_shape_fn((3, 2, 2), |(r, d, t)| (100 * r + 10 * d + t) as f64 / 1000.0);
        let cube = HealthCube::new(values, vec!["CHD".into(), "HYP".into()], vec![2009, 2010]).unwrap();
        let mask = ObservationMask::full(cube.shape());
        (cube, mask)
    }

    #[test]
    fn single_entry_slice() {
        let cube = HealthCube::new(Array3::from_elem((1, 1, 1), 0.031), vec!["CHD".into()], vec![2009]).unwrap();
        let mask = ObservationMask::full(cube.shape());
        let m = slice_disease(&cube, &mask, "CHD").unwrap();
        assert_eq!(m.values(), &ndarray::arr2(&[[0.031]]));
    }

    #[test]
    fn slice_matches_enumerated_plane() {
        let (cube, mask) = distinct_cube();
        let m = slice_disease(&cube, &mask, "HYP").unwrap();
        assert_eq!(m.values().dim(), (3, 2));
        for r in 0..3 {
            for t in 0..2 {
                let expected = (100 * r + 10 + t) as f64 / 1000.0;
                assert_eq!(m.values()[[r, t]], expected);
            }
        }
    }

    #[test]
    fn slice_then_insert_round_trips() {
        let (cube, _) = distinct_cube();
        let mut raw = Array3::from_elem(cube.shape(), true);
        raw[[1, 0, 1]] = false;
        raw[[2, 1, 0]] = false;
        let mask = ObservationMask::new(raw);

        let blank = HealthCube::new(Array3::zeros(cube.shape()), cube.diseases().to_vec(), cube.years().to_vec()).unwrap();
        let mut acc = (blank, ObservationMask::full(cube.shape()));
        for code in cube.diseases() {
            let m = slice_disease(&cube, &mask, code).unwrap();
            acc = insert_disease(&acc.0, &acc.1, code, &m).unwrap();
        }
        assert_eq!(acc.0, cube);
        assert_eq!(acc.1, mask);
    }

    #[test]
    fn unknown_disease_is_rejected() {
        let (cube, mask) = distinct_cube();
        assert_eq!(
            slice_disease(&cube, &mask, "XYZ").unwrap_err(),
            DataError::UnknownDisease("XYZ".into())
        );
    }

    #[test]
    fn mask_counts_track_edits() {
        let mask = ObservationMask::full((4, 2, 3));
        assert_eq!(mask.observed_count(1, 2), 4);
        let hidden = mask.with_hidden([Cell::new(0, 1, 2), Cell::new(3, 1, 2), Cell::new(3, 1, 2)]);
        assert_eq!(hidden.observed_count(1, 2), 2);
        assert_eq!(hidden.observed_count(0, 2), 4);
        let back = hidden.with_revealed([Cell::new(0, 1, 2)]);
        assert_eq!(back.observed_count(1, 2), 3);
        assert_eq!(back, ObservationMask::new(back.as_array().clone()));
    }

    #[test]
    fn constructors_reject_shape_mismatch() {
        assert!(HealthCube::new(Array3::zeros((2, 2, 2)), vec!["A".into()], vec![2009, 2010]).is_err());
        let (cube, _) = distinct_cube();
        assert!(ObservationMask::for_cube(&cube, Array3::from_elem((3, 2, 1), true)).is_err());
        assert!(DiseaseMatrix::new(Array2::zeros((2, 2)), Array2::from_elem((2, 3), true)).is_err());
    }

    #[test]
    fn well_formed_cube_validates_clean() {
        let (cube, mask) = distinct_cube();
        assert!(validate_cube(&cube, &catalog(3), Some(&mask)).is_empty());
        assert!(validate_cube(&cube, &catalog(3), None).is_empty());
    }

    #[test]
    fn out_of_range_rate_is_named() {
        let (cube, mask) = distinct_cube();
        let bad = cube.with_entries([(Cell::new(1, 0, 1), 1.5)]);
        let report = validate_cube(&bad, &catalog(3), Some(&mask));
        assert_eq!(
            report.violations,
            vec![Violation::RateOutOfRange {
                region: "R1".into(),
                disease: "CHD".into(),
                year: 2010,
                value: 1.5
            }]
        );
        // The same value behind a false mask bit is never read.
        let hidden = mask.with_hidden([Cell::new(1, 0, 1)]);
        assert!(validate_cube(&bad, &catalog(3), Some(&hidden)).is_empty());
    }

    #[test]
    fn repeated_year_is_reported() {
        let cube = HealthCube::new(Array3::from_elem((1, 1, 2), 0.1), vec!["CHD".into()], vec![2009, 2009]).unwrap();
        let report = validate_cube(&cube, &catalog(1), None);
        assert_eq!(
            report.violations,
            vec![Violation::YearsNotIncreasing {
                previous: 2009,
                next: 2009
            }]
        );
    }

    #[test]
    fn catalog_invariants() {
        let dup = vec![Region::new("A", "a", 0.0, 0.0), Region::new("A", "b", 1.0, 1.0)];
        assert!(RegionCatalog::new(dup.clone()).is_err());
        let cube = HealthCube::new(Array3::from_elem((2, 1, 1), 0.1), vec!["CHD".into()], vec![2009]).unwrap();
        let report = validate_cube(&cube, &RegionCatalog::new_unchecked(dup), None);
        assert_eq!(report.violations, vec![Violation::DuplicateRegionId { id: "A".into() }]);
        assert!(RegionCatalog::new(vec![Region::new("A", "a", 91.0, 0.0)]).is_err());
        assert!(RegionCatalog::new(vec![Region::new("", "a", 0.0, 0.0)]).is_err());
        assert_eq!(catalog(3).index_of("R2"), Some(2));
    }
}
