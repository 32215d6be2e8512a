//! Inter-region distances, distance-binned pair groups and nearest-neighbor
//! orderings.
//!
//! Distances are great-circle kilometers on a sphere of radius
//! [`EARTH_RADIUS_KM`]. "Adjacent regions" everywhere in the crate means the
//! nearest regions under this distance, ties broken by region index.

use ndarray::Array2;
use thiserror::Error;

use crate::data::RegionCatalog;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("need at least 2 regions, got {0}")]
    InsufficientRegions(usize),
    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    fn check(self) -> Result<Self, GeoError> {
        if (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon) {
            Ok(self)
        } else {
            Err(GeoError::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

/// Haversine distance in kilometers.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    let (a, b) = (a.check()?, b.check()?);
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.min(1.0).sqrt().asin())
}

/// Symmetric region x region distance matrix in kilometers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    dist: Array2<f64>,
}

impl DistanceMatrix {
    pub fn from_catalog(catalog: &RegionCatalog) -> Result<Self, GeoError> {
        let n = catalog.len();
        let points: Vec<GeoPoint> = catalog
            .regions()
            .iter()
            .map(|r| GeoPoint::new(r.lat, r.lon).check())
            .collect::<Result<_, _>>()?;
        let mut dist = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..i {
                let d = great_circle_km(points[i], points[j])?;
                dist[[i, j]] = d;
                dist[[j, i]] = d;
            }
        }
        Ok(Self { dist })
    }

    /// Wraps a precomputed matrix after checking squareness, symmetry, zero
    /// diagonal and non-negativity.
    pub fn from_raw(dist: Array2<f64>) -> Result<Self, GeoError> {
        let (n, m) = dist.dim();
        if n != m {
            return Err(GeoError::InvalidDistances(format!("not square: {n}x{m}")));
        }
        for i in 0..n {
            if dist[[i, i]] != 0.0 {
                return Err(GeoError::InvalidDistances(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let d = dist[[i, j]];
                if !(d.is_finite() && d >= 0.0) || d != dist[[j, i]] {
                    return Err(GeoError::InvalidDistances(format!("bad entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dist })
    }

    pub fn len(&self) -> usize {
        self.dist.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dist[[i, j]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.dist
    }
}

/// Region pairs `(i, j)` with `i > j`, binned by distance into half-open
/// intervals `[k * bin_width, (k + 1) * bin_width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGroupSet {
    groups: Vec<Vec<(usize, usize)>>,
    bin_width: f64,
    dropped: usize,
}

impl PairGroupSet {
    pub fn from_distances(dist: &DistanceMatrix, bin_width: f64, num_groups: usize) -> Result<Self, GeoError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(GeoError::InvalidBinning(format!("bin width must be positive, got {bin_width}")));
        }
        if num_groups == 0 {
            return Err(GeoError::InvalidBinning("need at least one group".into()));
        }
        let n = dist.len();
        if n < 2 {
            return Err(GeoError::InsufficientRegions(n));
        }
        let mut groups = vec![Vec::new(); num_groups];
        let mut dropped = 0;
        for i in 1..n {
            for j in 0..i {
                let bin = (dist.get(i, j) / bin_width).floor();
                if bin < num_groups as f64 {
                    groups[bin as usize].push((i, j));
                } else {
                    dropped += 1;
                }
            }
        }
        Ok(Self {
            groups,
            bin_width,
            dropped,
        })
    }

    pub fn groups(&self) -> &[Vec<(usize, usize)>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    /// Pairs at or beyond `num_groups * bin_width`.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Upper edge of group `g` (0-based) in kilometers.
    pub fn upper_km(&self, g: usize) -> f64 {
        (g + 1) as f64 * self.bin_width
    }

    pub fn total_pairs(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Bins all region pairs of `catalog`. The usual London setting is 1 km bins
/// and 53 groups.
pub fn build_pair_groups(catalog: &RegionCatalog, bin_width: f64, num_groups: usize) -> Result<PairGroupSet, GeoError> {
    if catalog.len() < 2 {
        return Err(GeoError::InsufficientRegions(catalog.len()));
    }
    PairGroupSet::from_distances(&DistanceMatrix::from_catalog(catalog)?, bin_width, num_groups)
}

/// For every region, all other regions sorted by ascending distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborOrder {
    lists: Vec<Vec<usize>>,
}

impl NeighborOrder {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, region: usize) -> &[usize] {
        &self.lists[region]
    }

    /// The `k` nearest neighbors of `region` (fewer if the catalog is small).
    pub fn nearest(&self, region: usize, k: usize) -> &[usize] {
        let list = &self.lists[region];
        &list[..k.min(list.len())]
    }
}

pub fn nearest_neighbors(dist: &DistanceMatrix) -> NeighborOrder {
    let n = dist.len();
    let lists = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist.get(i, a).total_cmp(&dist.get(i, b)).then(a.cmp(&b)));
            others
        })
        .collect();
    NeighborOrder { lists }
}
