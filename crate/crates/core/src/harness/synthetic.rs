//! Synthetic morbidity cubes with spatially smooth, temporally persistent
//! structure.
//!
//! For disease `d`, region `r` and year `t`:
//!
//! ```text
//! x = base_d + amp_d * S_d(r, t) + trend * base_d * g_d(t) + sigma * noise
//! S_d(r, t) = (sum_k c_dk(t) * phi_k(r) - mu_d) / sd_d
//! c_dk(t) = a_dk * (1 + drift * z_k(t)),   z_k AR(1) with persistence rho
//! phi_k(r) = exp(-dist(r, center_k)^2 / (2 * length_scale^2))
//! ```
//!
//! `z_k` and the per-disease year effect `g_d` are unit-variance AR(1)
//! processes with persistence `rho`.
//!
//! `mu_d` and `sd_d` standardize the time-invariant part `sum_k a_dk phi_k`
//! across regions, so `amp_d` is the spatial standard deviation. Values are
//! clamped to `[0, 1]` and every entry is observed.

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{HealthCube, ObservationMask, Region, RegionCatalog};
use crate::geo::{great_circle_km, GeoPoint};

const ORIGIN: (f64, f64) = (51.5, -0.12);
const KM_PER_DEGREE: f64 = 111.195;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub regions: usize,
    pub diseases: usize,
    pub years: usize,
    pub start_year: i32,
    pub length_scale_km: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Relative size of the year-to-year change in kernel loadings.
    pub drift: f64,
    /// Standard deviation of the per-disease year effect, relative to the
    /// base rate.
    pub trend: f64,
    /// Per-disease base rates; `None` spreads them evenly over 0.02..0.15.
    pub base_rates: Option<Vec<f64>>,
    /// Per-disease spatial standard deviations; `None` uses 0.3 x base rate.
    pub amplitudes: Option<Vec<f64>>,
    pub kernels: usize,
    pub box_km: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            regions: 100,
            diseases: 5,
            years: 10,
            start_year: 2009,
            length_scale_km: 10.0,
            rho: 0.9,
            sigma: 0.002,
            drift: 0.2,
            trend: 0.1,
            base_rates: None,
            amplitudes: None,
            kernels: 6,
            box_km: 50.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn base_rates(&self) -> Vec<f64> {
        self.base_rates.clone().unwrap_or_else(|| {
            if self.diseases == 1 {
                vec![0.02]
            } else {
                (0..self.diseases).map(|d| 0.02 + 0.13 * d as f64 / (self.diseases - 1) as f64).collect()
            }
        })
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.amplitudes
            .clone()
            .unwrap_or_else(|| self.base_rates().iter().map(|b| 0.3 * b).collect())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.regions == 0 || self.diseases == 0 || self.years == 0 {
            return Err("regions, diseases and years must all be positive".into());
        }
        if !(self.length_scale_km > 0.0) || !(self.box_km > 0.0) {
            return Err("length scale and box size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(format!("rho must be in [0, 1), got {}", self.rho));
        }
        if !(self.sigma >= 0.0) || !(self.drift >= 0.0) || !(self.trend >= 0.0) {
            return Err("sigma, drift and trend must be non-negative".into());
        }
        if self.kernels == 0 {
            return Err("at least one kernel is needed".into());
        }
        for (name, v) in [("base_rates", self.base_rates()), ("amplitudes", self.amplitudes())] {
            if v.len() != self.diseases {
                return Err(format!("{name} has {} entries for {} diseases", v.len(), self.diseases));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub cube: HealthCube,
    pub mask: ObservationMask,
    pub catalog: RegionCatalog,
    pub warnings: Vec<String>,
}

/// Offset in km from the box's south-west corner to a coordinate.
fn place(x_km: f64, y_km: f64, box_km: f64) -> GeoPoint {
    let lat = ORIGIN.0 + (y_km - box_km / 2.0) / KM_PER_DEGREE;
    let lon = ORIGIN.1 + (x_km - box_km / 2.0) / (KM_PER_DEGREE * ORIGIN.0.to_radians().cos());
    GeoPoint::new(lat, lon)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, String> {
    spec.validate()?;
    let (n, d, t, k) = (spec.regions, spec.diseases, spec.years, spec.kernels);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let uniform_point = |rng: &mut ChaCha8Rng| place(rng.gen_range(0.0..spec.box_km), rng.gen_range(0.0..spec.box_km), spec.box_km);

    let points: Vec<GeoPoint> = (0..n).map(|_| uniform_point(&mut rng)).collect();
    let centers: Vec<GeoPoint> = (0..k).map(|_| uniform_point(&mut rng)).collect();
    let two_l2 = 2.0 * spec.length_scale_km * spec.length_scale_km;
    let phi: Vec<Vec<f64>> = points
        .iter()
        .map(|&p| {
            centers
                .iter()
                .map(|&c| {
                    let dist = great_circle_km(p, c).expect("generated coordinates are valid");
                    (-dist * dist / two_l2).exp()
                })
                .collect()
        })
        .collect();
    let loadings: Vec<Vec<f64>> = (0..d).map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();

    let innovation = (1.0 - spec.rho * spec.rho).sqrt();
    let ar1 = |width: usize, rng: &mut ChaCha8Rng| {
        let mut z: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
        let mut by_year = Vec::with_capacity(t);
        for year in 0..t {
            if year > 0 {
                for zk in z.iter_mut() {
                    *zk = spec.rho * *zk + innovation * rng.sample::<f64, _>(StandardNormal);
                }
            }
            by_year.push(z.clone());
        }
        by_year
    };
    let z_by_year = ar1(k, &mut rng);
    let g_by_year = ar1(d, &mut rng);

    let base = spec.base_rates();
    let amp = spec.amplitudes();
    let mut values = Array3::zeros((n, d, t));
    let mut clamped = 0usize;
    for dis in 0..d {
        let static_part: Vec<f64> = (0..n).map(|r| (0..k).map(|j| loadings[dis][j] * phi[r][j]).sum()).collect();
        let mu = static_part.iter().sum::<f64>() / n as f64;
        let var = static_part.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (year, zy) in z_by_year.iter().enumerate() {
            for r in 0..n {
                let field: f64 = (0..k).map(|j| loadings[dis][j] * (1.0 + spec.drift * zy[j]) * phi[r][j]).sum();
                let noise: f64 = rng.sample(StandardNormal);
                let trend = spec.trend * base[dis] * g_by_year[year][dis];
                let x = base[dis] + amp[dis] * (field - mu) / sd + trend + spec.sigma * noise;
                let c = x.clamp(0.0, 1.0);
                if c != x {
                    clamped += 1;
                }
                values[[r, dis, year]] = c;
            }
        }
    }

    let mut warnings = Vec::new();
    if clamped > 0 {
        warnings.push(format!("clamped {clamped} of {} values to [0, 1]", n * d * t));
    }
    if clamped == n * d * t {
        warnings.push("DegenerateSynthetic: every generated value was clamped".into());
    }

    let regions = points
        .iter()
        .enumerate()
        .map(|(i, p)| Region::new(format!("R{:04}", i + 1), format!("Region {}", i + 1), p.lat, p.lon))
        .collect();
    let catalog = RegionCatalog::new(regions).map_err(|e| e.to_string())?;
    let diseases = (0..d).map(|i| format!("D{}", i + 1)).collect();
    let years = (0..t as i32).map(|y| spec.start_year + y).collect();
    let cube = HealthCube::new(values, diseases, years).map_err(|e| e.to_string())?;
    let mask = ObservationMask::full(cube.shape());
    Ok(SyntheticData {
        cube,
        mask,
        catalog,
        warnings,
    })
}
