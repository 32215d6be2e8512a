//! Long-format CSV ingest and export.
//!
//! `regions.csv`: `region_id,name,lat,lon`.
//! `morbidity.csv`: `region_id,disease,year,rate`, one row per observed
//! entry; a missing row means the entry is unobserved.
//!
//! Regions keep file order. Diseases are sorted by code and years ascend.
//! Numbers are written in their shortest exact form, so export followed by
//! ingest reproduces the data bit for bit.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;

use super::IoError;
use crate::data::{HealthCube, ObservationMask, Region, RegionCatalog};

pub const REGIONS_FILE: &str = "regions.csv";
pub const MORBIDITY_FILE: &str = "morbidity.csv";
const REGION_HEADER: [&str; 4] = ["region_id", "name", "lat", "lon"];
const MORBIDITY_HEADER: [&str; 4] = ["region_id", "disease", "year", "rate"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cube: HealthCube,
    pub mask: ObservationMask,
    pub catalog: RegionCatalog,
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|e| IoError::io(path, e))
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|e| IoError::io(path, e))
}

fn reader<R: Read>(r: R, file: &str, header: &[&str]) -> Result<csv::Reader<R>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let found = rdr.headers().map_err(|e| IoError::csv(file, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(IoError::Parse {
            file: file.into(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, file: &str, line: u64) -> Result<T, IoError> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| IoError::Parse {
        file: file.into(),
        line,
        message: format!("cannot parse {name} `{raw}`"),
    })
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn read_regions_from<R: Read>(r: R, file: &str) -> Result<RegionCatalog, IoError> {
    let mut rdr = reader(r, file, &REGION_HEADER)?;
    let mut regions = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::csv(file, e))?;
        let line = line_of(&rec);
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(IoError::Parse {
                file: file.into(),
                line,
                message: "empty region_id".into(),
            });
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(IoError::Duplicate {
                file: file.into(),
                line,
                key: format!("region `{id}` (first on line {first})"),
            });
        }
        let lat: f64 = field(&rec, 2, "lat", file, line)?;
        let lon: f64 = field(&rec, 3, "lon", file, line)?;
        if !((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)) {
            return Err(IoError::Parse {
                file: file.into(),
                line,
                message: format!("coordinate ({lat}, {lon}) out of range"),
            });
        }
        regions.push(Region::new(id, rec.get(1).unwrap_or(""), lat, lon));
    }
    RegionCatalog::new(regions).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn read_morbidity_from<R: Read>(r: R, file: &str, catalog: &RegionCatalog) -> Result<(HealthCube, ObservationMask), IoError> {
    let mut rdr = reader(r, file, &MORBIDITY_HEADER)?;
    let mut rows = Vec::new();
    let mut seen: HashMap<(usize, String, i32), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::csv(file, e))?;
        let line = line_of(&rec);
        let id = rec.get(0).unwrap_or("");
        let region = catalog.index_of(id).ok_or_else(|| IoError::UnknownRegion {
            file: file.into(),
            line,
            id: id.to_string(),
        })?;
        let disease = rec.get(1).unwrap_or("").to_string();
        if disease.is_empty() {
            return Err(IoError::Parse {
                file: file.into(),
                line,
                message: "empty disease".into(),
            });
        }
        let year_raw = rec.get(2).unwrap_or("");
        let year: i32 = field(&rec, 2, "year", file, line)?;
        if year_raw.len() != 4 || !(1000..=9999).contains(&year) {
            return Err(IoError::Parse {
                file: file.into(),
                line,
                message: format!("year `{year_raw}` is not a 4-digit year"),
            });
        }
        let rate: f64 = field(&rec, 3, "rate", file, line)?;
        if !(0.0..=1.0).contains(&rate) {
            return Err(IoError::Parse {
                file: file.into(),
                line,
                message: format!("rate {rate} outside [0, 1]"),
            });
        }
        if let Some(first) = seen.insert((region, disease.clone(), year), line) {
            return Err(IoError::Duplicate {
                file: file.into(),
                line,
                key: format!("({id}, {disease}, {year}) (first on line {first})"),
            });
        }
        rows.push((region, disease, year, rate));
    }

    let diseases: Vec<String> = rows.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let years: Vec<i32> = rows.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
    let d_index: BTreeMap<&str, usize> = diseases.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let y_index: BTreeMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();
    let shape = (catalog.len(), diseases.len(), years.len());
    let mut values = Array3::from_elem(shape, f64::NAN);
    let mut mask = Array3::from_elem(shape, false);
    for (r, d, y, rate) in &rows {
        let ix = [*r, d_index[d.as_str()], y_index[y]];
        values[ix] = *rate;
        mask[ix] = true;
    }
    let cube = HealthCube::new(values, diseases, years).map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok((cube, ObservationMask::new(mask)))
}

pub fn read_regions(path: &Path) -> Result<RegionCatalog, IoError> {
    read_regions_from(open(path)?, &path.display().to_string())
}

pub fn ingest(regions_path: &Path, morbidity_path: &Path) -> Result<Dataset, IoError> {
    let catalog = read_regions(regions_path)?;
    let (cube, mask) = read_morbidity_from(open(morbidity_path)?, &morbidity_path.display().to_string(), &catalog)?;
    Ok(Dataset { cube, mask, catalog })
}

/// Reads `regions.csv` and `morbidity.csv` from `dir`.
pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    ingest(&dir.join(REGIONS_FILE), &dir.join(MORBIDITY_FILE))
}

pub fn write_regions_to<W: Write>(w: W, catalog: &RegionCatalog) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(REGION_HEADER).map_err(|e| IoError::csv("regions", e))?;
    for r in catalog.regions() {
        wtr.write_record([r.id.as_str(), r.name.as_str(), &r.lat.to_string(), &r.lon.to_string()])
            .map_err(|e| IoError::csv("regions", e))?;
    }
    wtr.flush().map_err(|e| IoError::io(Path::new("regions"), e))
}

/// Observed entries in (region, disease, year) order.
pub fn write_morbidity_to<W: Write>(w: W, cube: &HealthCube, mask: &ObservationMask, catalog: &RegionCatalog) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(MORBIDITY_HEADER).map_err(|e| IoError::csv("morbidity", e))?;
    for ((r, d, t), &v) in cube.values().indexed_iter() {
        if mask.is_observed(r, d, t) {
            wtr.write_record([
                catalog.region(r).id.as_str(),
                cube.diseases()[d].as_str(),
                &cube.years()[t].to_string(),
                &v.to_string(),
            ])
            .map_err(|e| IoError::csv("morbidity", e))?;
        }
    }
    wtr.flush().map_err(|e| IoError::io(Path::new("morbidity"), e))
}

/// Writes `regions.csv` and `morbidity.csv` into `dir`, creating it if
/// needed.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    write_regions_to(create(&dir.join(REGIONS_FILE))?, &dataset.catalog)?;
    write_morbidity_to(create(&dir.join(MORBIDITY_FILE))?, &dataset.cube, &dataset.mask, &dataset.catalog)
}
