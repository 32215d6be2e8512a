//! Result files: predictions, correlation tables, selections and reports.

use std::io::{Read, Write};
use std::path::Path;

use super::{format_float, IoError};
use crate::completion::Prediction;
use crate::correlation::{min_max_normalize, Indicator, SpatialCorrelationProfile, TemporalCorrelationGrid};
use crate::data::{Cell, HealthCube, RegionCatalog};
use crate::harness::{ExperimentRecord, ExperimentReport};
use crate::selection::SelectionResult;

fn opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>, IoError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header).map_err(|e| IoError::csv("output", e))?;
    Ok(wtr)
}

fn row<W: Write, I, S>(wtr: &mut csv::Writer<W>, fields: I) -> Result<(), IoError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    wtr.write_record(fields).map_err(|e| IoError::csv("output", e))
}

fn done<W: Write>(mut wtr: csv::Writer<W>) -> Result<(), IoError> {
    wtr.flush().map_err(|e| IoError::io(Path::new("output"), e))
}

/// `region_id,disease,year,predicted`, in (region, disease, year) order.
pub fn write_predictions<W: Write>(w: W, prediction: &Prediction, cube: &HealthCube, catalog: &RegionCatalog) -> Result<(), IoError> {
    let mut wtr = writer(w, &["region_id", "disease", "year", "predicted"])?;
    for e in &prediction.entries {
        let c = e.cell;
        row(
            &mut wtr,
            [
                catalog.region(c.region).id.clone(),
                cube.diseases()[c.disease].clone(),
                cube.years()[c.year].to_string(),
                format_float(e.value),
            ],
        )?;
    }
    done(wtr)
}

/// `group_km,indicator,value,pair_count`, one row per group and indicator.
/// With `normalize`, each indicator is min-max scaled over the groups.
pub fn write_spatial_profile<W: Write>(w: W, profile: &SpatialCorrelationProfile, normalize: bool) -> Result<(), IoError> {
    let columns: Vec<Vec<Option<f64>>> = Indicator::ALL
        .iter()
        .map(|&ind| {
            let raw: Vec<Option<f64>> = profile.groups.iter().map(|g| g.value(ind)).collect();
            if normalize {
                min_max_normalize(&raw)
            } else {
                raw
            }
        })
        .collect();
    let mut wtr = writer(w, &["group_km", "indicator", "value", "pair_count"])?;
    for (g, group) in profile.groups.iter().enumerate() {
        for (k, ind) in Indicator::ALL.iter().enumerate() {
            row(
                &mut wtr,
                [
                    format_float(group.upper_km),
                    ind.as_str().to_string(),
                    opt(columns[k][g]),
                    group.pair_count.to_string(),
                ],
            )?;
        }
    }
    done(wtr)
}

/// `year_a,year_b,indicator,value` over every ordered year pair.
pub fn write_temporal_grid<W: Write>(w: W, grid: &TemporalCorrelationGrid, years: &[i32], normalize: bool) -> Result<(), IoError> {
    if years.len() != grid.years {
        return Err(IoError::Invalid(format!("{} year labels for a {}-year grid", years.len(), grid.years)));
    }
    let tables: Vec<Vec<Option<f64>>> = Indicator::ALL
        .iter()
        .map(|&ind| {
            let raw: Vec<Option<f64>> = grid.grid(ind).iter().copied().collect();
            if normalize {
                min_max_normalize(&raw)
            } else {
                raw
            }
        })
        .collect();
    let mut wtr = writer(w, &["year_a", "year_b", "indicator", "value"])?;
    for a in 0..grid.years {
        for b in 0..grid.years {
            for (k, ind) in Indicator::ALL.iter().enumerate() {
                row(
                    &mut wtr,
                    [years[a].to_string(), years[b].to_string(), ind.as_str().to_string(), opt(tables[k][a * grid.years + b])],
                )?;
            }
        }
    }
    done(wtr)
}

/// `region_id,score` for the selected regions, in region order.
pub fn write_selection<W: Write>(w: W, selection: &SelectionResult, catalog: &RegionCatalog) -> Result<(), IoError> {
    let mut wtr = writer(w, &["region_id", "score"])?;
    for &i in &selection.selected {
        row(&mut wtr, [catalog.region(i).id.clone(), format_float(selection.scores[i])])?;
    }
    done(wtr)
}

const REPORT_HEADER: [&str; 10] = [
    "selection_method",
    "completer",
    "proportion",
    "seed",
    "target_year",
    "disease",
    "rmse",
    "mae",
    "n_scored",
    "flags",
];

fn record_row(r: &ExperimentRecord) -> [String; 10] {
    [
        r.selection_method.to_string(),
        r.completer.clone(),
        format_float(r.proportion),
        r.seed.to_string(),
        r.target_year.to_string(),
        r.disease.clone(),
        opt(r.rmse),
        opt(r.mae),
        r.n_scored.to_string(),
        r.flags.join(";"),
    ]
}

/// Pooled records first, then the per-disease breakdown. Flags are joined
/// with `;`.
pub fn write_report_csv<W: Write>(w: W, report: &ExperimentReport) -> Result<(), IoError> {
    let mut wtr = writer(w, &REPORT_HEADER)?;
    for r in report.records.iter().chain(&report.disease_records) {
        row(&mut wtr, record_row(r))?;
    }
    done(wtr)
}

pub fn write_report_json<W: Write>(mut w: W, report: &ExperimentReport) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| IoError::Invalid(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| IoError::io(Path::new("output"), e))
}

/// Target cells from a `region_id,disease,year` CSV.
pub fn read_targets_from<R: Read>(r: R, file: &str, cube: &HealthCube, catalog: &RegionCatalog) -> Result<Vec<Cell>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| IoError::csv(file, e))?.clone();
    if header.iter().ne(["region_id", "disease", "year"]) {
        return Err(IoError::Parse {
            file: file.into(),
            line: 1,
            message: "expected header `region_id,disease,year`".into(),
        });
    }
    let mut cells = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IoError::csv(file, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = &rec[0];
        let region = catalog.index_of(id).ok_or_else(|| IoError::UnknownRegion {
            file: file.into(),
            line,
            id: id.to_string(),
        })?;
        let bad = |m: String| IoError::Parse {
            file: file.into(),
            line,
            message: m,
        };
        let disease = cube.disease_index(&rec[1]).ok_or_else(|| bad(format!("unknown disease `{}`", &rec[1])))?;
        let year = rec[2]
            .parse()
            .ok()
            .and_then(|y| cube.year_index(y))
            .ok_or_else(|| bad(format!("unknown year `{}`", &rec[2])))?;
        cells.push(Cell::new(region, disease, year));
    }
    Ok(cells)
}

pub fn read_targets(path: &Path, cube: &HealthCube, catalog: &RegionCatalog) -> Result<Vec<Cell>, IoError> {
    let f = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    read_targets_from(f, &path.display().to_string(), cube, catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completion::{PredictedEntry, Source};
    use crate::data::Region;
    use crate::selection::SelectionMethod;
    use ndarray::Array3;

    fn fixture() -> (HealthCube, RegionCatalog) {
        let cube = HealthCube::new(Array3::zeros((2, 1, 2)), vec!["DM".into()], vec![2014, 2015]).unwrap();
        let catalog = RegionCatalog::new(vec![Region::new("W1", "a", 51.0, 0.0), Region::new("W2", "b", 51.1, 0.0)]).unwrap();
        (cube, catalog)
    }

    #[test]
    fn prediction_rows() {
        let (cube, catalog) = fixture();
        let p = Prediction {
            entries: vec![PredictedEntry {
                cell: Cell::new(1, 0, 1),
                value: 0.0412,
                source: Source::Model,
            }],
            notes: vec![],
        };
        let mut out = Vec::new();
        write_predictions(&mut out, &p, &cube, &catalog).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "region_id,disease,year,predicted\nW2,DM,2015,0.0412\n");
    }

    #[test]
    fn selection_rows() {
        let (_, catalog) = fixture();
        let s = SelectionResult {
            selected: vec![1],
            scores: vec![0.1, 0.25],
            method: SelectionMethod::Rmdc,
            proportion: 0.5,
            flags: vec![],
        };
        let mut out = Vec::new();
        write_selection(&mut out, &s, &catalog).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "region_id,score\nW2,0.25\n");
    }

    #[test]
    fn targets_parse_and_reject_unknowns() {
        let (cube, catalog) = fixture();
        let cells = read_targets_from("region_id,disease,year\nW2,DM,2015\nW1,DM,2014\n".as_bytes(), "t", &cube, &catalog).unwrap();
        assert_eq!(cells, vec![Cell::new(1, 0, 1), Cell::new(0, 0, 0)]);
        let err = read_targets_from("region_id,disease,year\nW1,XX,2015\n".as_bytes(), "t", &cube, &catalog).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
