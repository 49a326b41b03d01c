//! Columnar CSV persistence for residual collections.
//!
//! Columns: `eps, series_id, j, t, h, forecast, observed, extra.<name>…`.
//! The provenance lives in a JSON sidecar named `provenance.json`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{MetaVector, Provenance, ResidualCollection, ResidualRecord};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FIXED: [&str; 7] = ["eps", "series_id", "j", "t", "h", "forecast", "observed"];

pub fn write_residuals_csv<T: Scalar, W: std::io::Write>(coll: &ResidualCollection<T>, writer: W) -> Result<()> {
    let extras = coll.extra_names();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(extras.iter().map(|n| format!("extra.{n}")));
    w.write_record(&header)?;
    for r in coll.records() {
        let m = &r.meta;
        let mut row = vec![
            r.eps.to_string(),
            m.series_id.clone(),
            m.split_point.to_string(),
            m.target_time.to_string(),
            m.horizon.to_string(),
            m.forecast.to_string(),
            m.observed.to_string(),
        ];
        row.extend(extras.iter().map(|n| m.extra.get(n).map(ToString::to_string).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<residual writer>", e))?;
    Ok(())
}

pub fn read_residuals_csv<T: Scalar, R: std::io::Read>(reader: R) -> Result<Vec<ResidualRecord<T>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = FIXED
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Schema(format!("residual file missing column {name:?}")))
        })
        .collect::<Result<_>>()?;
    let extras: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("extra.").map(|n| (i, n.to_string())))
        .collect();

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<T> {
            rec[i].parse().map_err(|_| Error::Parse { row, message: format!("{:?} is not a number", &rec[i]) })
        };
        let int = |i: usize| -> Result<i64> {
            rec[i].parse().map_err(|_| Error::Parse { row, message: format!("{:?} is not an integer", &rec[i]) })
        };
        let mut extra = BTreeMap::new();
        for (i, name) in &extras {
            if !rec[*i].is_empty() {
                extra.insert(name.clone(), num(*i)?);
            }
        }
        let horizon = int(idx[4])?;
        if horizon < 1 {
            return Err(Error::Parse { row, message: format!("horizon {horizon} must be >= 1") });
        }
        out.push(ResidualRecord {
            eps: num(idx[0])?,
            meta: MetaVector {
                series_id: rec[idx[1]].to_string(),
                split_point: int(idx[2])?,
                target_time: int(idx[3])?,
                horizon: horizon as usize,
                forecast: num(idx[5])?,
                observed: num(idx[6])?,
                extra,
            },
        });
    }
    Ok(out)
}

/// Writes `residuals.csv` and `provenance.json` into `dir`.
pub fn save_collection<T: Scalar>(coll: &ResidualCollection<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("residuals.csv");
    let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_residuals_csv(coll, f)?;
    let prov_path = dir.join("provenance.json");
    let json = serde_json::to_string_pretty(coll.provenance())?;
    std::fs::write(&prov_path, json).map_err(|e| Error::io(&prov_path, e))?;
    Ok(())
}

/// Reads a residual CSV; provenance is taken from a sibling
/// `provenance.json` when present.
pub fn load_collection<T: Scalar>(csv_path: impl AsRef<Path>) -> Result<ResidualCollection<T>> {
    let csv_path = csv_path.as_ref();
    let f = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let records = read_residuals_csv(f)?;
    let prov_path = csv_path.with_file_name("provenance.json");
    let provenance = match std::fs::read_to_string(&prov_path) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => Provenance::manual(format!("loaded from {}", csv_path.display())),
    };
    Ok(ResidualCollection::new(records, provenance))
}
