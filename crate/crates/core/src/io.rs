//! CSV and JSON file formats shared by the CLI and the demos.
//!
//! CSV is the single tabular format: one header row, `.` decimal point,
//! UTF-8, LF line endings. Floats are written with Rust's shortest
//! round-trip formatting, so emitted files are byte-stable across reruns
//! and parse back to identical values.

use crate::error::{Error, Result};
use crate::geom::LocationSet;
use crate::kriging::Observations;
use crate::variogram::VariogramModel;
use nalgebra::DVector;
use std::fmt::Write as _;
use std::path::Path;

/// Render a numeric table as CSV text.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{v}");
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Write a numeric CSV file.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, csv_string(header, rows))?;
    Ok(())
}

/// Read a numeric CSV file back as (header, rows).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_csv(text: &str) -> std::result::Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or("empty CSV file")?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("row {}: cannot parse \"{tok}\" as a number", i + 2))
            })
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        if row.len() != header.len() {
            return Err(format!(
                "row {} has {} fields, header has {}",
                i + 2,
                row.len(),
                header.len()
            ));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Locations CSV: every column is a coordinate.
pub fn read_locations(path: &Path) -> Result<LocationSet> {
    let (_, rows) = read_csv(path)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: no locations", path.display())));
    }
    LocationSet::from_rows(rows).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Observations CSV: coordinate columns followed by a final value column.
pub fn read_observations(path: &Path) -> Result<Observations> {
    let (header, rows) = read_csv(path)?;
    if header.len() < 2 {
        return Err(Error::Config(format!(
            "{}: observations need at least one coordinate column and a value column",
            path.display()
        )));
    }
    let coord_cols = header.len() - 1;
    let mut coords = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for row in &rows {
        coords.push(row[..coord_cols].to_vec());
        values.push(row[coord_cols]);
    }
    let locs = LocationSet::from_rows(coords)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Observations::new(locs, DVector::from_vec(values))
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Write locations (+ optional values) with `x`/`x,y` style headers.
pub fn write_observations(path: &Path, obs: &Observations) -> Result<()> {
    let dim = obs.locs().dim();
    let mut header: Vec<&str> = coord_headers(dim)?;
    header.push("y");
    let rows: Vec<Vec<f64>> = obs
        .locs()
        .iter()
        .zip(obs.y().iter())
        .map(|(p, &v)| {
            let mut r = p.coords().to_vec();
            r.push(v);
            r
        })
        .collect();
    write_csv(path, &header, &rows)
}

pub(crate) fn coord_headers(dim: usize) -> Result<Vec<&'static str>> {
    match dim {
        1 => Ok(vec!["x"]),
        2 => Ok(vec!["x", "y_coord"]),
        3 => Ok(vec!["x", "y_coord", "z_coord"]),
        _ => Err(Error::Config(format!("no CSV headers defined for dimension {dim}"))),
    }
}

/// Load a variogram model from a JSON file.
pub fn read_model(path: &Path) -> Result<VariogramModel> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    VariogramModel::from_json(&v)
}

/// Save a variogram model as JSON.
pub fn write_model(path: &Path, model: &VariogramModel) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&model.to_json())
        .map_err(|e| Error::Config(format!("serialize model: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
