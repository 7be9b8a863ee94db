//! CSV and JSON file formats: sample matrices, orthonormal bases with their
//! block-rank sidecars, RDP curves and releases. CSV is comma-separated with
//! '.' decimals; header rows are written always and tolerated on ingest.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::rdp::RdpCurve;
use crate::subspace::{OrthoBasis, SampleMatrix};
use crate::{Error, Result};

/// Reads a sample matrix: one sample per row, optional header. A row whose
/// fields all parse as numbers is data; otherwise it is treated as the
/// header. Ragged rows are reported by their 1-based position.
pub fn read_sample_matrix(path: &Path) -> Result<SampleMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if let Some(w) = width {
                    if values.len() != w {
                        return Err(Error::validation(format!(
                            "row {} has {} fields, expected {w}",
                            idx + 1,
                            values.len()
                        )));
                    }
                } else {
                    width = Some(values.len());
                }
                rows.push(values);
            }
            Err(_) if idx == 0 => {
                // Header row; remember the width it promises.
                width = Some(record.len());
            }
            Err(e) => {
                return Err(Error::validation(format!(
                    "row {} is not numeric: {e}",
                    idx + 1
                )));
            }
        }
    }
    SampleMatrix::from_rows(rows)
}

/// Writes a matrix of rows under the given header fields.
pub fn write_csv_rows(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
    }
    writer.flush()?;
    Ok(())
}

/// Basis files: a CSV of the matrix (row per row, columns col_0..col_{d-1})
/// plus a JSON sidecar carrying the block ranks.
#[derive(serde::Serialize, serde::Deserialize)]
struct BasisSidecar {
    block_ranks: Vec<usize>,
}

pub fn write_basis(csv_path: &Path, sidecar_path: &Path, basis: &OrthoBasis) -> Result<()> {
    let d = basis.dim();
    let header: Vec<String> = (0..d).map(|j| format!("col_{j}")).collect();
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| basis.columns()[(i, j)]).collect())
        .collect();
    write_csv_rows(csv_path, &header, &rows)?;
    write_json(
        sidecar_path,
        &BasisSidecar {
            block_ranks: basis.block_ranks().to_vec(),
        },
    )
}

pub fn read_basis(csv_path: &Path, sidecar_path: &Path) -> Result<OrthoBasis> {
    let matrix = read_sample_matrix(csv_path)?;
    let sidecar: BasisSidecar = read_json(sidecar_path)?;
    let d = matrix.dim();
    if matrix.n_samples() != d {
        return Err(Error::validation(format!(
            "basis file is {}x{d}, expected square",
            matrix.n_samples()
        )));
    }
    let columns = nalgebra::DMatrix::from_fn(d, d, |i, j| matrix.matrix()[(i, j)]);
    OrthoBasis::new(columns, sidecar.block_ranks)
}

/// Curve CSV with columns (alpha, eps).
pub fn write_rdp_curve(path: &Path, curve: &RdpCurve) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["alpha", "eps"])?;
    for (alpha, eps) in curve.iter() {
        writer.write_record(&[alpha.to_string(), format!("{eps:.17e}")])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_rdp_curve(path: &Path) -> Result<RdpCurve> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::validation("curve rows must have two fields"));
        }
        let alpha: u32 = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::validation(format!("bad alpha: {e}")))?;
        let eps: f64 = record[1]
            .trim()
            .parse()
            .map_err(|e| Error::validation(format!("bad eps: {e}")))?;
        entries.push((alpha, eps));
    }
    RdpCurve::from_entries(entries)
}

/// Release CSV with columns (index, value).
pub fn write_release_vector(path: &Path, values: &[f64]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        writer.write_record(&[i.to_string(), format!("{v:.17e}")])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
