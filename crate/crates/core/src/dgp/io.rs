//! Dataset CSV export/import and the JSON metadata sidecar.
//!
//! The CSV header is `x1,...,xp,d,y` with optional trailing `y0,y1` columns
//! when potential outcomes are present. Floats are written with Rust's default
//! formatting, which is the shortest decimal string that round-trips the exact
//! IEEE-754 value, so export followed by import reproduces the dataset bit for
//! bit.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::generate::{Dataset, OverlapStats};
use super::spec::{DgpKind, DgpSpec, PropensityForm};

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub kind: DgpKind,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub noise_sd: f64,
    pub propensity_form: PropensityForm,
    #[serde(default = "default_true")]
    pub shared_noise: bool,
    #[serde(default)]
    pub add_treatment_shift: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapStats>,
}

fn default_true() -> bool {
    true
}

impl DatasetMetadata {
    pub fn describe(spec: &DgpSpec, dataset: &Dataset) -> Self {
        DatasetMetadata {
            kind: spec.kind,
            p: spec.p,
            n: dataset.n(),
            seed: dataset.seed,
            noise_sd: spec.noise_sd,
            propensity_form: spec.propensity_form,
            shared_noise: spec.shared_noise,
            add_treatment_shift: spec.add_treatment_shift,
            overlap: dataset.overlap,
        }
    }

    /// Reconstructs the canonical spec this metadata describes.
    pub fn to_spec(&self) -> Result<DgpSpec> {
        let spec = match self.kind {
            DgpKind::Example1 => DgpSpec::example1(self.p, self.noise_sd),
            DgpKind::Example2 => DgpSpec::example2(self.p, self.noise_sd),
        }
        .with_propensity_form(self.propensity_form)
        .with_shared_noise(self.shared_noise)
        .with_treatment_shift(self.add_treatment_shift);
        spec.validate()?;
        Ok(spec)
    }
}

/// Path of the metadata sidecar for a dataset file: the extension is replaced
/// with `meta.json` (`data.csv` -> `data.meta.json`).
pub fn sidecar_path(dataset_path: &Path) -> PathBuf {
    dataset_path.with_extension("meta.json")
}

pub fn write_metadata(meta: &DatasetMetadata, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_metadata(path: &Path) -> Result<DatasetMetadata> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.check_consistency()?;
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io_error(path, e))?;
    let p = dataset.p();
    let with_potentials = dataset.y0.is_some() && dataset.y1.is_some();

    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("d".into());
    header.push("y".into());
    if with_potentials {
        header.push("y0".into());
        header.push("y1".into());
    }
    writer
        .write_record(&header)
        .map_err(|e| csv_io_error(path, e))?;

    let mut record = Vec::with_capacity(header.len());
    for i in 0..dataset.n() {
        record.clear();
        for j in 0..p {
            record.push(dataset.x[(i, j)].to_string());
        }
        record.push(dataset.d[i].to_string());
        record.push(dataset.y[i].to_string());
        if with_potentials {
            record.push(dataset.y0.as_ref().unwrap()[i].to_string());
            record.push(dataset.y1.as_ref().unwrap()[i].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| csv_io_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a dataset CSV written by [`write_dataset_csv`]. When the metadata
/// sidecar exists next to the file, its seed is attached to the result.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io_error(path, e))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let p = names.iter().take_while(|h| h.starts_with('x')).count();
    let with_potentials = names.ends_with(&["y0", "y1"]);
    let expected: usize = p + 2 + if with_potentials { 2 } else { 0 };
    if p == 0 || names.len() != expected || names[p] != "d" || names[p + 1] != "y" {
        return Err(Error::Csv {
            line: 1,
            message: format!(
                "expected header x1,...,xp,d,y[,y0,y1], got {:?}",
                names.join(",")
            ),
        });
    }
    for (j, name) in names.iter().take(p).enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(Error::Csv {
                line: 1,
                message: format!("covariate column {} is named {name}", j + 1),
            });
        }
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut d = Vec::new();
    let mut y = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Csv {
            line,
            message: e.to_string(),
        })?;
        if record.len() != expected {
            return Err(Error::Csv {
                line,
                message: format!("expected {expected} fields, got {}", record.len()),
            });
        }
        let field = |k: usize| -> Result<f64> {
            record[k].parse::<f64>().map_err(|_| Error::Csv {
                line,
                message: format!("field {:?} ({}) is not a number", &record[k], names[k]),
            })
        };
        let mut row = Vec::with_capacity(p);
        for j in 0..p {
            row.push(field(j)?);
        }
        let dv = &record[p];
        match dv {
            "0" => d.push(0u8),
            "1" => d.push(1u8),
            _ => {
                return Err(Error::Csv {
                    line,
                    message: format!("treatment must be 0 or 1, got {dv:?}"),
                })
            }
        }
        y.push(field(p + 1)?);
        if with_potentials {
            y0.push(field(p + 2)?);
            y1.push(field(p + 3)?);
        }
        rows.push(row);
    }

    let n = rows.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..p {
            x[(i, j)] = row[j];
        }
    }

    let seed = read_metadata(&sidecar_path(path)).map(|m| m.seed).unwrap_or(0);
    let dataset = Dataset {
        x,
        d,
        y,
        y0: with_potentials.then_some(y0),
        y1: with_potentials.then_some(y1),
        seed,
        overlap: None,
    };
    dataset.check_consistency()?;
    Ok(dataset)
}

fn csv_io_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                Error::io(path, io)
            } else {
                unreachable!()
            }
        }
        _ => Error::Csv {
            line: e
                .position()
                .map(|pos| pos.line() as usize)
                .unwrap_or_default(),
            message: e.to_string(),
        },
    }
}
