//! Report artifacts: `report.json` plus plot-ready RFC-4180 CSV files.
//!
//! Numbers are written with shortest round-trip formatting, so every aggregate
//! can be recomputed exactly from the raw per-replication file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::{CellResult, CoverageReport};

/// Writes `summary.csv`, `errors_<n>_<p>.csv` and `histogram_<n>_<p>.csv` per
/// cell, and `report.json`. Returns the created paths.
pub fn write_report(report: &CoverageReport, output_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut written = Vec::new();

    let summary_path = output_dir.join("summary.csv");
    {
        let mut w = csv::Writer::from_path(&summary_path)
            .map_err(|e| csv_error(&summary_path, e))?;
        w.write_record([
            "n",
            "p",
            "coverage_pct",
            "median_error",
            "mean_error",
            "sd_error",
            "excluded",
        ])
        .map_err(|e| csv_error(&summary_path, e))?;
        for cell in &report.cells {
            w.write_record([
                cell.n.to_string(),
                cell.p.to_string(),
                cell.coverage_pct.to_string(),
                cell.median_error.to_string(),
                cell.mean_error.to_string(),
                cell.sd_error.to_string(),
                cell.excluded().to_string(),
            ])
            .map_err(|e| csv_error(&summary_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&summary_path, e))?;
    }
    written.push(summary_path);

    for (cell, summary) in report.cells.iter().zip(&report.summaries) {
        let errors_path = output_dir.join(format!("errors_{}_{}.csv", cell.n, cell.p));
        {
            let mut w =
                csv::Writer::from_path(&errors_path).map_err(|e| csv_error(&errors_path, e))?;
            w.write_record([
                "replication",
                "tau_hat",
                "error",
                "std_error",
                "ci_lo",
                "ci_hi",
                "covered",
                "clip_hits",
            ])
            .map_err(|e| csv_error(&errors_path, e))?;
            for k in 0..cell.estimates.len() {
                w.write_record([
                    cell.reps[k].to_string(),
                    cell.estimates[k].to_string(),
                    cell.errors[k].to_string(),
                    cell.std_errors[k].to_string(),
                    cell.ci_lo[k].to_string(),
                    cell.ci_hi[k].to_string(),
                    cell.covered[k].to_string(),
                    cell.clip_hits[k].to_string(),
                ])
                .map_err(|e| csv_error(&errors_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&errors_path, e))?;
        }
        written.push(errors_path);

        let hist_path = output_dir.join(format!("histogram_{}_{}.csv", cell.n, cell.p));
        {
            let mut w = csv::Writer::from_path(&hist_path).map_err(|e| csv_error(&hist_path, e))?;
            w.write_record(["bin_lo", "bin_hi", "count"])
                .map_err(|e| csv_error(&hist_path, e))?;
            let h = &summary.histogram;
            for (k, count) in h.counts.iter().enumerate() {
                w.write_record([
                    h.edges[k].to_string(),
                    h.edges[k + 1].to_string(),
                    count.to_string(),
                ])
                .map_err(|e| csv_error(&hist_path, e))?;
            }
            w.flush().map_err(|e| Error::io(&hist_path, e))?;
        }
        written.push(hist_path);
    }

    let json_path = output_dir.join("report.json");
    let text = serde_json::to_string_pretty(report)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    Ok(written)
}

pub fn read_report(path: &Path) -> Result<CoverageReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Plain-text coverage table, one row per cell.
pub fn summary_table(cells: &[CellResult]) -> String {
    let mut out = String::from(
        "     n     p  coverage%  median_err    mean_err     sd_err  excluded\n",
    );
    for c in cells {
        out.push_str(&format!(
            "{:>6} {:>5} {:>10.1} {:>11.4} {:>11.4} {:>10.4} {:>9}\n",
            c.n,
            c.p,
            c.coverage_pct,
            c.median_error,
            c.mean_error,
            c.sd_error,
            c.excluded()
        ));
    }
    out
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!()
    }
    Error::Csv {
        line: 0,
        message: e.to_string(),
    }
}
