//! Plain CSV series for external plotting.

use std::path::{Path, PathBuf};

use roughavg::averaging::{ConvergenceReport, KhasminskiiRow};
use serde::{Deserialize, Serialize};

pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const KHASMINSKII_CSV: &str = "khasminskii.csv";

/// Output of the `converge` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub convergence: ConvergenceReport,
    pub khasminskii: Vec<KhasminskiiRow>,
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner()?)
}

/// Writes `convergence.csv` (eps, delta, mean, stderr, n, plus `excluded`
/// when any replica was excluded) and, if present, `khasminskii.csv`.
/// An empty report is an error and writes nothing.
pub fn emit_plots_data(report: &ExperimentReport, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let rows = &report.convergence.rows;
    if rows.is_empty() && report.khasminskii.is_empty() {
        anyhow::bail!("report has no rows; nothing to emit");
    }
    let mut out = Vec::new();
    if !rows.is_empty() {
        let with_excluded = rows.iter().any(|r| r.excluded > 0);
        let mut header = vec!["eps", "delta", "mean", "stderr", "n"];
        if with_excluded {
            header.push("excluded");
        }
        let text = csv_text(
            &header,
            rows.iter().map(|r| {
                let mut v = vec![
                    r.eps.to_string(),
                    r.delta.to_string(),
                    r.mean_sup_error.to_string(),
                    r.std_error.to_string(),
                    r.replicas.to_string(),
                ];
                if with_excluded {
                    v.push(r.excluded.to_string());
                }
                v
            }),
        )?;
        let path = dir.join(CONVERGENCE_CSV);
        std::fs::write(&path, text)?;
        out.push(path);
    }
    if !report.khasminskii.is_empty() {
        let text = csv_text(
            &["eps", "delta", "sup_mean_sq", "n"],
            report.khasminskii.iter().map(|r| {
                vec![r.eps.to_string(), r.delta.to_string(), r.sup_mean_sq.to_string(), r.replicas.to_string()]
            }),
        )?;
        let path = dir.join(KHASMINSKII_CSV);
        std::fs::write(&path, text)?;
        out.push(path);
    }
    Ok(out)
}
