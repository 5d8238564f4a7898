//! CSV and JSON artifacts. CSV uses `.` decimals and LF line endings.

use std::fs;
use std::path::Path;

use serde::Serialize;
use start_core::gap::DomainGapReport;
use start_core::harness::EpochRecord;

use crate::error::{CliError, Result};

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Like [`write_csv`] but always emits the header, even with no rows.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub const EPOCH_HEADER: [&str; 6] = ["seed", "held_out_domain", "variant", "epoch", "train_loss", "target_acc"];

pub fn write_epochs(path: &Path, records: &[EpochRecord]) -> Result<()> {
    write_csv_with_header(path, &EPOCH_HEADER, records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub quantity: &'static str,
    pub domain_a: String,
    pub domain_b: String,
    pub value: f64,
    pub gamma: f64,
}

pub const GAP_HEADER: [&str; 5] = ["quantity", "domain_a", "domain_b", "value", "gamma"];

pub fn gap_rows(report: &DomainGapReport) -> Vec<GapRow> {
    report
        .pairs
        .iter()
        .map(|p| GapRow {
            quantity: p.quantity.name(),
            domain_a: p.domain_a.clone(),
            domain_b: p.domain_b.clone(),
            value: p.value,
            gamma: p.gamma,
        })
        .collect()
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

