//! Writing reports and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::run::{RunReport, Table};

fn io(context: String) -> impl FnOnce(std::io::Error) -> CliError {
    move |source| CliError::Io { context, source }
}

/// Writes `report.json` and one `<table>.csv` per table; returns the paths.
pub fn write_outputs(dir: &Path, report: &RunReport, tables: &[Table]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    fs::write(&path, report_json(report)).map_err(io(format!("writing {}", path.display())))?;
    written.push(path);
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        fs::write(&path, table_csv(t)).map_err(io(format!("writing {}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize to JSON");
    s.push('\n');
    s
}

/// Header row, `.` decimals, LF line endings.
pub fn table_csv(t: &Table) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&t.header).expect("writing to memory");
    for row in &t.rows {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV cells are UTF-8")
}
