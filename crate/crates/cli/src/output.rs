//! CSV and JSON writers. Every CSV starts with a `# fairsched <name> v1`
//! comment line followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::CliError;

pub const CSV_VERSION: u32 = 1;

pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, name: &str, header: &[String]) -> Result<Self, CliError> {
        let mut file = BufWriter::new(File::create(path)?);
        writeln!(file, "# fairsched {name} v{CSV_VERSION}")?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(header)?;
        Ok(Self { inner })
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = String>) -> Result<(), CliError> {
        self.inner
            .write_record(fields.into_iter().collect::<Vec<_>>())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush()?;
        Ok(())
    }
}

/// `prefix1, prefix2, ...` column names.
pub fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

/// Reads a one-column-per-process allocation: either the `allocation.csv`
/// written by `solve` (`process,rate` rows) or a bare list of rates.
pub fn read_allocation(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut rates = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => rates.push(v),
            Err(_) if rates.is_empty() => continue,
            Err(_) => {
                return Err(CliError::Input(format!(
                    "{}:{}: cannot parse rate {field:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    if rates.is_empty() {
        return Err(CliError::Input(format!(
            "{} holds no rates",
            path.display()
        )));
    }
    Ok(rates)
}
