//! CSV ingestion: header required, comma separated, empty field means missing.

use std::path::Path;

use crate::error::{CliError, CliResult};

/// A CSV table held as raw strings.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(CliError::Data(format!("{}: missing header row", path.display())));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { header, rows })
    }

    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("column '{name}' not found in CSV header")))
    }

    /// Parses a cell; `None` for an empty field.
    pub fn value(&self, row: usize, col: usize) -> CliResult<Option<f64>> {
        let raw = self.rows[row][col].as_str();
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<f64>()
            .map(Some)
            .map_err(|_| CliError::Data(format!("row {}: '{raw}' is not a number", row + 2)))
    }

    /// Numeric columns `cols`, keeping only rows where all of them are present.
    /// Returns the columns and the number of dropped rows.
    pub fn complete_columns(&self, cols: &[usize]) -> CliResult<(Vec<Vec<f64>>, usize)> {
        let mut out = vec![Vec::with_capacity(self.rows.len()); cols.len()];
        let mut dropped = 0;
        for r in 0..self.rows.len() {
            let vals: Vec<Option<f64>> = cols.iter().map(|&c| self.value(r, c)).collect::<CliResult<_>>()?;
            if vals.iter().any(|v| v.is_none_or(|x| !x.is_finite())) {
                dropped += 1;
                continue;
            }
            for (o, v) in out.iter_mut().zip(vals) {
                o.push(v.expect("checked"));
            }
        }
        Ok((out, dropped))
    }
}
