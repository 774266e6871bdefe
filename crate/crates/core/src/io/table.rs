//! Header-addressed CSV reading shared by every input format.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct Table {
    file: String,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

pub(crate) struct Row<'a> {
    table: &'a Table,
    /// 1-based data row number.
    pub number: usize,
    record: &'a csv::StringRecord,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record.map_err(|e| csv_error(path, e))?);
        }
        Ok(Table { file, headers, rows })
    }

    pub fn require(&self, columns: &[&str]) -> Result<()> {
        for c in columns {
            if !self.headers.iter().any(|h| h == c) {
                return Err(Error::row(&self.file, 0, format!("missing column {c:?}")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().enumerate().map(move |(i, record)| Row {
            table: self,
            number: i + 1,
            record,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

impl Row<'_> {
    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::row(&self.table.file, self.number, message)
    }

    /// Trimmed cell value, `None` when the column is absent or blank.
    pub fn opt(&self, column: &str) -> Option<&str> {
        let idx = self.table.headers.iter().position(|h| h == column)?;
        self.record.get(idx).filter(|s| !s.is_empty())
    }

    pub fn str(&self, column: &str) -> Result<&str> {
        self.opt(column)
            .ok_or_else(|| self.error(format!("missing value for {column:?}")))
    }

    pub fn f64(&self, column: &str) -> Result<f64> {
        let raw = self.str(column)?;
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(format!("{column:?} is not a finite number: {raw:?}")))
    }

    pub fn opt_f64(&self, column: &str) -> Result<Option<f64>> {
        match self.opt(column) {
            None => Ok(None),
            Some(_) => self.f64(column).map(Some),
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::row(path.display().to_string(), 0, format!("{other:?}")),
    }
}
