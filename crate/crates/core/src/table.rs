//! Small CSV helpers shared by every loader: header lookup, line numbers,
//! ISO dates.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use csv::StringRecord;

use crate::error::{Error, Result};

pub(crate) struct CsvTable {
    pub name: String,
    headers: Vec<String>,
    pub rows: Vec<Row>,
}

pub(crate) struct Row {
    pub line: u64,
    record: StringRecord,
}

impl Row {
    pub fn get(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("").trim()
    }
}

pub(crate) fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

impl CsvTable {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = open(path)?;
        Self::from_reader(&path.display().to_string(), file)
    }

    pub fn from_reader<R: Read>(name: &str, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(name, 1, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_ascii_lowercase())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let record = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::parse(name, line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            rows.push(Row { line, record });
        }
        Ok(CsvTable {
            name: name.to_string(),
            headers,
            rows,
        })
    }

    pub fn column(&self, column: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| Error::Schema {
                path: self.name.clone(),
                column: column.to_string(),
            })
    }

    pub fn date(&self, row: &Row, col: usize) -> Result<NaiveDate> {
        parse_date(row.get(col)).ok_or_else(|| {
            Error::parse(
                &self.name,
                row.line,
                format!("invalid date `{}` (expected YYYY-MM-DD)", row.get(col)),
            )
        })
    }

    pub fn opt_date(&self, row: &Row, col: usize) -> Result<Option<NaiveDate>> {
        if row.get(col).is_empty() {
            Ok(None)
        } else {
            self.date(row, col).map(Some)
        }
    }

    pub fn error(&self, row: &Row, message: impl Into<String>) -> Error {
        Error::parse(&self.name, row.line, message)
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Serializes rows with a fixed header into an in-memory CSV string.
pub(crate) fn write_csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(header).expect("in-memory csv write");
    for row in rows {
        wtr.write_record(row).expect("in-memory csv write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}
