//! Typed in-memory tables loaded from CSV, with per-column type and
//! date-format inference.
//!
//! Cells are kept as raw text with a typed view on top: transformations must
//! be able to leave unparseable originals untouched, which requires keeping
//! the source text around. Missing values are the empty string on disk and
//! `None` in memory; missing cells never participate in type inference.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid table: {0}")]
    Invalid(String),
}

/// Primitive column types, from most to least specific for inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveType {
    String,
    Integer,
    Float,
    Boolean,
    Date,
    #[serde(rename = "datetime")]
    DateTime,
    Categorical,
}

impl fmt::Display for PrimitiveType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PrimitiveType::String => "string",
            PrimitiveType::Integer => "integer",
            PrimitiveType::Float => "float",
            PrimitiveType::Boolean => "boolean",
            PrimitiveType::Date => "date",
            PrimitiveType::DateTime => "datetime",
            PrimitiveType::Categorical => "categorical",
        };
        f.write_str(s)
    }
}

/// Date patterns tried in priority order; ambiguity is resolved by this order.
pub const DATE_PATTERNS: [&str; 4] = ["YYYY-MM-DD", "M/D/YYYY", "MM/DD/YYYY", "D/M/YYYY"];
pub const DATETIME_PATTERN: &str = "YYYY-MM-DDTHH:MM:SS";

fn shape_matches(pattern: &str, cell: &str) -> bool {
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    match pattern {
        "YYYY-MM-DD" => {
            let p: Vec<&str> = cell.split('-').collect();
            p.len() == 3
                && p[0].len() == 4
                && p[1].len() == 2
                && p[2].len() == 2
                && p.iter().all(|s| digits(s))
        }
        "M/D/YYYY" | "D/M/YYYY" => {
            let p: Vec<&str> = cell.split('/').collect();
            p.len() == 3
                && (1..=2).contains(&p[0].len())
                && (1..=2).contains(&p[1].len())
                && p[2].len() == 4
                && p.iter().all(|s| digits(s))
        }
        "MM/DD/YYYY" => {
            let p: Vec<&str> = cell.split('/').collect();
            p.len() == 3
                && p[0].len() == 2
                && p[1].len() == 2
                && p[2].len() == 4
                && p.iter().all(|s| digits(s))
        }
        DATETIME_PATTERN => {
            let p: Vec<&str> = cell.splitn(2, 'T').collect();
            p.len() == 2 && shape_matches("YYYY-MM-DD", p[0]) && {
                let t: Vec<&str> = p[1].split(':').collect();
                t.len() == 3 && t.iter().all(|s| s.len() == 2 && digits(s))
            }
        }
        _ => false,
    }
}

fn chrono_fmt(pattern: &str) -> Option<&'static str> {
    match pattern {
        "YYYY-MM-DD" => Some("%Y-%m-%d"),
        "M/D/YYYY" | "MM/DD/YYYY" => Some("%m/%d/%Y"),
        "D/M/YYYY" => Some("%d/%m/%Y"),
        DATETIME_PATTERN => Some("%Y-%m-%dT%H:%M:%S"),
        _ => None,
    }
}

/// True when `cell` both has the textual shape of `pattern` and denotes a
/// valid calendar date (or timestamp).
pub fn parses_as(pattern: &str, cell: &str) -> bool {
    if !shape_matches(pattern, cell) {
        return false;
    }
    let fmt = match chrono_fmt(pattern) {
        Some(f) => f,
        None => return false,
    };
    if pattern == DATETIME_PATTERN {
        NaiveDateTime::parse_from_str(cell, fmt).is_ok()
    } else {
        NaiveDate::parse_from_str(cell, fmt).is_ok()
    }
}

/// Parse a cell under `pattern` into a timestamp (midnight for plain dates).
pub fn parse_instant(pattern: &str, cell: &str) -> Option<NaiveDateTime> {
    if !shape_matches(pattern, cell) {
        return None;
    }
    let fmt = chrono_fmt(pattern)?;
    if pattern == DATETIME_PATTERN {
        NaiveDateTime::parse_from_str(cell, fmt).ok()
    } else {
        NaiveDate::parse_from_str(cell, fmt)
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
    }
}

/// Render a timestamp in the given catalog pattern.
pub fn render_instant(pattern: &str, instant: NaiveDateTime) -> Option<String> {
    let s = match pattern {
        "YYYY-MM-DD" => instant.format("%Y-%m-%d").to_string(),
        "M/D/YYYY" => instant.format("%-m/%-d/%Y").to_string(),
        "MM/DD/YYYY" => instant.format("%m/%d/%Y").to_string(),
        "D/M/YYYY" => instant.format("%-d/%-m/%Y").to_string(),
        DATETIME_PATTERN => instant.format("%Y-%m-%dT%H:%M:%S").to_string(),
        _ => return None,
    };
    Some(s)
}

pub fn is_integer_text(cell: &str) -> bool {
    let s = cell.strip_prefix(['+', '-']).unwrap_or(cell);
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && cell.parse::<i64>().is_ok()
}

pub fn is_float_text(cell: &str) -> bool {
    if !cell
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
    {
        return false;
    }
    cell.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false)
}

fn is_boolean_text(cell: &str) -> bool {
    cell.eq_ignore_ascii_case("true") || cell.eq_ignore_ascii_case("false")
}

/// Infer the most specific type matched by all non-missing cells.
///
/// Test order: boolean, integer, float, datetime, date, categorical, string.
/// A column falls back to categorical when it would otherwise be string and
/// has at most `max(10, 5% of non-missing)` distinct values. All-missing
/// columns are string with no pattern.
pub fn infer_column_type(cells: &[Option<String>]) -> (PrimitiveType, Option<String>) {
    let present: Vec<&str> = cells.iter().filter_map(|c| c.as_deref()).collect();
    if present.is_empty() {
        return (PrimitiveType::String, None);
    }
    if present.iter().all(|c| is_boolean_text(c)) {
        return (PrimitiveType::Boolean, None);
    }
    if present.iter().all(|c| is_integer_text(c)) {
        return (PrimitiveType::Integer, None);
    }
    if present.iter().all(|c| is_float_text(c)) {
        return (PrimitiveType::Float, None);
    }
    if present.iter().all(|c| parses_as(DATETIME_PATTERN, c)) {
        return (PrimitiveType::DateTime, Some(DATETIME_PATTERN.to_string()));
    }
    for pattern in DATE_PATTERNS {
        if present.iter().all(|c| parses_as(pattern, c)) {
            return (PrimitiveType::Date, Some(pattern.to_string()));
        }
    }
    let distinct: HashSet<&str> = present.iter().copied().collect();
    let threshold = 10usize.max(present.len() * 5 / 100);
    if distinct.len() <= threshold {
        return (PrimitiveType::Categorical, None);
    }
    (PrimitiveType::String, None)
}

/// A single named column: raw cells plus the inferred typed view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnData {
    pub name: String,
    pub primitive_type: PrimitiveType,
    /// `None` encodes a missing value (empty field on disk).
    pub cells: Vec<Option<String>>,
    pub format_pattern: Option<String>,
}

impl ColumnData {
    /// Build a column, inferring type and format from the cells.
    pub fn new(name: impl Into<String>, cells: Vec<Option<String>>) -> Self {
        let (primitive_type, format_pattern) = infer_column_type(&cells);
        ColumnData {
            name: name.into(),
            primitive_type,
            cells,
            format_pattern,
        }
    }

    /// Re-infer type and format after the cells changed.
    pub fn reinfer(&mut self) {
        let (t, p) = infer_column_type(&self.cells);
        self.primitive_type = t;
        self.format_pattern = p;
    }

    pub fn non_missing(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().filter_map(|c| c.as_deref())
    }
}

/// An immutable tabular dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTable {
    pub dataset_id: String,
    pub columns: Vec<ColumnData>,
    pub row_count: usize,
}

impl DatasetTable {
    pub fn new(dataset_id: impl Into<String>, columns: Vec<ColumnData>) -> Result<Self, TableError> {
        let dataset_id = dataset_id.into();
        if dataset_id.is_empty() || dataset_id.chars().any(|c| c.is_control()) {
            return Err(TableError::Invalid(
                "dataset_id must be non-empty and contain no control characters".into(),
            ));
        }
        let row_count = columns.first().map(|c| c.cells.len()).unwrap_or(0);
        for col in &columns {
            if col.cells.len() != row_count {
                return Err(TableError::Invalid(format!(
                    "column '{}' has {} cells, expected {}",
                    col.name,
                    col.cells.len(),
                    row_count
                )));
            }
        }
        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::Invalid(format!(
                    "duplicate column name '{}'",
                    col.name
                )));
            }
        }
        Ok(DatasetTable {
            dataset_id,
            columns,
            row_count,
        })
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Row `i` as a list of optional cells, in column order.
    pub fn row(&self, i: usize) -> Vec<Option<&str>> {
        self.columns.iter().map(|c| c.cells[i].as_deref()).collect()
    }
}

/// Load an RFC-4180 CSV (UTF-8, first row is header) into a typed table.
pub fn load_csv(path: impl AsRef<Path>, dataset_id: &str) -> Result<DatasetTable, TableError> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| TableError::Format(format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(TableError::Format("empty header row".into()));
    }
    if headers.iter().any(|h| h.is_empty()) {
        return Err(TableError::Format("empty header field".into()));
    }
    {
        let mut seen = HashSet::new();
        for h in &headers {
            if !seen.insert(h.as_str()) {
                return Err(TableError::Format(format!("duplicate header '{h}'")));
            }
        }
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| TableError::Format(format!("bad record: {e}")))?;
        if record.len() != headers.len() {
            return Err(TableError::Format(format!(
                "ragged row: {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        for (i, field) in record.iter().enumerate() {
            cells[i].push(if field.is_empty() {
                None
            } else {
                Some(field.to_string())
            });
        }
    }

    let columns = headers
        .into_iter()
        .zip(cells)
        .map(|(name, cells)| ColumnData::new(name, cells))
        .collect();
    DatasetTable::new(dataset_id, columns)
}

/// Write a table back out as RFC-4180 CSV (LF line endings, missing = empty).
pub fn write_csv(table: &DatasetTable, path: impl AsRef<Path>) -> Result<(), TableError> {
    let bytes = to_csv_bytes(table)?;
    std::fs::write(path.as_ref(), bytes)?;
    Ok(())
}

/// Serialize a table to CSV bytes; used for byte-level equality checks.
pub fn to_csv_bytes(table: &DatasetTable) -> Result<Vec<u8>, TableError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..table.row_count {
        writer.write_record(
            table
                .columns
                .iter()
                .map(|c| c.cells[i].as_deref().unwrap_or("")),
        )?;
    }
    writer
        .into_inner()
        .map_err(|e| TableError::Format(format!("flush failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cells(vals: &[&str]) -> Vec<Option<String>> {
        vals.iter()
            .map(|v| {
                if v.is_empty() {
                    None
                } else {
                    Some(v.to_string())
                }
            })
            .collect()
    }

    #[test]
    fn infer_datetime_iso() {
        let (t, p) = infer_column_type(&cells(&["2020-02-24T18:00:00", "2020-02-25T18:00:00"]));
        assert_eq!(t, PrimitiveType::DateTime);
        assert_eq!(p.as_deref(), Some("YYYY-MM-DDTHH:MM:SS"));
    }

    #[test]
    fn infer_integer() {
        let (t, p) = infer_column_type(&cells(&["0", "1", "1"]));
        assert_eq!(t, PrimitiveType::Integer);
        assert_eq!(p, None);
    }

    #[test]
    fn infer_slash_dates_catalog_order() {
        // Oracle: brute-force every catalog pattern against both cells.
        let sample = ["3/28/2020", "12/01/2020"];
        let matching: Vec<&str> = DATE_PATTERNS
            .iter()
            .copied()
            .filter(|p| sample.iter().all(|c| parses_as(p, c)))
            .collect();
        // MM/DD/YYYY rejected because "3" is one digit; D/M/YYYY rejected
        // because month 28 is invalid.
        assert_eq!(matching, vec!["M/D/YYYY"]);

        let (t, p) = infer_column_type(&cells(&sample));
        assert_eq!(t, PrimitiveType::Date);
        assert_eq!(p.as_deref(), Some("M/D/YYYY"));
    }

    #[test]
    fn infer_all_missing_is_string() {
        let (t, p) = infer_column_type(&cells(&["", "", ""]));
        assert_eq!(t, PrimitiveType::String);
        assert_eq!(p, None);
    }

    #[test]
    fn infer_categorical_low_cardinality() {
        let vals: Vec<String> = (0..40).map(|i| format!("v{}", i % 3)).collect();
        let refs: Vec<&str> = vals.iter().map(|s| s.as_str()).collect();
        let (t, _) = infer_column_type(&cells(&refs));
        assert_eq!(t, PrimitiveType::Categorical);
    }

    #[test]
    fn specificity_date_plus_junk_is_not_date() {
        let mut c = cells(&["2020-01-01", "2020-01-02"]);
        let (t, _) = infer_column_type(&c);
        assert_eq!(t, PrimitiveType::Date);
        c.push(Some("not a date".into()));
        let (t2, _) = infer_column_type(&c);
        assert!(matches!(
            t2,
            PrimitiveType::String | PrimitiveType::Categorical
        ));
    }

    #[test]
    fn inference_is_deterministic() {
        let c = cells(&["1.5", "2", "x", "1.5"]);
        assert_eq!(infer_column_type(&c), infer_column_type(&c));
    }

    #[test]
    fn load_iso_date_and_counts() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,total_cases\n2020-02-24,5\n2020-02-25,7").unwrap();
        let table = load_csv(f.path(), "afg").unwrap();
        assert_eq!(table.row_count, 2);
        assert_eq!(table.columns[0].primitive_type, PrimitiveType::Date);
        assert_eq!(
            table.columns[0].format_pattern.as_deref(),
            Some("YYYY-MM-DD")
        );
        assert_eq!(table.columns[1].primitive_type, PrimitiveType::Integer);
    }

    #[test]
    fn load_header_only() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a,b").unwrap();
        let table = load_csv(f.path(), "t").unwrap();
        assert_eq!(table.row_count, 0);
        assert!(table
            .columns
            .iter()
            .all(|c| c.primitive_type == PrimitiveType::String));
    }

    #[test]
    fn load_slash_dates() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Date\n3/28/2020\n4/01/2020").unwrap();
        let table = load_csv(f.path(), "idn").unwrap();
        assert_eq!(table.columns[0].primitive_type, PrimitiveType::Date);
        assert_eq!(table.columns[0].format_pattern.as_deref(), Some("M/D/YYYY"));
    }

    #[test]
    fn load_rejects_ragged_and_duplicate_headers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a,b\n1,2,3").unwrap();
        assert!(matches!(
            load_csv(f.path(), "t"),
            Err(TableError::Format(_))
        ));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "a,a\n1,2").unwrap();
        assert!(matches!(
            load_csv(g.path(), "t"),
            Err(TableError::Format(_))
        ));
    }

    #[test]
    fn write_round_trip_with_quoting() {
        let table = DatasetTable::new(
            "t",
            vec![
                ColumnData::new("x", cells(&["a,b", "plain", ""])),
                ColumnData::new("y", cells(&["1", "2", "3"])),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"a,b\""));
        let back = load_csv(&path, "t").unwrap();
        assert_eq!(back.column_names(), table.column_names());
        for (a, b) in back.columns.iter().zip(&table.columns) {
            assert_eq!(a.cells, b.cells);
        }
    }

    #[test]
    fn write_empty_table_is_header_only() {
        let table = DatasetTable::new("t", vec![ColumnData::new("only", vec![])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_csv(&table, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "only\n");
    }

    #[test]
    fn table_invariants_enforced() {
        assert!(DatasetTable::new("", vec![]).is_err());
        assert!(DatasetTable::new("a\x01b", vec![]).is_err());
        let cols = vec![
            ColumnData::new("a", cells(&["1"])),
            ColumnData::new("a", cells(&["2"])),
        ];
        assert!(DatasetTable::new("t", cols).is_err());
        let cols = vec![
            ColumnData::new("a", cells(&["1"])),
            ColumnData::new("b", cells(&["1", "2"])),
        ];
        assert!(DatasetTable::new("t", cols).is_err());
    }
}
