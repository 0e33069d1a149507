//! Dataset loading: CSV files and SQLite tables into immutable in-memory frames,
//! plus a session-scoped registry of loaded datasets.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, LazyLock, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use regex::Regex;
use rusqlite::types::ValueRef;
use rusqlite::{ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("input has no header row")]
    EmptyInput,
    #[error("row {row} has {found} cells but the header has {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column {0} has an empty name")]
    EmptyColumnName(usize),
    #[error("column `{column}` has {found} cells, expected {expected}")]
    ColumnLength {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("file is not an SQLite database: {0}")]
    NotADatabase(String),
    #[error("cannot read `{path}`: {reason}")]
    UnreadableFile { path: String, reason: String },
    #[error("no dataset with id `{0}`")]
    NotFound(String),
}

/// One scalar value in a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Classify a raw CSV field.
    pub fn parse(raw: &str) -> Cell {
        static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?[0-9]+$").unwrap());
        static REAL: LazyLock<Regex> = LazyLock::new(|| {
            Regex::new(r"^[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?$").unwrap()
        });

        if raw.is_empty() {
            return Cell::Null;
        }
        if INTEGER.is_match(raw) {
            if let Ok(v) = raw.parse::<i64>() {
                return Cell::Integer(v);
            }
        }
        if REAL.is_match(raw) {
            if let Ok(v) = raw.parse::<f64>() {
                if v.is_finite() {
                    return Cell::Real(v);
                }
            }
        }
        if raw.eq_ignore_ascii_case("true") {
            return Cell::Boolean(true);
        }
        if raw.eq_ignore_ascii_case("false") {
            return Cell::Boolean(false);
        }
        Cell::Text(raw.to_string())
    }
}

/// Canonical text rendering. Reals always carry a `.` or exponent so that
/// re-parsing yields a real again; nulls render as the empty string.
impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => Ok(()),
            Cell::Boolean(b) => write!(f, "{b}"),
            Cell::Integer(i) => write!(f, "{i}"),
            Cell::Real(r) => write!(f, "{r:?}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnData {
    pub name: String,
    pub cells: Vec<Cell>,
}

impl ColumnData {
    pub fn new(name: impl Into<String>, cells: Vec<Cell>) -> Self {
        Self {
            name: name.into(),
            cells,
        }
    }
}

/// An ordered, named-column table. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableFrame {
    name: String,
    columns: Vec<ColumnData>,
    row_count: usize,
}

impl TableFrame {
    /// Build a frame, checking that names are unique and non-empty and that
    /// every column has the same length.
    pub fn new(name: impl Into<String>, columns: Vec<ColumnData>) -> Result<Self, IngestError> {
        let row_count = columns.first().map_or(0, |c| c.cells.len());
        let mut seen = HashSet::new();
        for (idx, col) in columns.iter().enumerate() {
            if col.name.is_empty() {
                return Err(IngestError::EmptyColumnName(idx));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(IngestError::DuplicateColumn(col.name.clone()));
            }
            if col.cells.len() != row_count {
                return Err(IngestError::ColumnLength {
                    column: col.name.clone(),
                    expected: row_count,
                    found: col.cells.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn row(&self, index: usize) -> Option<Vec<&Cell>> {
        (index < self.row_count).then(|| self.columns.iter().map(|c| &c.cells[index]).collect())
    }

    /// Serialize as RFC-4180 CSV with a header row.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        // Writing into a Vec cannot fail.
        writer
            .write_record(self.column_names())
            .expect("in-memory csv write");
        for row in 0..self.row_count {
            writer
                .write_record(self.columns.iter().map(|c| c.cells[row].to_string()))
                .expect("in-memory csv write");
        }
        writer.into_inner().expect("in-memory csv flush")
    }
}

/// Load a CSV byte stream whose first record is the header.
pub fn load_csv(bytes: &[u8], name: &str) -> Result<TableFrame, IngestError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();

    let header = match records.next() {
        Some(record) => record?,
        None => return Err(IngestError::EmptyInput),
    };
    let width = header.len();
    let mut cells: Vec<Vec<Cell>> = vec![Vec::new(); width];
    for (idx, record) in records.enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(IngestError::RaggedRows {
                row: idx + 1,
                expected: width,
                found: record.len(),
            });
        }
        for (col, field) in cells.iter_mut().zip(record.iter()) {
            col.push(Cell::parse(field));
        }
    }

    let columns = header
        .iter()
        .zip(cells)
        .map(|(name, cells)| ColumnData::new(name, cells))
        .collect();
    TableFrame::new(name, columns)
}

const SQLITE_MAGIC: &[u8] = b"SQLite format 3\0";

/// Load a file as SQLite when it carries the SQLite header, otherwise as a
/// CSV frame named after the file stem.
pub fn load_path(path: &Path) -> Result<Vec<TableFrame>, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if bytes.starts_with(SQLITE_MAGIC) {
        return load_sqlite(path);
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("data");
    Ok(vec![load_csv(&bytes, name)?])
}

/// Load every user table of an SQLite database, opened read-only.
///
/// Cell kinds follow each value's storage class (INTEGER, REAL, TEXT, NULL);
/// blobs are rendered as lossy UTF-8 text.
pub fn load_sqlite(path: &Path) -> Result<Vec<TableFrame>, IngestError> {
    let unreadable = |reason: String| IngestError::UnreadableFile {
        path: path.display().to_string(),
        reason,
    };
    std::fs::metadata(path).map_err(|e| unreadable(e.to_string()))?;

    let conn = rusqlite::Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| sqlite_error(path, e))?;

    let tables: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master \
                 WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            )
            .map_err(|e| sqlite_error(path, e))?;
        let rows = stmt
            .query_map([], |row| row.get::<_, String>(0))
            .map_err(|e| sqlite_error(path, e))?;
        rows.collect::<Result<_, _>>()
            .map_err(|e| sqlite_error(path, e))?
    };

    tables
        .iter()
        .map(|table| {
            let (names, cells) = read_table(&conn, table).map_err(|e| sqlite_error(path, e))?;
            let columns = names
                .into_iter()
                .zip(cells)
                .map(|(name, cells)| ColumnData::new(name, cells))
                .collect();
            TableFrame::new(table.as_str(), columns)
        })
        .collect()
}

type RawTable = (Vec<String>, Vec<Vec<Cell>>);

fn read_table(conn: &rusqlite::Connection, table: &str) -> Result<RawTable, rusqlite::Error> {
    let sql = format!("SELECT * FROM \"{}\"", table.replace('"', "\"\""));
    let mut stmt = conn.prepare(&sql)?;
    let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let mut cells: Vec<Vec<Cell>> = vec![Vec::new(); names.len()];
    let mut rows = stmt.query([])?;
    while let Some(row) = rows.next()? {
        for (idx, col) in cells.iter_mut().enumerate() {
            col.push(match row.get_ref(idx)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(i) => Cell::Integer(i),
                ValueRef::Real(r) => Cell::Real(r),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Text(String::from_utf8_lossy(b).into_owned()),
            });
        }
    }
    Ok((names, cells))
}

fn sqlite_error(path: &Path, err: rusqlite::Error) -> IngestError {
    match err.sqlite_error_code() {
        Some(ErrorCode::NotADatabase) => IngestError::NotADatabase(path.display().to_string()),
        _ => IngestError::UnreadableFile {
            path: path.display().to_string(),
            reason: err.to_string(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OriginKind {
    Csv,
    Sqlite,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub origin_kind: OriginKind,
    pub origin_name: String,
    /// Milliseconds since the Unix epoch.
    pub loaded_at: u64,
}

impl SourceMeta {
    pub fn now(origin_kind: OriginKind, origin_name: impl Into<String>) -> Self {
        let loaded_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            origin_kind,
            origin_name: origin_name.into(),
            loaded_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetId(String);

impl DatasetId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DatasetId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug)]
pub struct RegisteredDataset {
    pub id: DatasetId,
    pub frame: Arc<TableFrame>,
    pub meta: SourceMeta,
}

/// Session-scoped dataset store. Reads run concurrently, writes are serialized.
#[derive(Debug, Default)]
pub struct DatasetRegistry {
    entries: RwLock<Vec<Arc<RegisteredDataset>>>,
    next_id: AtomicU64,
}

impl DatasetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, frame: TableFrame, meta: SourceMeta) -> DatasetId {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let id = DatasetId(format!("ds-{n}"));
        let entry = Arc::new(RegisteredDataset {
            id: id.clone(),
            frame: Arc::new(frame),
            meta,
        });
        self.entries.write().expect("registry lock").push(entry);
        id
    }

    pub fn get(&self, id: &DatasetId) -> Result<Arc<RegisteredDataset>, IngestError> {
        self.entries
            .read()
            .expect("registry lock")
            .iter()
            .find(|e| &e.id == id)
            .cloned()
            .ok_or_else(|| IngestError::NotFound(id.to_string()))
    }

    /// Snapshot in insertion order.
    pub fn list(&self) -> Vec<Arc<RegisteredDataset>> {
        self.entries.read().expect("registry lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRODUCTS: &str = "product_id,product_type_code,product_name,product_price\n\
                            1,Clothes,red jeans,734.73\n\
                            10,Hardware,monitor,813.76\n";

    #[test]
    fn products_header_order_is_kept() {
        let frame = load_csv(PRODUCTS.as_bytes(), "products").unwrap();
        let names: Vec<_> = frame.column_names().collect();
        assert_eq!(
            names,
            [
                "product_id",
                "product_type_code",
                "product_name",
                "product_price"
            ]
        );
        assert_eq!(frame.row_count(), 2);
        assert_eq!(frame.columns()[0].cells[1], Cell::Integer(10));
        assert_eq!(frame.columns()[3].cells[0], Cell::Real(734.73));
    }

    #[test]
    fn header_only_csv_has_no_rows() {
        let frame = load_csv(b"a,b,c\n", "t").unwrap();
        assert_eq!(frame.row_count(), 0);
        assert_eq!(frame.columns().len(), 3);
    }

    #[test]
    fn ragged_row_is_rejected() {
        let err = load_csv(b"a,b,c,d\n1,2,3,4\n1,2,3\n", "t").unwrap_err();
        assert!(matches!(
            err,
            IngestError::RaggedRows {
                row: 2,
                expected: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn empty_input_and_duplicates() {
        assert!(matches!(load_csv(b"", "t"), Err(IngestError::EmptyInput)));
        assert!(matches!(
            load_csv(b"a,b,a\n", "t"),
            Err(IngestError::DuplicateColumn(name)) if name == "a"
        ));
        assert!(matches!(
            load_csv(b"a,,c\n", "t"),
            Err(IngestError::EmptyColumnName(1))
        ));
    }

    #[test]
    fn cell_classification() {
        assert_eq!(Cell::parse(""), Cell::Null);
        assert_eq!(Cell::parse("-12"), Cell::Integer(-12));
        assert_eq!(Cell::parse("+3"), Cell::Integer(3));
        assert_eq!(Cell::parse("2.5e3"), Cell::Real(2500.0));
        assert_eq!(Cell::parse(".5"), Cell::Real(0.5));
        assert_eq!(Cell::parse("TRUE"), Cell::Boolean(true));
        assert_eq!(Cell::parse("False"), Cell::Boolean(false));
        assert_eq!(Cell::parse("inf"), Cell::Text("inf".into()));
        assert_eq!(Cell::parse("NaN"), Cell::Text("NaN".into()));
        assert_eq!(Cell::parse("1e999"), Cell::Text("1e999".into()));
        assert_eq!(Cell::parse(" 5"), Cell::Text(" 5".into()));
        // Wider than i64 falls through to a real.
        assert_eq!(
            Cell::parse("99999999999999999999"),
            Cell::Real(99999999999999999999.0)
        );
    }

    #[test]
    fn quoted_fields() {
        let frame = load_csv(b"name,note\n\"Smith, J\",\"said \"\"hi\"\"\"\n", "q").unwrap();
        assert_eq!(frame.columns()[0].cells[0], Cell::Text("Smith, J".into()));
        assert_eq!(frame.columns()[1].cells[0], Cell::Text("said \"hi\"".into()));
    }

    #[test]
    fn real_rendering_reparses_as_real() {
        for v in [5.0, -0.25, 1e-7, 1e21, 734.73] {
            assert_eq!(Cell::parse(&Cell::Real(v).to_string()), Cell::Real(v));
        }
    }

    #[test]
    fn frame_rejects_uneven_columns() {
        let err = TableFrame::new(
            "t",
            vec![
                ColumnData::new("a", vec![Cell::Integer(1)]),
                ColumnData::new("b", vec![]),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::ColumnLength { .. }));
    }

    #[test]
    fn registry_ids_and_order() {
        let registry = DatasetRegistry::new();
        let frame = load_csv(PRODUCTS.as_bytes(), "products").unwrap();
        let a = registry.register(frame.clone(), SourceMeta::now(OriginKind::Csv, "a.csv"));
        let b = registry.register(frame, SourceMeta::now(OriginKind::Csv, "b.csv"));
        assert_ne!(a, b);
        let ids: Vec<_> = registry.list().iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids, [a.clone(), b]);
        assert_eq!(registry.get(&a).unwrap().frame.name(), "products");
        assert!(matches!(
            registry.get(&DatasetId::from("ds-999")),
            Err(IngestError::NotFound(_))
        ));
    }

    #[test]
    fn sqlite_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db.sqlite");
        {
            let conn = rusqlite::Connection::open(&path).unwrap();
            conn.execute_batch(
                "CREATE TABLE products (product_id INTEGER, product_type_code TEXT, \
                 product_name TEXT, product_price DECIMAL(19,4));
                 INSERT INTO products VALUES (1, 'Clothes', 'red jeans', 734.73);
                 INSERT INTO products VALUES (2, 'Hardware', NULL, 10);
                 CREATE TABLE \"odd \"\"name\"\"\" (x REAL);",
            )
            .unwrap();
        }
        let frames = load_sqlite(&path).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].name(), "products");
        assert_eq!(frames[0].columns()[2].cells[1], Cell::Null);
        // NUMERIC affinity stores a lossless 10.0 as an integer.
        assert_eq!(frames[0].columns()[3].cells[1], Cell::Integer(10));
        assert_eq!(frames[1].name(), "odd \"name\"");
        assert_eq!(frames[1].row_count(), 0);

        let empty = dir.path().join("empty.sqlite");
        rusqlite::Connection::open(&empty)
            .unwrap()
            .execute_batch("PRAGMA user_version = 1;")
            .unwrap();
        assert!(load_sqlite(&empty).unwrap().is_empty());

        let junk = dir.path().join("junk.sqlite");
        std::fs::write(&junk, b"this is definitely not a database file, just text").unwrap();
        assert!(matches!(
            load_sqlite(&junk),
            Err(IngestError::NotADatabase(_))
        ));
        assert!(matches!(
            load_sqlite(&dir.path().join("missing.sqlite")),
            Err(IngestError::UnreadableFile { .. })
        ));

        let by_path = load_path(&path).unwrap();
        assert_eq!(by_path.len(), 2);
        let csv = dir.path().join("sales.csv");
        std::fs::write(&csv, "a,b\n1,2\n").unwrap();
        let frames = load_path(&csv).unwrap();
        assert_eq!(frames[0].name(), "sales");
        assert_eq!(frames[0].row_count(), 1);
    }
}
