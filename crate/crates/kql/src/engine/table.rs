//! Typed tables and the table data file format.
//!
//! ```text
//! DeviceInfo
//! DeviceId:string,Timestamp:datetime,OnboardingStatus:string
//! "d1",2024-01-01T00:00:00Z,"Onboarded"
//! "d2",2024-01-02T00:00:00Z,
//! ```
//!
//! Line 1 is the table name and line 2 the `name:type` header. Each later
//! record is a comma-separated row. Fields may be double-quoted, with `""`
//! standing for a literal quote; quoted fields may span lines. An empty
//! unquoted field is null, while `""` is the empty string. Blank lines are
//! ignored. Dynamic cells hold JSON text.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::schema::{ColumnType, Schema, TableSchema};

use super::value::{parse_datetime, parse_dynamic, parse_timespan, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub name: String,
    pub columns: Vec<(String, ColumnType)>,
    pub rows: Vec<Vec<Value>>,
}

impl DataTable {
    pub fn schema(&self) -> TableSchema {
        TableSchema::new(self.name.clone(), self.columns.clone())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{origin}: {message}")]
    Format { origin: String, message: String },
    #[error("{origin}: line {line}, column '{column}': {message}")]
    Cell {
        origin: String,
        line: usize,
        column: String,
        message: String,
    },
    #[error("table '{name}' is defined by both {first} and {second}")]
    DuplicateTable {
        name: String,
        first: String,
        second: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

struct Field {
    text: String,
    quoted: bool,
}

/// Splits the body into records of fields, tracking the starting line of
/// each record.
fn split_records(body: &str, first_line: usize, origin: &str) -> Result<Vec<(usize, Vec<Field>)>, LoadError> {
    let mut records = Vec::new();
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut in_quotes = false;
    let mut line = first_line;
    let mut record_line = first_line;
    let mut record_has_content = false;
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    cur.push('"');
                }
                '"' => in_quotes = false,
                '\n' => {
                    line += 1;
                    cur.push(c);
                }
                _ => cur.push(c),
            }
            continue;
        }
        match c {
            '"' if cur.is_empty() && !quoted => {
                in_quotes = true;
                quoted = true;
                record_has_content = true;
            }
            '"' => {
                return Err(LoadError::Format {
                    origin: origin.to_string(),
                    message: format!("line {line}: stray quote inside a field"),
                })
            }
            ',' => {
                fields.push(Field {
                    text: std::mem::take(&mut cur),
                    quoted,
                });
                quoted = false;
                record_has_content = true;
            }
            '\r' => {}
            '\n' => {
                if record_has_content || !cur.is_empty() {
                    fields.push(Field {
                        text: std::mem::take(&mut cur),
                        quoted,
                    });
                    records.push((record_line, std::mem::take(&mut fields)));
                }
                quoted = false;
                record_has_content = false;
                line += 1;
                record_line = line;
            }
            _ => {
                if quoted {
                    return Err(LoadError::Format {
                        origin: origin.to_string(),
                        message: format!("line {line}: text after closing quote"),
                    });
                }
                cur.push(c);
                record_has_content = true;
            }
        }
    }
    if in_quotes {
        return Err(LoadError::Format {
            origin: origin.to_string(),
            message: format!("line {record_line}: unterminated quoted field"),
        });
    }
    if record_has_content || !cur.is_empty() {
        fields.push(Field { text: cur, quoted });
        records.push((record_line, fields));
    }
    Ok(records)
}

fn parse_cell(field: &Field, ty: ColumnType) -> Result<Value, String> {
    if !field.quoted && field.text.is_empty() {
        return Ok(Value::Null);
    }
    let t = field.text.as_str();
    let bad = || format!("'{t}' is not a valid {ty}");
    Ok(match ty {
        ColumnType::String | ColumnType::Guid => Value::String(t.to_string()),
        ColumnType::Int | ColumnType::Long => Value::Long(t.trim().parse().map_err(|_| bad())?),
        ColumnType::Real | ColumnType::Decimal => {
            Value::Real(t.trim().parse().map_err(|_| bad())?)
        }
        ColumnType::Bool => match t.trim().to_ascii_lowercase().as_str() {
            "true" | "1" => Value::Bool(true),
            "false" | "0" => Value::Bool(false),
            _ => return Err(bad()),
        },
        ColumnType::DateTime => Value::DateTime(parse_datetime(t).ok_or_else(bad)?),
        ColumnType::Timespan => Value::Timespan(parse_timespan(t).ok_or_else(bad)?),
        ColumnType::Dynamic => Value::Dynamic(parse_dynamic(t).ok_or_else(bad)?),
    })
}

/// Parses one table data document. `origin` names it in errors.
pub fn parse_table(text: &str, origin: &str) -> Result<DataTable, LoadError> {
    let format_err = |message: String| LoadError::Format {
        origin: origin.to_string(),
        message,
    };
    let mut lines = text.splitn(3, '\n');
    let name = lines.next().unwrap_or("").trim().to_string();
    if name.is_empty() {
        return Err(format_err("missing table name on line 1".into()));
    }
    let header = lines
        .next()
        .ok_or_else(|| format_err("missing column header on line 2".into()))?
        .trim();
    let mut columns: Vec<(String, ColumnType)> = Vec::new();
    for part in header.split(',') {
        let (col, ty) = part
            .split_once(':')
            .ok_or_else(|| format_err(format!("header entry '{part}' is not name:type")))?;
        let col = col.trim().to_string();
        let ty: ColumnType = ty.trim().parse().map_err(|e| format_err(format!("{e}")))?;
        if col.is_empty() || columns.iter().any(|(c, _)| *c == col) {
            return Err(format_err(format!("empty or duplicate column name '{col}'")));
        }
        columns.push((col, ty));
    }
    let body = lines.next().unwrap_or("");
    let mut rows = Vec::new();
    for (line, fields) in split_records(body, 3, origin)? {
        if fields.len() != columns.len() {
            return Err(format_err(format!(
                "line {line}: expected {} fields, found {}",
                columns.len(),
                fields.len()
            )));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (field, (col, ty)) in fields.iter().zip(&columns) {
            let v = parse_cell(field, *ty).map_err(|message| LoadError::Cell {
                origin: origin.to_string(),
                line,
                column: col.clone(),
                message,
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(DataTable {
        name,
        columns,
        rows,
    })
}

/// An immutable set of tables.
#[derive(Debug, Clone, Default)]
pub struct Database {
    tables: BTreeMap<String, DataTable>,
    origins: BTreeMap<String, String>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, table: DataTable, origin: &str) -> Result<(), LoadError> {
        if let Some(first) = self.origins.get(&table.name) {
            return Err(LoadError::DuplicateTable {
                name: table.name.clone(),
                first: first.clone(),
                second: origin.to_string(),
            });
        }
        self.origins.insert(table.name.clone(), origin.to_string());
        self.tables.insert(table.name.clone(), table);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&DataTable> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &DataTable> {
        self.tables.values()
    }

    /// Every table, all accessible.
    pub fn schema(&self) -> Schema {
        let mut s = Schema::new();
        for t in self.tables.values() {
            s.add_table(t.schema());
        }
        s
    }
}

/// Loads table documents given as `(origin, text)` pairs.
pub fn load_database<'a>(
    documents: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<Database, LoadError> {
    let mut db = Database::new();
    for (origin, text) in documents {
        let table = parse_table(text, origin)?;
        db.insert(table, origin)?;
    }
    Ok(db)
}

/// Loads every `*.tbl` file in `dir`, in file-name order.
pub fn load_database_dir(dir: &Path) -> Result<Database, LoadError> {
    let io = |path: &Path, source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tbl"))
        .collect();
    paths.sort();
    let mut db = Database::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
        let origin = p.display().to_string();
        let table = parse_table(&text, &origin)?;
        db.insert(table, &origin)?;
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_two_rows() {
        let t = parse_table(
            "DeviceInfo\nDeviceId:string,Timestamp:datetime\n\"d1\",2024-01-01\n\"d2\",2024-01-02T10:00:00Z\n",
            "mem",
        )
        .unwrap();
        assert_eq!(t.name, "DeviceInfo");
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][0], Value::String("d1".into()));
    }

    #[test]
    fn null_versus_empty_string() {
        let t = parse_table("T\nA:string,B:long\n,\n\"\",5\n", "mem").unwrap();
        assert_eq!(t.rows[0], vec![Value::Null, Value::Null]);
        assert_eq!(t.rows[1], vec![Value::String(String::new()), Value::Long(5)]);
    }

    #[test]
    fn quoted_fields_with_commas_quotes_and_newlines() {
        let t = parse_table("T\nA:string,D:dynamic\n\"a,\"\"b\"\"\nc\",\"{\"\"k\"\": [1]}\"\n", "mem").unwrap();
        assert_eq!(t.rows[0][0], Value::String("a,\"b\"\nc".into()));
        assert_eq!(t.rows[0][1], Value::Dynamic(serde_json::json!({"k": [1]})));
    }

    #[test]
    fn type_error_names_cell() {
        let err = parse_table("T\nA:long\n1\nabc\n", "t.tbl").unwrap_err();
        match err {
            LoadError::Cell { line, column, .. } => {
                assert_eq!(line, 4);
                assert_eq!(column, "A");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn duplicate_tables_rejected() {
        let err = load_database([("a.tbl", "T\nA:long\n"), ("b.tbl", "T\nA:long\n")]).unwrap_err();
        assert!(matches!(err, LoadError::DuplicateTable { .. }));
    }

    #[test]
    fn field_count_mismatch() {
        assert!(parse_table("T\nA:long,B:long\n1\n", "mem").is_err());
    }
}
