use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    String,
    Int,
    Long,
    Real,
    Decimal,
    Bool,
    DateTime,
    Timespan,
    Dynamic,
    Guid,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::String => "string",
            ColumnType::Int => "int",
            ColumnType::Long => "long",
            ColumnType::Real => "real",
            ColumnType::Decimal => "decimal",
            ColumnType::Bool => "bool",
            ColumnType::DateTime => "datetime",
            ColumnType::Timespan => "timespan",
            ColumnType::Dynamic => "dynamic",
            ColumnType::Guid => "guid",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            ColumnType::Int | ColumnType::Long | ColumnType::Real | ColumnType::Decimal
        )
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown column type '{0}'")]
pub struct UnknownType(pub String);

impl FromStr for ColumnType {
    type Err = UnknownType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "string" => ColumnType::String,
            "int" | "int32" => ColumnType::Int,
            "long" | "int64" => ColumnType::Long,
            "real" | "double" | "float" => ColumnType::Real,
            "decimal" => ColumnType::Decimal,
            "bool" | "boolean" => ColumnType::Bool,
            "datetime" | "date" => ColumnType::DateTime,
            "timespan" | "time" => ColumnType::Timespan,
            "dynamic" => ColumnType::Dynamic,
            "guid" | "uniqueid" => ColumnType::Guid,
            other => return Err(UnknownType(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<(String, ColumnType)>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, columns: Vec<(String, ColumnType)>) -> Self {
        TableSchema {
            name: name.into(),
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<ColumnType> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }
}

/// The tables a query is checked against. Tables outside `accessible`
/// exist but must not be queried.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    tables: BTreeMap<String, TableSchema>,
    accessible: BTreeSet<String>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a table that queries may use.
    pub fn add_table(&mut self, table: TableSchema) {
        self.accessible.insert(table.name.clone());
        self.tables.insert(table.name.clone(), table);
    }

    /// Adds a table that exists but is not accessible.
    pub fn add_hidden_table(&mut self, table: TableSchema) {
        self.accessible.remove(&table.name);
        self.tables.insert(table.name.clone(), table);
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(name)
    }

    pub fn is_accessible(&self, name: &str) -> bool {
        self.accessible.contains(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &TableSchema> {
        self.tables.values()
    }

    pub fn accessible_tables(&self) -> impl Iterator<Item = &TableSchema> {
        self.tables
            .values()
            .filter(|t| self.accessible.contains(&t.name))
    }
}
