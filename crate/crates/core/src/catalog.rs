//! The semantic data catalog: tables, columns, types, descriptions and
//! enumerated values, plus the summaries that get embedded.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use kql::engine::{DataTable, Value};
use kql::{ColumnType, Schema, TableSchema};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::llm::{ChatClient, LlmError, LlmRequest};

/// Format marker for columns with enumerated values.
pub const ENUM_FORMAT: &str = "Enum";

/// Default upper bound on distinct sample values for an inferred Enum.
pub const DEFAULT_ENUM_THRESHOLD: usize = 20;

const SUMMARY_TEMPLATE: &str = include_str!("../assets/summary_prompt.md");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct CatalogValue {
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl CatalogValue {
    pub fn new(value: impl Into<String>) -> Self {
        CatalogValue {
            value: value.into(),
            description: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct CatalogColumn {
    pub name: String,
    #[serde(rename = "Type")]
    pub ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<CatalogValue>>,
}

impl CatalogColumn {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        CatalogColumn {
            name: name.into(),
            ty: ty.as_str().to_string(),
            description: None,
            format: None,
            values: None,
        }
    }

    pub fn is_enum(&self) -> bool {
        self.format.as_deref() == Some(ENUM_FORMAT)
    }

    pub fn column_type(&self) -> ColumnType {
        self.ty.parse().unwrap_or(ColumnType::String)
    }

    pub fn enum_values(&self) -> &[CatalogValue] {
        match (&self.values, self.is_enum()) {
            (Some(v), true) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct CatalogTable {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub columns: Vec<CatalogColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended_summary: Option<String>,
}

impl CatalogTable {
    pub fn column(&self, name: &str) -> Option<&CatalogColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_types(&self) -> BTreeSet<ColumnType> {
        self.columns.iter().map(CatalogColumn::column_type).collect()
    }

    pub fn schema(&self) -> TableSchema {
        TableSchema::new(
            self.name.clone(),
            self.columns
                .iter()
                .map(|c| (c.name.clone(), c.column_type()))
                .collect(),
        )
    }

    /// The stored extended summary, or the fallback text.
    pub fn summary_text(&self) -> String {
        match &self.extended_summary {
            Some(s) if !s.trim().is_empty() => s.clone(),
            _ => fallback_summary(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct DataCatalog {
    pub database: String,
    pub tables: Vec<CatalogTable>,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CatalogError {
    CatalogError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses and validates a catalog document.
pub fn load_catalog(bytes: &[u8]) -> Result<DataCatalog, CatalogError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let catalog: DataCatalog = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
    })?;
    catalog.validate()?;
    Ok(catalog)
}

impl DataCatalog {
    pub fn from_path(path: &Path) -> Result<Self, CatalogError> {
        let bytes = std::fs::read(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_catalog(&bytes)
    }

    /// Checks every structural invariant, naming the first offending path.
    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.database.trim().is_empty() {
            return Err(invalid("Database", "must not be empty"));
        }
        let mut tables = BTreeSet::new();
        for (ti, t) in self.tables.iter().enumerate() {
            let tp = format!("Tables[{ti}]");
            if t.name.trim().is_empty() {
                return Err(invalid(format!("{tp}.Name"), "must not be empty"));
            }
            if !tables.insert(t.name.as_str()) {
                return Err(invalid(format!("{tp}.Name"), format!("duplicate table '{}'", t.name)));
            }
            let mut cols = BTreeSet::new();
            for (ci, c) in t.columns.iter().enumerate() {
                let cp = format!("{tp}.Columns[{ci}]");
                if c.name.trim().is_empty() {
                    return Err(invalid(format!("{cp}.Name"), "must not be empty"));
                }
                if !cols.insert(c.name.as_str()) {
                    return Err(invalid(
                        format!("{cp}.Name"),
                        format!("duplicate column '{}' in table '{}'", c.name, t.name),
                    ));
                }
                if let Err(e) = c.ty.parse::<ColumnType>() {
                    return Err(invalid(format!("{cp}.Type"), e.to_string()));
                }
                if let Some(f) = &c.format {
                    if f != ENUM_FORMAT {
                        return Err(invalid(format!("{cp}.Format"), format!("unknown format '{f}'")));
                    }
                }
                if let Some(values) = &c.values {
                    if !c.is_enum() {
                        return Err(invalid(format!("{cp}.Values"), "values require Format \"Enum\""));
                    }
                    for (vi, v) in values.iter().enumerate() {
                        if v.value.is_empty() {
                            return Err(invalid(format!("{cp}.Values[{vi}].Value"), "must not be empty"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&CatalogTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_names(&self) -> BTreeSet<String> {
        self.tables.iter().map(|t| t.name.clone()).collect()
    }

    /// Parser schema with every table accessible.
    pub fn schema(&self) -> Schema {
        let mut s = Schema::new();
        for t in &self.tables {
            s.add_table(t.schema());
        }
        s
    }

    /// Parser schema where only `accessible` tables may be queried.
    pub fn schema_for(&self, accessible: &BTreeSet<String>) -> Schema {
        let mut s = Schema::new();
        for t in &self.tables {
            if accessible.contains(&t.name) {
                s.add_table(t.schema());
            } else {
                s.add_hidden_table(t.schema());
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("catalog serializes");
        s.push('\n');
        s
    }

    /// Marks low-cardinality string columns as Enum using sample data.
    /// Columns that already carry values are left alone. Returns how many
    /// columns changed.
    pub fn enrich_from_samples<'a>(
        &mut self,
        samples: impl IntoIterator<Item = &'a DataTable>,
        threshold: usize,
    ) -> usize {
        let mut changed = 0;
        for sample in samples {
            let Some(table) = self.tables.iter_mut().find(|t| t.name == sample.name) else {
                continue;
            };
            for (col, values) in infer_enum_values(sample, threshold) {
                let Some(c) = table.columns.iter_mut().find(|c| c.name == col) else {
                    continue;
                };
                if c.values.as_ref().is_some_and(|v| !v.is_empty()) {
                    continue;
                }
                c.format = Some(ENUM_FORMAT.to_string());
                c.values = Some(values);
                changed += 1;
            }
        }
        changed
    }
}

/// Distinct non-null values of each string column with at most
/// `threshold` of them, sorted.
pub fn infer_enum_values(sample: &DataTable, threshold: usize) -> BTreeMap<String, Vec<CatalogValue>> {
    let mut out = BTreeMap::new();
    for (i, (name, ty)) in sample.columns.iter().enumerate() {
        if *ty != ColumnType::String {
            continue;
        }
        let distinct: BTreeSet<&str> = sample
            .rows
            .iter()
            .filter_map(|r| match &r[i] {
                Value::String(s) => Some(s.as_str()),
                _ => None,
            })
            .collect();
        if distinct.is_empty() || distinct.len() > threshold {
            continue;
        }
        out.insert(name.clone(), distinct.into_iter().map(CatalogValue::new).collect());
    }
    out
}

/// `Name: / Description: / Columns: [...]` block in the listing style the
/// prompts use.
pub fn schema_listing(table: &CatalogTable) -> String {
    let cols: Vec<String> = table
        .columns
        .iter()
        .map(|c| format!("'{}'", c.name.replace('\'', "\\'")))
        .collect();
    format!(
        "Name: {}\nDescription: {}\nColumns: [{}]",
        table.name,
        table.description.trim(),
        cols.join(", ")
    )
}

/// Prompt asking for an extended table summary.
pub fn summary_prompt(table: &CatalogTable) -> String {
    SUMMARY_TEMPLATE.replace("{{TABLE_PLACEHOLDER}}", &schema_listing(table))
}

/// `<name>. <description>. Columns: a, b, c`, skipping an empty
/// description.
pub fn fallback_summary(table: &CatalogTable) -> String {
    let mut out = format!("{}.", table.name);
    let desc = table.description.trim().trim_end_matches('.');
    if !desc.is_empty() {
        out.push(' ');
        out.push_str(desc);
        out.push('.');
    }
    let cols: Vec<&str> = table.columns.iter().map(|c| c.name.as_str()).collect();
    out.push_str(" Columns: ");
    out.push_str(&cols.join(", "));
    out
}

/// Asks `llm` for an extended summary, using the fallback text when the
/// call fails or returns nothing.
pub fn table_extended_summary(table: &CatalogTable, llm: &dyn ChatClient) -> String {
    match request_summary(table, llm) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("summary for {} fell back to catalog text: {e}", table.name);
            fallback_summary(table)
        }
    }
}

fn request_summary(table: &CatalogTable, llm: &dyn ChatClient) -> Result<String, LlmError> {
    let resp = llm.complete(&LlmRequest::prompt(summary_prompt(table)))?;
    let text = resp.text.trim();
    if text.is_empty() {
        return Err(LlmError::Malformed("empty summary".into()));
    }
    Ok(text.to_string())
}

/// Fills `extended_summary` for every table, one request per table.
pub fn summarize_catalog(catalog: &mut DataCatalog, llm: &dyn ChatClient) {
    let summaries: Vec<String> = catalog
        .tables
        .par_iter()
        .map(|t| table_extended_summary(t, llm))
        .collect();
    for (t, s) in catalog.tables.iter_mut().zip(summaries) {
        t.extended_summary = Some(s);
    }
}

/// `<table> <column> <value> <description?>`.
pub fn value_summary(table: &str, column: &str, value: &CatalogValue) -> String {
    let mut parts = vec![table, column, value.value.as_str()];
    if let Some(d) = value.description.as_deref().map(str::trim).filter(|d| !d.is_empty()) {
        parts.push(d);
    }
    parts.join(" ")
}

/// Splits an identifier into words at underscores, dashes, dots,
/// lower-to-upper changes and the end of an acronym: `IPAddress_v2`
/// becomes `IP Address v2`.
pub fn split_identifier(name: &str) -> String {
    let chars: Vec<char> = name.chars().collect();
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if let Some(&prev) = cur.chars().last().as_ref() {
            let next = chars.get(i + 1).copied();
            let boundary = (prev.is_lowercase() && c.is_uppercase())
                || (prev.is_uppercase()
                    && c.is_uppercase()
                    && next.is_some_and(|n| n.is_lowercase()))
                || (prev.is_alphabetic() != c.is_alphabetic());
            if boundary {
                words.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.join(" ")
}

/// Text embedded for a column: its split name plus its description.
pub fn column_summary(column: &CatalogColumn) -> String {
    let mut s = split_identifier(&column.name);
    if s.is_empty() {
        s = column.name.clone();
    }
    if let Some(d) = column.description.as_deref().map(str::trim).filter(|d| !d.is_empty()) {
        s.push(' ');
        s.push_str(d);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(name: &str, desc: &str, cols: &[&str]) -> CatalogTable {
        CatalogTable {
            name: name.into(),
            description: desc.into(),
            columns: cols.iter().map(|c| CatalogColumn::new(*c, ColumnType::String)).collect(),
            extended_summary: None,
        }
    }

    #[test]
    fn fallback_summary_format() {
        let t = table("DeviceInfo", "Machine information, including OS information", &["Timestamp", "DeviceId"]);
        assert_eq!(
            fallback_summary(&t),
            "DeviceInfo. Machine information, including OS information. Columns: Timestamp, DeviceId"
        );
        let t = table("T", "  ", &["A"]);
        assert_eq!(fallback_summary(&t), "T. Columns: A");
    }

    #[test]
    fn value_summaries() {
        let mut v = CatalogValue::new("High");
        assert_eq!(value_summary("DeviceInfo", "ExposureLevel", &v), "DeviceInfo ExposureLevel High");
        v.description = Some("critical asset".into());
        assert_eq!(
            value_summary("DeviceInfo", "ExposureLevel", &v),
            "DeviceInfo ExposureLevel High critical asset"
        );
        v.description = Some(String::new());
        assert_eq!(value_summary("DeviceInfo", "ExposureLevel", &v), "DeviceInfo ExposureLevel High");
    }

    #[test]
    fn identifier_splitting() {
        assert_eq!(split_identifier("DeviceName"), "Device Name");
        assert_eq!(split_identifier("IPAddress_v2"), "IP Address v 2");
        assert_eq!(split_identifier("device_name"), "device name");
        assert_eq!(split_identifier("OSPlatform"), "OS Platform");
        assert_eq!(split_identifier("_BilledSize"), "Billed Size");
        assert_eq!(split_identifier("csBytes"), "cs Bytes");
    }

    #[test]
    fn validation_names_paths() {
        let good = r#"{"Database":"D","Tables":[{"Name":"T","Description":"d","Columns":[{"Name":"A","Type":"string"}]}]}"#;
        assert!(load_catalog(good.as_bytes()).is_ok());

        let cases = [
            (good.replace("\"string\"", "\"blob\""), "Tables[0].Columns[0].Type"),
            (good.replace("\"Type\"", "\"Kind\""), "Tables[0].Columns[0].Kind"),
            (
                good.replace(r#""Type":"string""#, r#""Type":"string","Values":[{"Value":"x"}]"#),
                "Tables[0].Columns[0].Values",
            ),
            (
                good.replace(r#""Type":"string""#, r#""Type":"string","Format":"Enum","Values":[{"Value":""}]"#),
                "Tables[0].Columns[0].Values[0].Value",
            ),
            (
                good.replace(r#"{"Name":"A","Type":"string"}"#, r#"{"Name":"A","Type":"string"},{"Name":"A","Type":"long"}"#),
                "Tables[0].Columns[1].Name",
            ),
        ];
        for (doc, path) in cases {
            match load_catalog(doc.as_bytes()) {
                Err(CatalogError::Invalid { path: p, .. }) => assert_eq!(p, path, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }
}
