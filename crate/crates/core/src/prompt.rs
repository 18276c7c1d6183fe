//! Prompt assembly from the shipped template.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::catalog::schema_listing;
use crate::fewshot::FewShot;
use crate::refine::RefinedSchema;

pub const TEMPLATE: &str = include_str!("../assets/prompt_template.md");

pub const SCHEMA: &str = "SCHEMA_PLACEHOLDER";
pub const VALUES: &str = "VALUES_PLACEHOLDER";
pub const EXAMPLES: &str = "EXAMPLES_PLACEHOLDER";
pub const USER_REQUEST: &str = "USER_REQUEST_PLACEHOLDER";

pub const NO_EXAMPLES: &str = "(no examples available)";
pub const NO_VALUES: &str = "(no values available)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub rendered: String,
    pub sections: BTreeMap<String, String>,
    pub token_estimate: usize,
}

impl PromptBundle {
    pub fn exceeds(&self, limit: usize) -> bool {
        self.token_estimate > limit
    }
}

/// `ceil(chars / 4)`.
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn schema_section(refined: &RefinedSchema) -> String {
    refined
        .tables
        .iter()
        .map(schema_listing)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// One `<table>.<column> can be: v1, v2` line per column, in the order
/// the columns first appear among the candidates.
pub fn values_section(refined: &RefinedSchema) -> String {
    let mut groups: Vec<(String, Vec<&str>)> = Vec::new();
    for v in &refined.candidate_values {
        let key = format!("{}.{}", v.table, v.column);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(&v.value),
            None => groups.push((key, vec![&v.value])),
        }
    }
    if groups.is_empty() {
        return NO_VALUES.to_string();
    }
    groups
        .into_iter()
        .map(|(k, vals)| format!("{k} can be: {}", vals.join(", ")))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn examples_section(shots: &[&FewShot]) -> String {
    if shots.is_empty() {
        return NO_EXAMPLES.to_string();
    }
    shots
        .iter()
        .map(|s| format!("Request: {}\n~~~kusto\n{}\n~~~", s.nlq.trim(), s.kql.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Fills every placeholder of the template.
pub fn build_prompt(refined: &RefinedSchema, shots: &[&FewShot], nlq: &str) -> PromptBundle {
    let mut sections = BTreeMap::new();
    sections.insert(SCHEMA.to_string(), schema_section(refined));
    sections.insert(VALUES.to_string(), values_section(refined));
    sections.insert(EXAMPLES.to_string(), examples_section(shots));
    sections.insert(USER_REQUEST.to_string(), nlq.to_string());
    let rendered = fill(TEMPLATE, &sections);
    PromptBundle {
        token_estimate: token_estimate(&rendered),
        rendered,
        sections,
    }
}

/// Replaces each `{{NAME}}` of `template` in one left-to-right pass, so
/// section text containing braces is never rescanned.
pub fn fill(template: &str, sections: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start + 2..].find("}}") else {
            break;
        };
        let name = &rest[start + 2..start + 2 + len];
        match sections.get(name) {
            Some(text) => {
                out.push_str(&rest[..start]);
                out.push_str(text);
            }
            None => out.push_str(&rest[..start + 2 + len + 2]),
        }
        rest = &rest[start + 2 + len + 2..];
    }
    out.push_str(rest);
    out
}

/// Names of the `{{...}}` placeholders in `template`, in order.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start + 2..].find("}}") else {
            break;
        };
        out.push(rest[start + 2..start + 2 + len].to_string());
        rest = &rest[start + 2 + len + 2..];
    }
    out
}

/// Text between the `# <from>` heading (inclusive) and the next `# `
/// heading of the template.
pub fn template_section(heading: &str) -> &'static str {
    let marker = format!("# {heading}\n");
    let start = TEMPLATE.find(&marker).unwrap_or(TEMPLATE.len());
    let body = &TEMPLATE[start..];
    let end = body[marker.len()..]
        .find("\n# ")
        .map(|i| i + marker.len() + 1)
        .unwrap_or(body.len());
    &body[..end]
}
