//! Every reference query form parses cleanly, lexes losslessly and
//! survives a render round-trip.

use std::path::PathBuf;

use kql::{parse, render, tokenize};

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn blocks(file: &str) -> Vec<String> {
    let text = std::fs::read_to_string(workspace().join("fixtures/kql").join(file)).unwrap();
    text.split("\n====\n").map(|b| b.trim_end_matches('\n').to_string()).collect()
}

/// `~~~kusto` fenced blocks of the prompt template, minus the output
/// placeholder in the reminder section.
fn template_snippets() -> Vec<String> {
    let text =
        std::fs::read_to_string(workspace().join("crates/core/assets/prompt_template.md")).unwrap();
    let mut out = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        match (&mut current, line.trim_end()) {
            (None, "~~~kusto") => current = Some(Vec::new()),
            (Some(body), "~~~") => {
                out.push(body.join("\n"));
                current = None;
            }
            (Some(body), _) => body.push(line),
            (None, _) => {}
        }
    }
    out.retain(|s| s.trim() != "KQL QUERY GOES HERE");
    out
}

fn corpus() -> Vec<String> {
    let mut all = blocks("forms.kql");
    all.extend(blocks("syntax_table.kql"));
    all.extend(template_snippets());
    all
}

#[test]
fn corpus_sizes() {
    assert_eq!(blocks("forms.kql").len(), 11);
    assert_eq!(template_snippets().len(), 3);
}

#[test]
fn corpus_parses_without_syntax_errors() {
    for q in corpus() {
        let parsed = parse(&q);
        let syntax: Vec<_> = parsed.diagnostics.iter().filter(|d| d.is_syntax()).collect();
        assert!(syntax.is_empty(), "{q}\n{syntax:?}");
        assert!(parsed.query.is_some(), "{q}");
    }
}

#[test]
fn corpus_lexes_losslessly() {
    for q in corpus() {
        let (tokens, diags) = tokenize(&q);
        assert!(diags.is_empty(), "{q}: {diags:?}");
        let joined: String = tokens.iter().map(|t| t.text).collect();
        assert_eq!(joined, q);
        for w in tokens.windows(2) {
            assert!(w[0].span.end <= w[1].span.start, "{q}");
        }
    }
}

#[test]
fn corpus_round_trips() {
    for q in corpus() {
        let first = parse(&q).query.unwrap();
        let printed = render(&first);
        let second = parse(&printed);
        assert!(!second.has_syntax_errors(), "{printed}\n{:?}", second.diagnostics);
        assert_eq!(second.query.as_ref(), Some(&first), "{q}\n--- rendered ---\n{printed}");
        assert_eq!(render(second.query.as_ref().unwrap()), printed, "render is a fixed point");
    }
}

#[test]
fn control_commands_are_rejected() {
    assert!(parse(".create table MyTable (Name: string, Value: int)").has_syntax_errors());
}

#[test]
fn stray_closers_terminate() {
    for text in [",]", "T ]", "T | where x ] }", "let a = 1 ]; T"] {
        assert!(parse(text).has_syntax_errors(), "{text}");
    }
}
