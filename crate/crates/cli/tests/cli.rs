use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn nl2kql(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nl2kql"));
    c.args(args).env_remove("LLM_TRANSCRIPT").env_remove("RUST_LOG");
    c
}

fn with_inputs(args: &[&str]) -> Command {
    let mut c = nl2kql(args);
    c.arg("--catalog")
        .arg(fixture("catalogs/defender.json"))
        .arg("--fsdb")
        .arg(fixture("fsdb/defender.jsonl"))
        .arg("--transcript")
        .arg(fixture("transcripts/defender_toy.jsonl"));
    c
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn translate_prints_the_query() {
    let o = with_inputs(&["translate", "--nlq", "List all devices"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "DeviceInfo\n| project DeviceId, DeviceName\n");
}

#[test]
fn translate_reports_repairs_on_stderr() {
    let o = with_inputs(&["translate", "--nlq", "Show the day of each successful network connection"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("| extend Day = startofday(Timestamp)"), "{}", stdout(&o));
    assert!(stderr(&o).contains("repaired with missing-extend"), "{}", stderr(&o));
}

#[test]
fn empty_completion_is_a_domain_error() {
    let o = with_inputs(&["translate", "--nlq", "Show the newest logon event of each device"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).is_empty());
}

#[test]
fn zero_shot_prompt_has_no_examples() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("prompt.md");
    let flag = format!("--dump-prompt={}", dump.display());
    let o = with_inputs(&["translate", "--f", "0", "--nlq", "List all devices", &flag])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let prompt = std::fs::read_to_string(dump).unwrap();
    assert!(prompt.contains("(no examples available)"));
    assert!(prompt.contains("List all devices"));
}

#[test]
fn json_output_carries_the_trace() {
    let o = with_inputs(&["translate", "--json", "--repair", "false", "--nlq", "List all devices"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let stages: Vec<(&str, &str)> = v["trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["stage"].as_str().unwrap(), s["status"].as_str().unwrap()))
        .collect();
    assert_eq!(stages.len(), 6);
    assert_eq!(stages[5], ("repair", "skipped"));
    assert!(v["repair"].is_null());
}

#[test]
fn eval_without_benchmark_is_a_usage_error() {
    let o = nl2kql(&["eval"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--benchmark"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = nl2kql(&["translate", "--nlq", "x", "--frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_usage_errors() {
    for args in [
        &["translate", "--nlq", "x", "--t", "nine"][..],
        &["translate", "--nlq", "x", "--llm", "magic"][..],
        &["translate", "--nlq", "x", "--repair", "maybe"][..],
    ] {
        assert_eq!(nl2kql(args).output().unwrap().status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn out_of_range_threshold_is_a_domain_error() {
    let o = with_inputs(&["translate", "--nlq", "x", "--jaccard-threshold", "1.5"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_catalog_is_a_domain_error() {
    let o = nl2kql(&["catalog", "validate", "--catalog", "/nonexistent/catalog.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn help_and_version_exit_zero() {
    for args in [&["--help"][..], &["--version"][..], &["translate", "--help"][..]] {
        let o = nl2kql(args).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn help_lists_every_tuning_flag_with_its_default() {
    let o = nl2kql(&["translate", "--help"]).output().unwrap();
    let help = stdout(&o);
    for (flag, default) in [
        ("--t", "9"),
        ("--v-n", "5"),
        ("--f", "2"),
        ("--shot-mode", "similar"),
        ("--repair", "true"),
        ("--max-iterations", "3"),
        ("--jaccard-threshold", "0.7"),
        ("--substitution-threshold", "0.9"),
        ("--repeats", "3"),
        ("--enum-threshold", "20"),
        ("--token-warn-limit", "24000"),
        ("--embedder", "deterministic"),
        ("--llm", "scripted"),
    ] {
        let line = help
            .lines()
            .find(|l| l.trim_start().starts_with(&format!("{flag} ")))
            .unwrap_or_else(|| panic!("{flag} missing from help"));
        let block = help.split(line).nth(1).unwrap_or("");
        let shown = line.contains(&format!("[default: {default}]"))
            || block.lines().take(3).any(|l| l.contains(&format!("[default: {default}]")));
        assert!(shown, "{flag} does not show default {default}:\n{line}");
    }
}

#[test]
fn config_file_overrides_defaults_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "t = \"all\"\nf = 0\n\n[paths]\ncatalog = \"{}\"\n",
            fixture("catalogs/defender.json").display()
        ),
    )
    .unwrap();
    let run = |extra: &[&str]| -> serde_json::Value {
        let o = nl2kql(&["translate", "--json", "--nlq", "List all devices", "--config"])
            .arg(&cfg)
            .arg("--transcript")
            .arg(fixture("transcripts/defender_toy.jsonl"))
            .args(extra)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        serde_json::from_str(&stdout(&o)).unwrap()
    };
    let v = run(&[]);
    assert_eq!(v["tables"].as_array().unwrap().len(), 29);
    let v = run(&["--t", "4"]);
    assert_eq!(v["tables"].as_array().unwrap().len(), 4);
}

#[test]
fn transcript_flag_beats_the_environment() {
    let o = nl2kql(&["translate", "--nlq", "List all devices", "--catalog"])
        .arg(fixture("catalogs/defender.json"))
        .env("LLM_TRANSCRIPT", "/nonexistent/transcript.jsonl")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "the environment transcript is used when no flag is given");
    let o = nl2kql(&["translate", "--nlq", "List all devices", "--catalog"])
        .arg(fixture("catalogs/defender.json"))
        .env("LLM_TRANSCRIPT", "/nonexistent/transcript.jsonl")
        .arg("--transcript")
        .arg(fixture("transcripts/defender_toy.jsonl"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn repair_command_reports_outcome_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let fixable = dir.path().join("fixable.kql");
    std::fs::write(&fixable, "DeviceInfo | where Timestamp between ago(1d) .. now()\n").unwrap();
    let o = nl2kql(&["repair", "--catalog"])
        .arg(fixture("catalogs/defender.json"))
        .arg(&fixable)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["fixed"], true);
    assert_eq!(v["final_kql"], "DeviceInfo\n| where Timestamp between (ago(1d) .. now())");

    let broken = dir.path().join("broken.kql");
    std::fs::write(&broken, "NoSuchTable | take 5").unwrap();
    let o = nl2kql(&["repair", "--catalog"])
        .arg(fixture("catalogs/defender.json"))
        .arg(&broken)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["fixed"], false);
    assert_eq!(v["final_kql"], "NoSuchTable | take 5");
}

#[test]
fn inaccessible_table_is_never_laundered() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.kql");
    std::fs::write(&q, "AlertInfo | take 5").unwrap();
    let o = nl2kql(&["repair", "--accessible", "DeviceInfo,DeviceLogonEvents", "--catalog"])
        .arg(fixture("catalogs/defender.json"))
        .arg(&q)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["final_kql"], "AlertInfo | take 5");
    assert!(!v["remaining"].as_array().unwrap().is_empty());
}

#[test]
fn embed_build_then_translate_with_the_saved_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let out = format!("--out={}", store.display());
    let o = with_inputs(&["embed", "build", &out]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let flag = format!("--store={}", store.display());
    let o = with_inputs(&["translate", "--nlq", "List all devices", &flag])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "DeviceInfo\n| project DeviceId, DeviceName\n");
}

#[test]
fn catalog_validate_summarizes() {
    let o = nl2kql(&["catalog", "validate", "--catalog"])
        .arg(fixture("catalogs/sentinel.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("Sentinel: 23 tables,"), "{}", stdout(&o));
}

#[test]
fn repl_translates_each_line() {
    use std::io::Write;
    let mut child = with_inputs(&["repl"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"List all devices\n\nquit\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nlq> DeviceInfo\n| project DeviceId, DeviceName\n"), "{}", stdout(&o));
}

#[test]
fn shipped_settings_file_drives_eval() {
    let o = nl2kql(&["eval", "--benchmark"])
        .arg(fixture("benchmark/defender_toy.jsonl"))
        .arg("--config")
        .arg(fixture("defender.toml"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("| Run | Syntax | Semantic | Table | Filter_col | Filter_lit | Row | Column | Avg |"));
    assert_eq!(out.lines().filter(|l| l.starts_with("| repeat ")).count(), 3);
}
