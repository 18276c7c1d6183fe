use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ArgMatches;
use kql::engine::load_database_dir;
use nl2kql::catalog::summarize_catalog;
use nl2kql::eval::{parse_benchmark, run_benchmark, EvalEnv};
use nl2kql::fewshot::{parse_records, write_records};
use nl2kql::pipeline::{TranslationResult, Translator};
use nl2kql::repair::{repair, RepairOptions, Substitution};
use nl2kql::synthgen::{synthesize, SynthOptions};

use crate::args::{CatalogCommand, Cli, Command, EmbedCommand, EvalArgs, ReplArgs, SynthArgs, TranslateArgs};
use crate::setup::{accessible, resolve, Settings};
use crate::{EXIT_FAILURE, EXIT_USAGE};

/// Matches of the innermost subcommand, where the flags live.
fn leaf(m: &ArgMatches) -> &ArgMatches {
    match m.subcommand() {
        Some((_, sub)) => leaf(sub),
        None => m,
    }
}

pub fn run(cli: Cli, matches: &ArgMatches) -> Result<u8> {
    let m = leaf(matches);
    match cli.command {
        Command::Catalog(CatalogCommand::Validate { common }) => {
            let s = resolve(&common, m)?;
            let c = s.catalog()?;
            let columns: usize = c.tables.iter().map(|t| t.columns.len()).sum();
            let enums: usize = c.tables.iter().flat_map(|t| &t.columns).filter(|c| c.is_enum()).count();
            println!("{}: {} tables, {columns} columns, {enums} enum columns", c.database, c.tables.len());
            Ok(0)
        }
        Command::Catalog(CatalogCommand::Enrich {
            common,
            data,
            summarize,
            out,
        }) => {
            let s = resolve(&common, m)?;
            let mut c = s.catalog()?;
            if let Some(dir) = data {
                let db = load_database_dir(&dir)?;
                let n = c.enrich_from_samples(db.tables(), s.config.enum_threshold);
                eprintln!("marked {n} column(s) as Enum");
            }
            if summarize {
                let llm = s.llm()?;
                summarize_catalog(&mut c, llm.as_ref());
            }
            c.validate()?;
            write_file(&out, &c.to_json())?;
            Ok(0)
        }
        Command::Embed(EmbedCommand::Build { common, out }) => {
            let s = resolve(&common, m)?;
            let c = s.catalog()?;
            let embedder = s.embedder()?;
            let mut no_store = Settings {
                config: s.config.clone(),
                paths: Default::default(),
            };
            no_store.paths.fsdb = s.paths.fsdb.clone();
            let store = no_store.store(&c, embedder.as_ref())?;
            store.save(&out)?;
            eprintln!("wrote {} vectors to {}", store.len(), out.display());
            Ok(0)
        }
        Command::Synth(a) => synth(a, m),
        Command::Translate(a) => translate(a, m),
        Command::Repl(a) => repl(a, m),
        Command::Repair(a) => {
            let s = resolve(&a.common, m)?;
            let c = s.catalog()?;
            let text = if a.file.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin())?
            } else {
                std::fs::read_to_string(&a.file).with_context(|| format!("reading {}", a.file.display()))?
            };
            let scope = accessible(&c, &a.scope.accessible)?;
            let embedder = s.embedder()?;
            let store = s.store(&c, embedder.as_ref())?;
            let sub = Substitution::new(&store, embedder.as_ref(), s.config.substitution_threshold);
            let outcome = repair(
                text.trim(),
                &c.schema_for(&scope),
                Some(&sub),
                &RepairOptions {
                    max_iterations: s.config.max_iterations,
                    substitution_threshold: s.config.substitution_threshold,
                },
            );
            println!("{}", serde_json::to_string_pretty(&outcome)?);
            Ok(if outcome.fixed { 0 } else { EXIT_FAILURE })
        }
        Command::Eval(a) => eval(a, m),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs, m: &ArgMatches) -> Result<u8> {
    let s = resolve(&a.common, m)?;
    let c = s.catalog()?;
    let llm = s.llm()?;
    let existing = match std::fs::read_to_string(&a.out) {
        Ok(t) => parse_records(&t)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e).with_context(|| format!("reading {}", a.out.display())),
    };
    let report = synthesize(
        &c,
        llm.as_ref(),
        &SynthOptions {
            count: a.count,
            seed: a.seed,
            threshold: s.config.jaccard_threshold,
        },
        &existing,
    );
    let mut all = existing;
    all.extend(report.accepted.iter().cloned());
    write_file(&a.out, &write_records(&all))?;
    if let Some(path) = &a.report {
        write_file(path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    let n = &report.counts;
    eprintln!(
        "accepted {} (duplicates {}), rejected: syntax {}, semantic {}, similarity {}; aborted {}",
        n.accepted, n.duplicates, n.rejected_syntax, n.rejected_semantic, n.rejected_similarity, n.aborted
    );
    Ok(0)
}

/// Repair notes for standard error.
fn notes(r: &TranslationResult) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(e) = &r.error {
        out.push(format!("failed at {}: {}", e.stage, e.message));
    }
    if let Some(rep) = &r.repair {
        if !rep.applied_rules.is_empty() {
            let rules: Vec<&str> = rep.applied_rules.iter().map(|r| r.as_str()).collect();
            out.push(format!("repaired with {}", rules.join(", ")));
        }
        for d in &rep.remaining {
            out.push(format!("unresolved: {d}"));
        }
    }
    out
}

fn translate(a: TranslateArgs, m: &ArgMatches) -> Result<u8> {
    let s = resolve(&a.common, m)?;
    let catalog = s.catalog()?;
    let scope = accessible(&catalog, &a.scope.accessible)?;
    let embedder = s.embedder()?;
    let store = s.store(&catalog, embedder.as_ref())?;
    let fsdb = s.fsdb(&catalog, embedder.as_ref(), &store)?;
    let llm = s.llm()?;
    let t = Translator {
        catalog: &catalog,
        store: &store,
        fsdb: &fsdb,
        embedder: embedder.as_ref(),
        llm: llm.as_ref(),
        config: &s.config,
    };
    let r = t.translate(&a.nlq, &scope);
    if let (Some(path), Some(p)) = (&a.dump_prompt, &r.prompt) {
        if path.as_os_str() == "-" {
            eprintln!("{}", p.rendered);
        } else {
            write_file(path, &p.rendered)?;
        }
    }
    for n in notes(&r) {
        eprintln!("{n}");
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else if let Some(k) = &r.final_kql {
        println!("{k}");
    }
    Ok(if r.succeeded() { 0 } else { EXIT_FAILURE })
}

fn repl(a: ReplArgs, m: &ArgMatches) -> Result<u8> {
    let s = resolve(&a.common, m)?;
    let catalog = s.catalog()?;
    let scope = accessible(&catalog, &a.scope.accessible)?;
    let embedder = s.embedder()?;
    let store = s.store(&catalog, embedder.as_ref())?;
    let fsdb = s.fsdb(&catalog, embedder.as_ref(), &store)?;
    let llm = s.llm()?;
    let t = Translator {
        catalog: &catalog,
        store: &store,
        fsdb: &fsdb,
        embedder: embedder.as_ref(),
        llm: llm.as_ref(),
        config: &s.config,
    };
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    loop {
        write!(out, "nlq> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(0);
        }
        let nlq = line.trim();
        if nlq.is_empty() {
            continue;
        }
        if matches!(nlq, "exit" | "quit") {
            return Ok(0);
        }
        let r = t.translate(nlq, &scope);
        if let Some(k) = &r.final_kql {
            writeln!(out, "{k}")?;
        }
        for n in notes(&r) {
            writeln!(out, "-- {n}")?;
        }
    }
}

fn eval(a: EvalArgs, m: &ArgMatches) -> Result<u8> {
    let s = resolve(&a.common, m)?;
    let catalog = s.catalog()?;
    let Some(data) = a.data.as_ref().or(s.paths.data.as_ref()) else {
        eprintln!("error: eval needs --data (or [paths] data in the config file)");
        return Ok(EXIT_USAGE);
    };
    if a.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let text = std::fs::read_to_string(&a.benchmark).with_context(|| format!("reading {}", a.benchmark.display()))?;
    let samples = parse_benchmark(&text)?;
    let db = load_database_dir(data)?;
    let scope = catalog.table_names();
    let embedder = s.embedder()?;
    let store = s.store(&catalog, embedder.as_ref())?;
    let fsdb = s.fsdb(&catalog, embedder.as_ref(), &store)?;
    let llm = s.llm()?;
    let t = Translator {
        catalog: &catalog,
        store: &store,
        fsdb: &fsdb,
        embedder: embedder.as_ref(),
        llm: llm.as_ref(),
        config: &s.config,
    };
    let mut envs = BTreeMap::new();
    envs.insert(
        catalog.database.clone(),
        EvalEnv {
            schema: catalog.schema(),
            db,
        },
    );
    let translate_fn = |sample: &nl2kql::eval::BenchmarkSample| -> Result<String, String> {
        let r = t.translate(&sample.nlq, &scope);
        match (r.final_kql, r.error) {
            (_, Some(e)) => Err(format!("{}: {}", e.stage, e.message)),
            (Some(k), None) => Ok(k),
            (None, None) => Err("no query produced".into()),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let report = pool.install(|| {
        run_benchmark(
            &samples,
            &translate_fn,
            &envs,
            s.config.repeats,
            serde_json::to_value(&s.config).expect("config serializes"),
        )
    });
    if let Some(out) = &a.out {
        write_file(out, &report.to_json())?;
    }
    print!("{}", report.to_markdown());
    Ok(0)
}
