//! Turning flags, the config file and the environment into ready-to-use
//! inputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::ArgMatches;
use nl2kql::catalog::DataCatalog;
use nl2kql::config::{EmbedderMode, LlmMode, RunConfig};
use nl2kql::embed::{DeterministicEmbedder, EmbeddingProvider, HttpEmbedder, VectorStore};
use nl2kql::fewshot::{load_fsdb, parse_records, FewShotDb};
use nl2kql::llm::{ChatClient, HttpChatClient, ScriptedClient, ENV_TRANSCRIPT};
use nl2kql::stores::build_store;
use serde::Deserialize;

use crate::args::{Common, Tuning, TUNING_IDS};

/// File locations, from flags or the `[paths]` table of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub catalog: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub fsdb: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

pub struct Settings {
    pub config: RunConfig,
    pub paths: Paths,
}

/// Reads a TOML settings file: run configuration keys at the top level
/// and an optional `[paths]` table. Relative paths are resolved against
/// the file's directory.
pub fn read_config_file(path: &Path) -> Result<(RunConfig, Paths)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut paths = match table.remove("paths") {
        Some(v) => Paths::deserialize(v).with_context(|| format!("{}: [paths]", path.display()))?,
        None => Paths::default(),
    };
    let config = RunConfig::deserialize(toml::Value::Table(table)).with_context(|| format!("{}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [
        &mut paths.catalog,
        &mut paths.store,
        &mut paths.fsdb,
        &mut paths.transcript,
        &mut paths.data,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok((config, paths))
}

fn from_command_line(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn apply_flags(config: &mut RunConfig, t: &Tuning, m: &ArgMatches) -> Result<()> {
    for id in TUNING_IDS.iter().filter(|id| from_command_line(m, id)) {
        match *id {
            "t" => config.t = t.t,
            "v_n" => config.v_n = t.v_n,
            "f" => config.f = t.f,
            "shot_mode" => config.shot_mode = serde_json::from_value(serde_json::json!(t.shot_mode))?,
            "repair" => config.repair = t.repair,
            "max_iterations" => config.max_iterations = t.max_iterations,
            "jaccard_threshold" => config.jaccard_threshold = t.jaccard_threshold,
            "substitution_threshold" => config.substitution_threshold = t.substitution_threshold,
            "repeats" => config.repeats = t.repeats,
            "enum_threshold" => config.enum_threshold = t.enum_threshold,
            "token_warn_limit" => config.token_warn_limit = t.token_warn_limit,
            "embedder" => config.embedder = serde_json::from_value(serde_json::json!(t.embedder))?,
            "llm" => config.llm = serde_json::from_value(serde_json::json!(t.llm))?,
            other => unreachable!("unhandled tuning flag {other}"),
        }
    }
    Ok(())
}

/// Layers defaults, environment, config file and flags, in that order.
pub fn resolve(common: &Common, m: &ArgMatches) -> Result<Settings> {
    let mut paths = Paths {
        transcript: std::env::var_os(ENV_TRANSCRIPT).map(PathBuf::from),
        ..Paths::default()
    };
    let mut config = RunConfig::default();
    if let Some(file) = &common.config {
        let (c, p) = read_config_file(file)?;
        config = c;
        paths.catalog = p.catalog;
        paths.store = p.store;
        paths.fsdb = p.fsdb;
        paths.data = p.data;
        if p.transcript.is_some() {
            paths.transcript = p.transcript;
        }
    }
    apply_flags(&mut config, &common.tuning, m)?;
    for (slot, flag) in [
        (&mut paths.catalog, &common.catalog),
        (&mut paths.store, &common.store),
        (&mut paths.fsdb, &common.fsdb),
        (&mut paths.transcript, &common.transcript),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    config.validate()?;
    Ok(Settings { config, paths })
}

impl Settings {
    pub fn catalog(&self) -> Result<DataCatalog> {
        let Some(path) = &self.paths.catalog else {
            bail!("no catalog given; use --catalog or [paths] catalog in the config file");
        };
        Ok(DataCatalog::from_path(path)?)
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.config.embedder {
            EmbedderMode::Deterministic => Box::new(DeterministicEmbedder),
            EmbedderMode::Http => Box::new(HttpEmbedder::from_env()?),
        })
    }

    pub fn llm(&self) -> Result<Box<dyn ChatClient>> {
        Ok(match self.config.llm {
            LlmMode::Http => Box::new(HttpChatClient::from_env()?),
            LlmMode::Scripted => {
                let Some(path) = &self.paths.transcript else {
                    bail!("--llm scripted needs a transcript: use --transcript or set {ENV_TRANSCRIPT}");
                };
                Box::new(ScriptedClient::from_path(path)?)
            }
        })
    }

    fn fsdb_text(&self) -> Result<Option<String>> {
        self.paths
            .fsdb
            .as_ref()
            .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
            .transpose()
    }

    /// Loads the store, or builds it in memory when no path is given.
    pub fn store(&self, catalog: &DataCatalog, embedder: &dyn EmbeddingProvider) -> Result<VectorStore> {
        match &self.paths.store {
            Some(path) => {
                let store = VectorStore::load(path)?;
                if store.provider() != embedder.id() {
                    bail!(
                        "{} was built with embedder '{}' but '{}' is configured",
                        path.display(),
                        store.provider(),
                        embedder.id()
                    );
                }
                Ok(store)
            }
            None => {
                let nlqs = match self.fsdb_text()? {
                    Some(t) => parse_records(&t)?.into_iter().map(|r| r.nlq).collect(),
                    None => Vec::new(),
                };
                Ok(build_store(catalog, &nlqs, embedder)?)
            }
        }
    }

    pub fn fsdb(
        &self,
        catalog: &DataCatalog,
        embedder: &dyn EmbeddingProvider,
        store: &VectorStore,
    ) -> Result<FewShotDb> {
        match self.fsdb_text()? {
            Some(t) => Ok(load_fsdb(&t, catalog, embedder, Some(store))?),
            None => Ok(FewShotDb::empty(catalog.database.clone())),
        }
    }
}

/// The requested tables, or every catalog table when none are named.
pub fn accessible(catalog: &DataCatalog, requested: &[String]) -> Result<BTreeSet<String>> {
    if requested.is_empty() {
        return Ok(catalog.table_names());
    }
    let out: BTreeSet<String> = requested.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    for t in &out {
        if catalog.table(t).is_none() {
            log::warn!("accessible table '{t}' is not in the catalog");
        }
    }
    Ok(out)
}
