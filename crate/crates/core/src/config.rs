//! Run configuration and its defaults.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A count that may also be unbounded (`all`), used for ablations such as
/// selecting every accessible table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Limit {
    Count(usize),
    All,
}

impl Limit {
    pub fn get(self) -> usize {
        match self {
            Limit::Count(n) => n,
            Limit::All => usize::MAX,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Count(n) => write!(f, "{n}"),
            Limit::All => f.write_str("all"),
        }
    }
}

impl FromStr for Limit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" | "inf" | "∞" => Ok(Limit::All),
            n => n
                .parse()
                .map(Limit::Count)
                .map_err(|_| format!("expected a count or 'all', got '{s}'")),
        }
    }
}

impl Serialize for Limit {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Limit::Count(n) => s.serialize_u64(*n as u64),
            Limit::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for Limit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Limit::Count(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderMode {
    Http,
    #[default]
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Http,
    #[default]
    Scripted,
}

/// How few-shots are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotMode {
    /// Top `f` by similarity.
    #[default]
    Similar,
    /// Every schema-relevant shot, in database order.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Maximum number of tables kept by the schema refiner.
    pub t: Limit,
    /// Maximum number of values per Enum column.
    pub v_n: usize,
    /// Number of few-shots.
    pub f: usize,
    pub shot_mode: ShotMode,
    pub repair: bool,
    pub max_iterations: usize,
    pub jaccard_threshold: f64,
    pub substitution_threshold: f64,
    pub repeats: usize,
    pub enum_threshold: usize,
    pub token_warn_limit: usize,
    pub embedder: EmbedderMode,
    pub llm: LlmMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t: Limit::Count(9),
            v_n: 5,
            f: 2,
            shot_mode: ShotMode::Similar,
            repair: true,
            max_iterations: 3,
            jaccard_threshold: 0.7,
            substitution_threshold: 0.9,
            repeats: 3,
            enum_threshold: crate::catalog::DEFAULT_ENUM_THRESHOLD,
            token_warn_limit: 24_000,
            embedder: EmbedderMode::Deterministic,
            llm: LlmMode::Scripted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("jaccard_threshold", self.jaccard_threshold),
            ("substitution_threshold", self.substitution_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.t == Limit::Count(0) {
            return Err(ConfigError("t must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(ConfigError("max_iterations must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(ConfigError("repeats must be at least 1".into()));
        }
        if self.enum_threshold == 0 {
            return Err(ConfigError("enum_threshold must be at least 1".into()));
        }
        Ok(())
    }
}
