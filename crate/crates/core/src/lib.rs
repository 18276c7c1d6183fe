//! Natural-language to KQL translation: catalog handling, embedding-based
//! schema refinement, few-shot retrieval, prompt assembly, query repair,
//! synthetic few-shot generation and evaluation.

pub mod catalog;
pub mod config;
pub mod embed;
pub mod eval;
pub mod fewshot;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod refine;
pub mod repair;
pub mod stores;
pub mod synthgen;
