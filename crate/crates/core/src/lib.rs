pub mod cli;
pub mod code;
pub mod domain;
pub mod eval;
pub mod fixtures;
pub mod git;
pub mod http;
pub mod issue;
pub mod llm;
pub mod metrics;
pub mod registry;
pub mod session;
