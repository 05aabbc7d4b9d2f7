//! Instance generation, experiment orchestration and the clearing oracle
//! behind the `crisis` command-line tool.

pub mod config;
pub mod experiment;
pub mod instance;
pub mod oracle;
pub mod seeds;
