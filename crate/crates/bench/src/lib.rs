//! Dataset ingestion, experiment orchestration and result tables for the
//! `specnet` command-line tool.

pub mod dataset;
pub mod experiment;
pub mod tables;
