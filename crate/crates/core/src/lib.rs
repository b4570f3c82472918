//! Monitoring of monthly utility usage across a fleet of accounts.

pub mod calendar;
pub mod ingestion;
pub mod preprocess;
pub mod weather;
pub mod proportions;
pub mod flag;
pub mod quantile;
pub mod modelfree;
pub mod ablr;
pub mod clustering;
pub mod config;
pub mod simulate;
pub mod pipeline;
