//! Command-line driver for `irote-core`: the live chat-completions client,
//! response cache, bounded concurrency, item-bank and config files, run
//! directories and reports.

pub mod app;
pub mod bank;
pub mod cache;
pub mod cli;
pub mod gateway;
pub mod live;
pub mod report;
pub mod rundir;
pub mod settings;
