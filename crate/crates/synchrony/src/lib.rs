//! Files, training, evaluation and the `synchrony` command line on top of
//! `synchrony-core`.

pub mod cli;
pub mod config;
pub mod formats;
pub mod harness;
pub mod shell;
pub mod tables;
pub mod vizout;
