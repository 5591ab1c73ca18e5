//! Command-line front end for the open-world learner.

pub mod commands;
pub mod config;
