//! Command-line front end for the FAVAR toolkit.

pub mod commands;
pub mod config;
