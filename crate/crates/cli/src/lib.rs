//! Command-line front end: configuration, commands and verification checks.

pub mod cache;
pub mod config;
pub mod exit;
pub mod synthetic;
pub mod verify;
pub mod commands;
