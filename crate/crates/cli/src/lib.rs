//! Configuration-driven front end for `ratectl-core`.

pub mod commands;
pub mod config;
pub mod policy_io;
