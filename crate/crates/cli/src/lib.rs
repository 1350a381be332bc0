//! Pipeline driver for the `tailrank` binary: configuration, per-output
//! manifests and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
