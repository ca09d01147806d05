//! Support library behind the `handgcn` binary: configuration, dataset
//! loaders and their caches, checkpoint files, rendering, and the four
//! subcommand implementations. The binary itself only parses flags.

pub mod appconfig;
pub mod blobio;
pub mod checkpoint_io;
pub mod commands;
pub mod datasets;
pub mod imgio;
pub mod pickle;
pub mod plot;
pub mod rhd;
pub mod stb;
