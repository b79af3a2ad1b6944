//! File formats: run configuration, CSV tables and PGM greymaps.

pub mod config;
pub mod pgm;
pub mod tables;
