//! Generators shared by the property tests and the acceptance suite.
#![allow(dead_code)]

pub mod frames;
pub mod mutations;

use std::path::PathBuf;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}
