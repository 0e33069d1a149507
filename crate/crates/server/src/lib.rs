//! HTTP service and command-line front end for the nl2vis pipeline.

pub mod api;
pub mod cli;
pub mod jobs;
