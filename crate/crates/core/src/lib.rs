//! Natural-language-to-chart pipeline.
//!
//! A dataset is loaded ([`ingest`]), profiled ([`profile`]) and turned into a
//! two-part prompt together with the user's query ([`prompt`]). A language
//! model completes it ([`gateway`]), the reply becomes a runnable plotting
//! script ([`sanitize`]) and an external runner renders it ([`sandbox`]).
//! [`pipeline`] ties the stages together per model and [`harness`] replays
//! recorded case studies through them.

pub mod gateway;
pub mod harness;
pub mod ingest;
pub mod pipeline;
pub mod profile;
pub mod prompt;
pub mod sandbox;
pub mod sanitize;
