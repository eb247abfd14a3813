//! Library surface behind the `effham` binary: configuration resolution,
//! versioned JSON/CSV export, and the cross-route validation pipeline.
//! Split from the binary so integration tests exercise the exact code paths
//! the tool runs.

pub mod config;
pub mod error;
pub mod io;
pub mod validate;
