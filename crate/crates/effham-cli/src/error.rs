//! One error type for the whole binary, rendered as machine-readable JSON
//! on stderr by `main`.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("cannot serialize result: {0}")]
    Encode(#[source] serde_json::Error),
    #[error("model: {0}")]
    Model(#[from] effham::model::ModelError),
    #[error("grid: {0}")]
    Grid(#[from] effham::grid::GridError),
    #[error("cell solve: {0}")]
    Cell(#[from] effham::cell::CellError),
    #[error("eigenvalue solve: {0}")]
    Spectral(#[from] effham::spectral::SpectralError),
    #[error("stationary density: {0}")]
    Density(#[from] effham::density::DensityError),
    #[error("occupation measure program: {0}")]
    Lp(#[from] effham::lp::LpError),
    #[error("simulation: {0}")]
    Sim(#[from] effham::sim::SimError),
    #[error("sweep: {0}")]
    Sweep(#[from] effham::sweep::SweepError),
}

impl CliError {
    /// Stable JSON shape for stderr: {"error": "..."}.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.to_string() }).to_string()
    }
}
