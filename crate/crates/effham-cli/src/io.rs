//! Versioned JSON documents and CSV tables.
//!
//! Every JSON artifact is wrapped in a [`Document`] carrying a
//! `format_version` and a `kind` tag, and is written with a stable field
//! order so identical runs produce identical bytes. Re-importing a document
//! reproduces the exact floating-point values (the JSON layer is configured
//! for round-trip-faithful parsing). CSV files are the plotting boundary:
//! one header row, one record per line, floats printed in shortest
//! round-trip form.

use crate::error::CliError;
use effham::grid::ScalarField;
use effham::sweep::SigmaSweep;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// Envelope for every exported JSON result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub format_version: u32,
    pub kind: String,
    pub payload: T,
}

impl<T> Document<T> {
    pub fn new(kind: &str, payload: T) -> Self {
        Document { format_version: FORMAT_VERSION, kind: kind.to_string(), payload }
    }
}

pub fn write_json<T: Serialize>(path: &Path, doc: &Document<T>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(CliError::Encode)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Document<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.into(), source })?;
    let doc: Document<T> = serde_json::from_str(&text)
        .map_err(|e| CliError::Decode { path: path.into(), message: e.to_string() })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(CliError::Decode {
            path: path.into(),
            message: format!(
                "unsupported format_version {} (this build reads {})",
                doc.format_version, FORMAT_VERSION
            ),
        });
    }
    Ok(doc)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Density-style table: node coordinates and the field value.
pub fn write_field_csv(path: &Path, field: &ScalarField, name: &str) -> Result<(), CliError> {
    let grid = field.grid();
    let mut text = String::new();
    match grid.dim() {
        1 => {
            let _ = writeln!(text, "x,{name}");
            for k in grid.nodes() {
                let _ = writeln!(text, "{},{}", grid.coord(k)[0], field.get(k));
            }
        }
        _ => {
            let _ = writeln!(text, "x,y,{name}");
            for k in grid.nodes() {
                let c = grid.coord(k);
                let _ = writeln!(text, "{},{},{}", c[0], c[1], field.get(k));
            }
        }
    }
    write_text(path, &text)
}

/// σ-sweep table: one row per noise level.
pub fn write_sweep_csv(path: &Path, sweep: &SigmaSweep) -> Result<(), CliError> {
    let mut text = String::from("sigma,hbar,du_sup,theta_l1,action_gap,residual\n");
    for e in &sweep.entries {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            e.sigma, e.hbar, e.du_sup, e.theta_l1, e.action_gap, e.residual
        );
    }
    write_text(path, &text)
}

/// Validation check table: one row per judged quantity.
pub fn write_checks_csv(path: &Path, checks: &[crate::validate::CheckLine]) -> Result<(), CliError> {
    let mut text = String::from("check,value,comparison,threshold,pass\n");
    for c in checks {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            c.name,
            c.value,
            c.comparison.symbol(),
            c.threshold,
            c.pass
        );
    }
    write_text(path, &text)
}
