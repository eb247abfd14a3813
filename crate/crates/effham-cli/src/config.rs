//! Configuration resolution: built-in defaults, then a JSON config file,
//! then explicit command-line flags, in increasing precedence. The JSON
//! file's field names mirror the long flag names. `SM_OUT_DIR` supplies the
//! default output directory when neither a flag nor the config names one.

use crate::error::CliError;
use effham::grid::{ScalarField, TorusGrid};
use effham::model::HamiltonianModel;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Every knob any subcommand reads, as optional overrides. A config file may
/// set any subset; fields irrelevant to the invoked subcommand are ignored.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub p: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub eig_tol: Option<f64>,
    pub eig_max_iter: Option<usize>,
    pub dp: Option<f64>,
    pub v_max: Option<f64>,
    pub m: Option<usize>,
    pub n_lp: Option<usize>,
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub sigmas: Option<Vec<f64>>,
    pub sweep: Option<bool>,
    pub concurrent: Option<bool>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.into(), source })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Decode { path: path.into(), message: e.to_string() })
    }
}

/// Fully resolved settings for a run; echoed verbatim into reports so a
/// report pins the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    pub p: Vec<f64>,
    pub sigma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub dp: f64,
    pub v_max: f64,
    pub m: usize,
    pub n_lp: usize,
    pub t_final: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub sigmas: Vec<f64>,
    pub sweep: bool,
    pub concurrent: bool,
    pub out_dir: PathBuf,
}

pub mod defaults {
    pub const SIGMA: f64 = 1.0;
    pub const TOL: f64 = 1e-8;
    pub const MAX_ITER: usize = 100;
    pub const EIG_TOL: f64 = 1e-10;
    pub const EIG_MAX_ITER: usize = 10_000;
    pub const DP: f64 = 1e-2;
    pub const V_MAX: f64 = 4.0;
    pub const M: usize = 41;
    pub const T_FINAL: f64 = 100.0;
    pub const DT: f64 = 1e-3;
    pub const PATHS: usize = 64;
    pub const SEED: u64 = 7;
    pub const SIGMAS: [f64; 5] = [1.0, 0.5, 0.25, 0.1, 0.05];
}

pub fn resolve<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Output directory: flag, then config file, then `SM_OUT_DIR`, then `.`.
pub fn resolve_out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    resolve(
        flag,
        file.or_else(|| std::env::var_os("SM_OUT_DIR").map(PathBuf::from)),
        PathBuf::from("."),
    )
}

impl RunConfig {
    /// Check the invariants every stage relies on.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive: [(&str, f64); 6] = [
            ("tol", self.tol),
            ("eig_tol", self.eig_tol),
            ("dp", self.dp),
            ("v_max", self.v_max),
            ("t_final", self.t_final),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(CliError::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.m < 2 {
            return Err(CliError::Config("m must be at least 2".into()));
        }
        if self.paths == 0 {
            return Err(CliError::Config("paths must be at least 1".into()));
        }
        Ok(())
    }
}

/// Build a model from a spec string: `cos:<n>` (1D, V = cos 2πx),
/// `zero:<n>` (1D, V ≡ 0), `cos2d:<n>` (2D separable cosine), or a path to
/// a model JSON file.
pub fn load_model(spec: &str) -> Result<HamiltonianModel, CliError> {
    let builtin = |n: &str, dim: usize| -> Result<TorusGrid, CliError> {
        let n: usize = n
            .parse()
            .map_err(|_| CliError::Config(format!("bad node count in model spec `{spec}`")))?;
        Ok(TorusGrid::new(dim, n)?)
    };
    if let Some(n) = spec.strip_prefix("cos:") {
        let g = builtin(n, 1)?;
        return Ok(HamiltonianModel::mechanical(ScalarField::from_fn(g, |x| {
            (2.0 * PI * x[0]).cos()
        })));
    }
    if let Some(n) = spec.strip_prefix("zero:") {
        let g = builtin(n, 1)?;
        return Ok(HamiltonianModel::mechanical(ScalarField::constant(g, 0.0)));
    }
    if let Some(n) = spec.strip_prefix("cos2d:") {
        let g = builtin(n, 2)?;
        return Ok(HamiltonianModel::mechanical(ScalarField::from_fn(g, |x| {
            (2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos()
        })));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.into(), source })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Decode { path: path.into(), message: e.to_string() })
}

/// Parse a momentum vector and check it against the model's dimension;
/// `None` means the origin.
pub fn resolve_momentum(
    p: Option<Vec<f64>>,
    file: Option<Vec<f64>>,
    dim: usize,
) -> Result<Vec<f64>, CliError> {
    let p = resolve(p, file, vec![0.0; dim]);
    if p.len() != dim {
        return Err(CliError::Config(format!(
            "momentum has {} components but the model is {}-dimensional",
            p.len(),
            dim
        )));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config("momentum components must be finite".into()));
    }
    Ok(p)
}
