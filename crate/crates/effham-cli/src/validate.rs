//! The cross-route reconciliation pipeline behind `effham validate`.
//!
//! One configured instance is pushed through every route the model admits —
//! nonlinear cell solve, principal eigenvalue, coarse occupation-measure
//! program, stochastic simulation — plus the stationarity identities,
//! bounds/convexity probes, regularity ratios, and (optionally) a
//! vanishing-viscosity sweep. Every judged quantity is emitted as a
//! [`CheckLine`] carrying the value, the threshold it was held to, and the
//! direction of the comparison; the overall run passes only if every check
//! passes and no stage failed outright. Stage failures are collected as
//! strings so the report is still produced (and still deterministic) when a
//! route cannot run.

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::FORMAT_VERSION;
use effham::cell::{effective_surface, hbar_gradient, solve_cell, CellConfig, CellSolution};
use effham::density::{check_identities, gibbs_density, mather_measure, rel_l1_distance, IdentityReport};
use effham::grid::VectorField;
use effham::lp::{build_lp, solve_lp, LpSolution};
use effham::model::{HamiltonianModel, VelocityBox};
use effham::sim::{simulate, PathEnsemble, SimConfig};
use effham::spectral::{principal_eigenvalue, EigenSolution, SpectralConfig};
use effham::sweep::{regularity_est1, regularity_est2_est3, sigma_sweep, RegularityReport, SigmaSweep};
use serde::{Deserialize, Serialize};

/// Direction a check is judged in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

impl Comparison {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        }
    }

    fn judge(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::AtMost => value <= threshold,
            Comparison::AtLeast => value >= threshold,
        }
    }
}

/// One judged quantity: what was measured, what it was held to, verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub pass: bool,
}

/// Pairwise |Δ| between the H̄ values of routes that ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteDeltas {
    pub cell_vs_spectral: Option<f64>,
    pub cell_vs_lp: Option<f64>,
    pub spectral_vs_lp: Option<f64>,
}

/// Everything `validate` measured, plus the verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub format_version: u32,
    pub config: RunConfig,
    /// H̄ from the nonlinear cell solve.
    pub hbar_cell: Option<f64>,
    /// Principal eigenvalue (mechanical models only).
    pub hbar_spectral: Option<f64>,
    /// LP optimum, negated and shift-corrected back to the raw convention.
    pub hbar_lp: Option<f64>,
    /// −rotation·P̂ from simulation, the momentum-direction slope implied by
    /// the paths; comparable to ∂H̄/∂P·P̂ (absent when P = 0).
    pub sim_directional_slope: Option<f64>,
    pub route_deltas: RouteDeltas,
    /// Mean displacement rate per axis from the ensemble.
    pub rotation_sim: Option<Vec<f64>>,
    pub rotation_se: Option<Vec<f64>>,
    /// ∂H̄/∂P by warm-started central differences.
    pub hbar_gradient: Option<Vec<f64>>,
    pub identities: Option<IdentityReport>,
    /// Relative L¹ distance between θ and the explicit e^{−2u/σ²} form
    /// (zero-momentum mechanical runs only).
    pub theta_gibbs_l1: Option<f64>,
    /// max(min V − H̄(0), H̄(0) − max V): positive means the value escaped
    /// the potential's range.
    pub range_excess: Option<f64>,
    /// Worst midpoint-convexity violation of H̄ on the probe momenta.
    pub convexity_defect: Option<f64>,
    /// Mass fraction the LP measure puts within one velocity cell of the
    /// optimal drift.
    pub concentration: Option<f64>,
    pub duality_gap: Option<f64>,
    pub regularity: Option<RegularityReport>,
    pub sweep: Option<SigmaSweep>,
    pub stage_errors: Vec<String>,
    pub checks: Vec<CheckLine>,
    pub pass: bool,
}

// Acceptance thresholds; each appears verbatim in the emitted check lines.
const TOL_ROUTES: f64 = 5e-3;
const TOL_LP: f64 = 5e-2;
const TOL_GAP: f64 = 1e-9;
const TOL_GIBBS: f64 = 1e-2;
const TOL_ID1: f64 = 1e-8;
const TOL_ID2: f64 = 1e-3;
const TOL_ID3: f64 = 1e-2;
const TOL_RANGE: f64 = 1e-9;
const TOL_CONVEX: f64 = 1e-3;
const MIN_CONCENTRATION: f64 = 0.95;
const MAX_EST1_SPREAD: f64 = 2.0;
const MAX_EST2_CHANGE: f64 = 2.0;
const MIN_EST3: f64 = 0.1;
const TOL_ACTION: f64 = 5e-3;
const TOL_INVISCID: f64 = 5e-2;
/// Momentum probes for the convexity check (applied to axis 0).
const CONVEXITY_MOMENTA: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
/// ΔP sequence for the momentum-regularity family.
const EST_DPS: [f64; 3] = [0.05, 0.025, 0.0125];

struct Checks(Vec<CheckLine>);

impl Checks {
    fn push(&mut self, name: &str, value: f64, comparison: Comparison, threshold: f64) {
        let pass = comparison.judge(value, threshold);
        self.0.push(CheckLine { name: name.to_string(), value, comparison, threshold, pass });
    }
}

/// Run the full pipeline. Infallible by construction: stage errors are
/// folded into the report rather than aborting it.
pub fn run_validate(model: &HamiltonianModel, cfg: &RunConfig) -> ValidationReport {
    let cell_cfg = CellConfig { tol: cfg.tol, max_iter: cfg.max_iter };
    let mut errors: Vec<String> = Vec::new();
    let mut checks = Checks(Vec::new());

    let cell = stage(&mut errors, "cell", || {
        Ok(solve_cell(model, &cfg.p, cfg.sigma, cell_cfg)?)
    });

    // the eigenvalue route and the occupation-measure program are
    // independent of each other; run them on two threads when asked
    let (spectral, lp) = if cfg.concurrent {
        std::thread::scope(|s| {
            let h_spec = s.spawn(|| spectral_stage(model, cfg));
            let h_lp = s.spawn(|| lp_stage(model, cfg, cell_cfg));
            (h_spec.join().expect("spectral stage panicked"),
             h_lp.join().expect("lp stage panicked"))
        })
    } else {
        (spectral_stage(model, cfg), lp_stage(model, cfg, cell_cfg))
    };
    let spectral = collect(&mut errors, "spectral", spectral);
    let lp = collect(&mut errors, "lp", lp);

    let hbar_cell = cell.as_ref().map(|s| s.hbar);
    let hbar_spectral = spectral.as_ref().map(|e| e.lambda);
    let hbar_lp = lp.as_ref().map(|(sol, _)| sol.hbar_raw());

    let mut route_deltas = RouteDeltas::default();
    if let (Some(a), Some(b)) = (hbar_cell, hbar_spectral) {
        let d = (a - b).abs();
        route_deltas.cell_vs_spectral = Some(d);
        checks.push("cell vs spectral eigenvalue", d, Comparison::AtMost, TOL_ROUTES);
    }
    if let (Some(a), Some(b)) = (hbar_cell, hbar_lp) {
        let d = (a - b).abs();
        route_deltas.cell_vs_lp = Some(d);
        checks.push("cell vs LP (negated, shift-corrected)", d, Comparison::AtMost, TOL_LP);
    }
    if let (Some(a), Some(b)) = (hbar_spectral, hbar_lp) {
        route_deltas.spectral_vs_lp = Some((a - b).abs());
    }
    let duality_gap = lp.as_ref().map(|(sol, _)| sol.duality_gap);
    if let Some(g) = duality_gap {
        checks.push("LP duality gap", g, Comparison::AtMost, TOL_GAP);
    }
    let concentration = lp
        .as_ref()
        .map(|(sol, drift)| sol.measure.concentration_near(drift));
    if let Some(c) = concentration {
        checks.push("LP measure concentration on optimal drift", c, Comparison::AtLeast, MIN_CONCENTRATION);
    }

    // stationary measure, identities, explicit-density comparison
    let mut identities = None;
    let mut theta_gibbs_l1 = None;
    let mut theta_main = None;
    if let Some(sol) = cell.as_ref() {
        if let Some(measure) = stage(&mut errors, "measure", || Ok(mather_measure(sol)?)) {
            if let Some(ids) = stage(&mut errors, "identities", || {
                Ok(check_identities(model, sol, &measure, cell_cfg, cfg.dp)?)
            }) {
                checks.push("generator adjoint identity (id1)", ids.id1_err, Comparison::AtMost, TOL_ID1);
                if model.is_mechanical() {
                    checks.push("potential gradient identity (id2)", ids.id2_err, Comparison::AtMost, TOL_ID2);
                }
                checks.push("momentum gradient identity (id3)", ids.id3_gap, Comparison::AtMost, TOL_ID3);
                identities = Some(ids);
            }
            if model.is_mechanical() && cfg.p.iter().all(|&v| v == 0.0) {
                let gibbs = gibbs_density(&sol.u, cfg.sigma);
                let d = rel_l1_distance(&measure.density.theta, &gibbs);
                theta_gibbs_l1 = Some(d);
                checks.push("stationary density vs explicit form", d, Comparison::AtMost, TOL_GIBBS);
            }
            theta_main = Some(measure.density.theta.clone());
        }
    }

    // bounds at rest and convexity along the momentum axis
    let mut range_excess = None;
    let mut convexity_defect = None;
    if let Some(surface) = stage(&mut errors, "momentum surface", || {
        let momenta: Vec<Vec<f64>> = CONVEXITY_MOMENTA
            .iter()
            .map(|&q| {
                let mut p = cfg.p.clone();
                p[0] = q;
                p
            })
            .collect();
        Ok(effective_surface(model, &momenta, cfg.sigma, cell_cfg)?)
    }) {
        let h: Vec<f64> = surface.iter().map(|s| s.hbar).collect();
        let defect = (1..h.len() - 1)
            .map(|k| -(h[k - 1] + h[k + 1] - 2.0 * h[k]))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        convexity_defect = Some(defect);
        checks.push("midpoint convexity defect", defect, Comparison::AtMost, TOL_CONVEX);
    }
    if let Some(v) = model.potential() {
        if let Some(rest) = stage(&mut errors, "rest value", || {
            Ok(solve_cell(model, &vec![0.0; model.grid().dim()], cfg.sigma, cell_cfg)?)
        }) {
            let excess = (v.min() - rest.hbar).max(rest.hbar - v.max()).max(0.0);
            range_excess = Some(excess);
            checks.push("rest value within potential range", excess, Comparison::AtMost, TOL_RANGE);
        }
    }

    // simulation vs the momentum gradient
    let gradient = stage(&mut errors, "momentum gradient", || {
        Ok(hbar_gradient(model, &cfg.p, cfg.sigma, cell_cfg, cfg.dp)?)
    });
    let ensemble: Option<PathEnsemble> = cell.as_ref().and_then(|sol| {
        stage(&mut errors, "simulate", || {
            let sim_cfg = SimConfig {
                t_final: cfg.t_final,
                dt: cfg.dt,
                paths: cfg.paths,
                seed: cfg.seed,
            };
            Ok(simulate(&sol.drift, cfg.sigma, &sim_cfg)?)
        })
    });
    let mut sim_directional_slope = None;
    if let (Some(ens), Some(grad)) = (ensemble.as_ref(), gradient.as_ref()) {
        let err = ens
            .mean_displacement
            .iter()
            .zip(grad)
            .map(|(r, g)| (r + g).abs())
            .fold(0.0f64, f64::max);
        let se = ens.se_displacement.iter().fold(0.0f64, |a, &b| a.max(b));
        checks.push("rotation vs momentum gradient", err, Comparison::AtMost, 3.0 * se);
        let p_norm = cfg.p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if p_norm > 0.0 {
            let slope = -ens
                .mean_displacement
                .iter()
                .zip(&cfg.p)
                .map(|(r, p)| r * p)
                .sum::<f64>()
                / p_norm;
            sim_directional_slope = Some(slope);
        }
    }

    // regularity ratios around the configured momentum
    let regularity = stage(&mut errors, "regularity", || {
        let (sol, theta) = match (cell.as_ref(), theta_main.as_ref()) {
            (Some(s), Some(t)) => (s, t),
            _ => return Err("needs the cell and measure stages".to_string().into()),
        };
        regularity_stage(model, cfg, cell_cfg, sol, theta)
    });
    if let Some(reg) = regularity.as_ref() {
        let spread = est1_spread(&reg.report.est1_ratios);
        checks.push("difference quotient spread (est1)", spread, Comparison::AtMost, MAX_EST1_SPREAD);
        checks.push(
            "momentum difference stability (est2)",
            reg.est2_change,
            Comparison::AtMost,
            MAX_EST2_CHANGE,
        );
        checks.push("momentum nondegeneracy (est3)", reg.est3_min, Comparison::AtLeast, MIN_EST3);
    }

    // optional vanishing-viscosity sweep
    let sweep = if cfg.sweep {
        stage(&mut errors, "sweep", || {
            Ok(sigma_sweep(model, &cfg.p, &cfg.sigmas, cell_cfg)?)
        })
    } else {
        None
    };
    if let Some(sw) = sweep.as_ref() {
        let worst_action = sw
            .entries
            .iter()
            .map(|e| e.action_gap)
            .fold(0.0f64, f64::max);
        checks.push("action identity along sweep", worst_action, Comparison::AtMost, TOL_ACTION);
        if let Some(gap) = sw.final_gap {
            checks.push("inviscid endpoint gap", gap, Comparison::AtMost, TOL_INVISCID);
        }
    }

    let pass = errors.is_empty() && checks.0.iter().all(|c| c.pass);
    ValidationReport {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        hbar_cell,
        hbar_spectral,
        hbar_lp,
        sim_directional_slope,
        route_deltas,
        rotation_sim: ensemble.as_ref().map(|e| e.mean_displacement.clone()),
        rotation_se: ensemble.as_ref().map(|e| e.se_displacement.clone()),
        hbar_gradient: gradient,
        identities,
        theta_gibbs_l1,
        range_excess,
        convexity_defect,
        concentration,
        duality_gap,
        regularity: regularity.map(|r| r.report),
        sweep,
        stage_errors: errors,
        checks: checks.0,
        pass,
    }
}

/// Run a stage, folding its error into the collected list.
fn stage<T>(
    errors: &mut Vec<String>,
    name: &str,
    f: impl FnOnce() -> Result<T, CliError>,
) -> Option<T> {
    match f() {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{name}: {e}"));
            None
        }
    }
}

fn collect<T>(errors: &mut Vec<String>, name: &str, r: Result<Option<T>, CliError>) -> Option<T> {
    match r {
        Ok(v) => v,
        Err(e) => {
            errors.push(format!("{name}: {e}"));
            None
        }
    }
}

/// Eigenvalue route: mechanical models only; `Ok(None)` means "not
/// applicable", which is a skip rather than a failure.
fn spectral_stage(model: &HamiltonianModel, cfg: &RunConfig) -> Result<Option<EigenSolution>, CliError> {
    if !model.is_mechanical() {
        return Ok(None);
    }
    let spec_cfg = SpectralConfig { tol: cfg.eig_tol, max_iter: cfg.eig_max_iter };
    Ok(Some(principal_eigenvalue(model, &cfg.p, cfg.sigma, spec_cfg)?))
}

/// Occupation-measure route on a coarsened grid (dense LP cost grows fast in
/// n). Mechanical models are resampled to `n_lp` with a configured velocity
/// box; tabulated models keep their native grid and velocity nodes, which
/// are part of their data.
fn lp_stage(
    model: &HamiltonianModel,
    cfg: &RunConfig,
    cell_cfg: CellConfig,
) -> Result<Option<(LpSolution, VectorField)>, CliError> {
    let (coarse, vbox) = if model.is_mechanical() {
        (model.resample(cfg.n_lp)?, VelocityBox::new(cfg.v_max, cfg.m)?)
    } else {
        let vbox = model
            .velocity_box()
            .expect("tabulated models carry a velocity box");
        (model.clone(), vbox)
    };
    let inst = build_lp(&coarse, &cfg.p, cfg.sigma, vbox)?;
    let sol = solve_lp(&inst)?;
    let drift = solve_cell(&coarse, &cfg.p, cfg.sigma, cell_cfg)?.drift;
    Ok(Some((sol, drift)))
}

struct RegularityOutcome {
    report: RegularityReport,
    est2_change: f64,
    est3_min: f64,
}

/// est1 over node shifts h..8h along axis 0, plus the est2/est3 family with
/// ΔP halving through `EST_DPS`. The bundled report keeps the coarsest-ΔP
/// pair; the stability/nondegeneracy numbers summarize the whole family.
fn regularity_stage(
    model: &HamiltonianModel,
    cfg: &RunConfig,
    cell_cfg: CellConfig,
    sol: &CellSolution,
    theta: &effham::grid::ScalarField,
) -> Result<RegularityOutcome, CliError> {
    let dim = model.grid().dim();
    let offsets: Vec<Vec<i64>> = (1..=8)
        .map(|k| {
            let mut o = vec![0i64; dim];
            o[0] = k;
            o
        })
        .collect();
    let est1_ratios = regularity_est1(sol, theta, &offsets);
    let mut sorted = est1_ratios.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let est1_growth_flag = sorted.windows(2).any(|w| w[1].1 > 0.0 && w[0].1 > 2.0 * w[1].1);

    let mut est2s = Vec::new();
    let mut est3s = Vec::new();
    for &dp in &EST_DPS {
        let mut q = cfg.p.clone();
        q[0] += dp;
        let (e2, e3) = regularity_est2_est3(model, &cfg.p, &q, cfg.sigma, cell_cfg)?;
        est2s.push(e2);
        est3s.push(e3);
    }
    let est2_change = est2s
        .windows(2)
        .map(|w| change_factor(w[0], w[1]))
        .fold(1.0f64, f64::max);
    let est3_min = est3s.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(RegularityOutcome {
        report: RegularityReport {
            est1_ratios,
            est1_growth_flag,
            est2_ratio: est2s[0],
            est3_ratio: est3s[0],
            gamma_l: model.gamma_l(),
            gamma_upper: model.gamma_upper(),
        },
        est2_change,
        est3_min,
    })
}

/// max/min over the est1 ratios, treating an all-zero family (flat
/// potentials) as perfectly stable.
fn est1_spread(ratios: &[(f64, f64)]) -> f64 {
    let hi = ratios.iter().map(|r| r.1).fold(0.0f64, f64::max);
    if hi < 1e-12 {
        return 1.0;
    }
    let lo = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if lo <= 0.0 {
        return f64::MAX;
    }
    hi / lo
}

/// Relative change between consecutive family members, symmetric in order;
/// a pair of exact zeros counts as no change.
fn change_factor(a: f64, b: f64) -> f64 {
    if a.abs() < 1e-12 && b.abs() < 1e-12 {
        return 1.0;
    }
    let (lo, hi) = if a.abs() < b.abs() { (a.abs(), b.abs()) } else { (b.abs(), a.abs()) };
    if lo <= 0.0 {
        return f64::MAX;
    }
    hi / lo
}

impl From<String> for CliError {
    fn from(s: String) -> Self {
        CliError::Config(s)
    }
}
