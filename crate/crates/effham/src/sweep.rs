//! Vanishing-viscosity sweeps and L²(θ)-regularity diagnostics.
//!
//! Two families of checks live here:
//!
//! * **σ-sweeps** ([`sigma_sweep`]): solve the cell problem along a
//!   decreasing list of noise levels σ, warm-starting each solve from the
//!   previous one, and track H̄_σ, the drift of the corrector u_σ and of the
//!   stationary density θ_σ relative to the finest-σ entry, and the action
//!   identity ∫(L + P·v*) θ_σ = −H̄_σ at every σ. In one dimension the
//!   endpoint is compared against the inviscid value from
//!   [`analytic_hbar_1d`], a closed-form oracle that never touches the PDE
//!   solver.
//!
//! * **regularity ratios** ([`regularity_est1`], [`regularity_est2_est3`]):
//!   difference-quotient norms of the corrector measured in L²(θ),
//!
//!   - est1(y) = ∫|∇u(x+y) − ∇u(x)|² θ dx / |y|²  — bounded uniformly in y,
//!   - est2    = ∫|∇u(·,P) − ∇u(·,P′)|² θ_P dx / |P−P′|²  — bounded as P′→P,
//!   - est3    = ∫|P+∇u(·,P) − P′−∇u(·,P′)|² θ_P dx / |P−P′|²  — bounded
//!     *below* where H̄ is strictly convex, so est3 ≥ c > 0 certifies
//!     nondegeneracy of the momentum dependence.
//!
//! The inviscid 1D formula: H̄₀(P) = max V when |P| ≤ ∫√(2(maxV − V)) dx,
//! otherwise the unique E ≥ max V with ∫√(2(E − V)) dx = |P|.

use crate::cell::{solve_cell_warm, CellConfig, CellError, CellSolution};
use crate::density::{mather_measure, rel_l1_distance, DensityError};
use crate::grid::{ScalarField, Scheme};
use crate::model::HamiltonianModel;
use serde::{Deserialize, Serialize};

/// Errors from sweep construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("sigma list must be nonempty")]
    EmptySigmaList,
    #[error("sigma list must be strictly decreasing and positive (violated at index {index})")]
    NotDecreasing { index: usize },
    #[error("smallest sigma {sigma} is below the grid spacing {spacing}; the scheme cannot resolve the diffusion layer — refine the grid")]
    SigmaBelowGrid { sigma: f64, spacing: f64 },
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// One σ entry of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub sigma: f64,
    /// Effective Hamiltonian at this σ (raw convention).
    pub hbar: f64,
    /// sup |u_σ − u_ref| against the finest-σ corrector (both anchored at
    /// the origin node).
    pub du_sup: f64,
    /// L¹ distance ∫|θ_σ − θ_ref| against the finest-σ density.
    pub theta_l1: f64,
    /// |∫(L + P·v*) θ_σ + H̄_σ| — the action identity defect.
    pub action_gap: f64,
    /// Cell-solver residual carried along for reporting.
    pub residual: f64,
}

/// A completed vanishing-viscosity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweep {
    pub p: Vec<f64>,
    /// Entries in the given (strictly decreasing) σ order.
    pub entries: Vec<SweepEntry>,
    /// |H̄_{σ_{k+1}} − H̄_{σ_k}| between consecutive entries.
    pub increments: Vec<f64>,
    /// Inviscid 1D reference H̄₀(P), when the model is 1D mechanical.
    pub analytic_ref: Option<f64>,
    /// |H̄ at the finest σ − analytic_ref|.
    pub final_gap: Option<f64>,
}

/// L²(θ) regularity ratios of a corrector, bundled for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    /// (|y|, est1 ratio) per requested node shift.
    pub est1_ratios: Vec<(f64, f64)>,
    /// Set when some est1 ratio more than doubles as |y| halves.
    pub est1_growth_flag: bool,
    pub est2_ratio: f64,
    pub est3_ratio: f64,
    /// Convexity bounds of the model the ratios were computed under.
    pub gamma_l: f64,
    pub gamma_upper: f64,
}

/// Closed-form inviscid effective Hamiltonian in one dimension.
///
/// Quadratures use the rectangle rule on the potential's own grid; the
/// rotation branch solves ∫√(2(E − V)) dx = |p| for E by bisection to 1e-10.
pub fn analytic_hbar_1d(potential: &ScalarField, p: f64) -> f64 {
    debug_assert_eq!(potential.grid().dim(), 1, "closed form is one-dimensional");
    let v_max = potential.max();
    let mean_speed = |e: f64| -> f64 {
        potential
            .values()
            .iter()
            .map(|&v| (2.0 * (e - v).max(0.0)).sqrt())
            .sum::<f64>()
            / potential.values().len() as f64
    };
    let threshold = mean_speed(v_max);
    if p.abs() <= threshold {
        return v_max;
    }
    // mean_speed(E) is strictly increasing for E ≥ max V; bracket and bisect
    let mut lo = v_max;
    let mut hi = v_max + 0.5 * p * p + 1.0;
    debug_assert!(mean_speed(hi) >= p.abs());
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mean_speed(mid) < p.abs() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solve the cell problem along a strictly decreasing σ list, warm-started,
/// and compare correctors, densities, and H̄ values along the way.
///
/// The smallest σ must be at least the grid spacing: the upwind scheme's
/// artificial diffusion is O(h·|v|) and must stay below σ²/2 for u_σ to
/// approximate its continuum meaning.
pub fn sigma_sweep(
    model: &HamiltonianModel,
    p: &[f64],
    sigmas: &[f64],
    cfg: CellConfig,
) -> Result<SigmaSweep, SweepError> {
    if sigmas.is_empty() {
        return Err(SweepError::EmptySigmaList);
    }
    for (k, w) in sigmas.windows(2).enumerate() {
        if !(w[1] < w[0]) || !(w[1] > 0.0) {
            return Err(SweepError::NotDecreasing { index: k + 1 });
        }
    }
    if !(sigmas[0] > 0.0) {
        return Err(SweepError::NotDecreasing { index: 0 });
    }
    let spacing = model.grid().spacing();
    let sigma_min = sigmas[sigmas.len() - 1];
    if sigma_min < spacing {
        return Err(SweepError::SigmaBelowGrid { sigma: sigma_min, spacing });
    }

    let mut solutions: Vec<CellSolution> = Vec::with_capacity(sigmas.len());
    let mut thetas: Vec<ScalarField> = Vec::with_capacity(sigmas.len());
    let mut warm: Option<ScalarField> = None;
    for &sigma in sigmas {
        let sol = solve_cell_warm(model, p, sigma, cfg, warm.as_ref())?;
        let measure = mather_measure(&sol)?;
        thetas.push(measure.density.theta.clone());
        warm = Some(sol.u.clone());
        solutions.push(sol);
    }

    let u_ref = &solutions[solutions.len() - 1].u;
    let theta_ref = &thetas[thetas.len() - 1];
    let mut entries = Vec::with_capacity(sigmas.len());
    for (sol, theta) in solutions.iter().zip(&thetas) {
        let du_sup = sol.u.sub(u_ref).sup_norm();
        let theta_l1 = rel_l1_distance(theta, theta_ref);
        entries.push(SweepEntry {
            sigma: sol.sigma,
            hbar: sol.hbar,
            du_sup,
            theta_l1,
            action_gap: action_identity_gap(model, sol, theta),
            residual: sol.residual,
        });
    }

    let increments = entries
        .windows(2)
        .map(|w| (w[1].hbar - w[0].hbar).abs())
        .collect();

    let analytic_ref = match (model.grid().dim(), model.potential()) {
        (1, Some(v)) => Some(analytic_hbar_1d(v, p[0])),
        _ => None,
    };
    let final_gap = analytic_ref.map(|r| (entries[entries.len() - 1].hbar - r).abs());

    Ok(SigmaSweep { p: p.to_vec(), entries, increments, analytic_ref, final_gap })
}

/// |∫(L(x, v*(x)) + P·v*(x)) θ(x) dx + H̄| — zero in exact arithmetic for
/// the optimal pair (v*, θ).
fn action_identity_gap(model: &HamiltonianModel, sol: &CellSolution, theta: &ScalarField) -> f64 {
    let grid = model.grid();
    let dim = grid.dim();
    let mut action = 0.0;
    for i in grid.nodes() {
        let v = sol.drift.at(i);
        let mut cost = model.lagrangian_raw(i, &v);
        for a in 0..dim {
            cost += sol.p[a] * v[a];
        }
        action += cost * theta.get(i);
    }
    action *= grid.cell_volume();
    (action + sol.hbar).abs()
}

/// Difference-quotient ratios ∫|∇u(·+y) − ∇u|²θ / |y|² for each integer node
/// shift y. A full-period shift gives exactly zero; the bound being roughly
/// flat in |y| is the discrete trace of ∇u having θ-square-integrable
/// derivatives.
pub fn regularity_est1(
    sol: &CellSolution,
    theta: &ScalarField,
    y_offsets: &[Vec<i64>],
) -> Vec<(f64, f64)> {
    let grid = sol.u.grid();
    let h = grid.spacing();
    let dim = grid.dim();
    let grad = sol.u.gradient(Scheme::Centered);
    let mut out = Vec::with_capacity(y_offsets.len());
    for offset in y_offsets {
        debug_assert_eq!(offset.len(), dim);
        let y_norm = h * offset.iter().map(|&o| (o * o) as f64).sum::<f64>().sqrt();
        if y_norm == 0.0 {
            out.push((0.0, 0.0));
            continue;
        }
        let mut num = 0.0;
        for i in grid.nodes() {
            let mut j = i;
            for (a, &o) in offset.iter().enumerate() {
                j = grid.neighbor(j, a, o as isize);
            }
            let mut d2 = 0.0;
            for a in 0..dim {
                let d = grad.component(a)[j] - grad.component(a)[i];
                d2 += d * d;
            }
            num += d2 * theta.get(i);
        }
        num *= grid.cell_volume();
        out.push((y_norm, num / (y_norm * y_norm)));
    }
    out
}

/// Momentum difference quotients in L²(θ_P):
/// returns (est2, est3) = (∫|∇u_P − ∇u_{P′}|²θ_P, ∫|(P+∇u_P) − (P′+∇u_{P′})|²θ_P),
/// both divided by |P − P′|². The second solve is warm-started from the
/// first.
pub fn regularity_est2_est3(
    model: &HamiltonianModel,
    p: &[f64],
    p_prime: &[f64],
    sigma: f64,
    cfg: CellConfig,
) -> Result<(f64, f64), SweepError> {
    let grid = model.grid();
    let dim = grid.dim();
    let sol_p = solve_cell_warm(model, p, sigma, cfg, None)?;
    let sol_q = solve_cell_warm(model, p_prime, sigma, cfg, Some(&sol_p.u))?;
    let theta = mather_measure(&sol_p)?.density.theta;
    let grad_p = sol_p.u.gradient(Scheme::Centered);
    let grad_q = sol_q.u.gradient(Scheme::Centered);
    let dp2: f64 = (0..dim).map(|a| (p[a] - p_prime[a]) * (p[a] - p_prime[a])).sum();
    debug_assert!(dp2 > 0.0, "momenta must differ");
    let (mut est2, mut est3) = (0.0, 0.0);
    for i in grid.nodes() {
        let w = theta.get(i);
        for a in 0..dim {
            let du = grad_p.component(a)[i] - grad_q.component(a)[i];
            let dm = (p[a] + grad_p.component(a)[i]) - (p_prime[a] + grad_q.component(a)[i]);
            est2 += du * du * w;
            est3 += dm * dm * w;
        }
    }
    let vol = grid.cell_volume();
    Ok((est2 * vol / dp2, est3 * vol / dp2))
}

/// Run both regularity diagnostics for one (P, P′) pair and bundle them.
pub fn regularity_report(
    model: &HamiltonianModel,
    p: &[f64],
    p_prime: &[f64],
    sigma: f64,
    cfg: CellConfig,
    y_offsets: &[Vec<i64>],
) -> Result<RegularityReport, SweepError> {
    let sol = solve_cell_warm(model, p, sigma, cfg, None)?;
    let theta = mather_measure(&sol)?.density.theta;
    let est1_ratios = regularity_est1(&sol, &theta, y_offsets);
    // flag growth: ratio at |y| more than double the ratio at 2|y|
    let mut sorted = est1_ratios.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let est1_growth_flag = sorted
        .windows(2)
        .any(|w| w[1].1 > 0.0 && w[0].1 > 2.0 * w[1].1);
    let (est2_ratio, est3_ratio) = regularity_est2_est3(model, p, p_prime, sigma, cfg)?;
    Ok(RegularityReport {
        est1_ratios,
        est1_growth_flag,
        est2_ratio,
        est3_ratio,
        gamma_l: model.gamma_l(),
        gamma_upper: model.gamma_upper(),
    })
}
