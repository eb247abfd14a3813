//! Stationary densities of the optimally controlled diffusion and the
//! integral identities they satisfy.
//!
//! Once the cell problem is solved and the optimal feedback drift
//! v*(x) = −D_pH(P + ∇u, x) is known, the diffusion dx = v*(x) dt + σ dW is
//! ergodic on the torus with a unique stationary density θ solving the
//! adjoint (Fokker–Planck) equation
//!
//! ```text
//! σ²/2 Δθ − ∇·(θ v*) = 0,     ∫θ = 1,   θ ≥ 0,
//! ```
//!
//! discretized here as the *exact* transpose of the upwind generator used by
//! the policy evaluation, so that the duality ∫(A^v φ)θ = 0 holds at machine
//! precision for every grid function φ — not merely up to discretization
//! error. θ is the kernel of that transpose, computed from an appended
//! least-squares system (adjoint rows plus the normalization row) via a thin
//! QR factorization.
//!
//! The pair (θ, θ·v*) is the minimizing occupation measure of the associated
//! linear program over stationary measures (computed independently in
//! [`crate::lp`]); consistency checks between the two live in the
//! integration tests.
//!
//! [`check_identities`] evaluates three consequences of stationarity:
//! * id1 — ∫(A^v φ)θ = 0 for a basis of test functions (machine-exact here),
//! * id2 — ∫ D_xH(P + ∇u, x) θ dx = 0 (no average force along the optimal
//!   process; for mechanical models D_xH = ∇V),
//! * id3 — ∫ D_pH(P + ∇u, x) θ dx = ∂H̄/∂P (the mean velocity −∫v*θ equals
//!   the momentum gradient of H̄).

use crate::cell::{hbar_gradient, CellConfig, CellError, CellSolution};
use crate::grid::{ScalarField, Scheme, VectorField};
use crate::model::{generator_apply, HamiltonianModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Errors from stationary-density computation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    #[error("adjoint system is singular beyond its expected one-dimensional kernel (min |R_ii| = {min_diag:.3e})")]
    SingularBeyondNullity { min_diag: f64 },
    #[error("stationary density came out negative beyond rounding (min = {min:.3e}); the drift field is inconsistent with an upwind generator")]
    NegativeDensity { min: f64 },
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// A stationary density on the grid, stored with unit mass: hⁿ Σ θ = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDensity {
    pub theta: ScalarField,
    /// Sup-norm of (A^v)ᵀθ at the returned density.
    pub residual: f64,
}

/// The occupation measure of the optimal process on the graph of its
/// feedback control: x-marginal θ and the drift v*(x) it rides on, so that
/// integrals of g(x, v) against the measure are ∫ g(x, v*(x)) θ(x) dx.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeasure {
    pub density: StationaryDensity,
    pub drift: VectorField,
    /// Mean drift ∫ v* θ dx (the negated rotation vector ∂H̄/∂P).
    pub mean_velocity: Vec<f64>,
}

/// Residuals of the three stationarity identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// max over test functions φ of |∫(A^v φ) θ|.
    pub id1_err: f64,
    /// max over axes of |∫ ∂_a V θ| (mechanical models).
    pub id2_err: f64,
    /// max over axes of |∫ (D_pH)_a θ − ∂H̄/∂P_a|.
    pub id3_gap: f64,
}

/// Stationary density of the diffusion with feedback drift `drift`: the unit
/// kernel vector of the transposed upwind generator.
///
/// The kernel is one-dimensional (the generator is an irreducible M-matrix),
/// so θ is found as the least-squares solution of the (N+1)×N appended
/// system [(A^v)ᵀ; hⁿ𝟙ᵀ]θ = [0; 1] by thin QR. Entries within rounding of
/// zero may come out at −O(1e-12)·scale; they are clamped to 0 and the mass
/// renormalized. A genuinely negative component reports `NegativeDensity`.
pub fn invariant_density(
    drift: &VectorField,
    sigma: f64,
    tol_rank: f64,
) -> Result<StationaryDensity, DensityError> {
    let grid = drift.grid();
    let n = grid.node_count();
    let h = grid.spacing();
    let diff = 0.5 * sigma * sigma / (h * h);

    // (A^v)ᵀ assembled exactly: column k of A^v becomes row k
    let mut m = DMatrix::<f64>::zeros(n + 1, n);
    for k in grid.nodes() {
        let mut diag = 0.0;
        for a in 0..grid.dim() {
            let va = drift.component(a)[k];
            let up = grid.neighbor(k, a, 1);
            let dn = grid.neighbor(k, a, -1);
            m[(up, k)] += diff + va.max(0.0) / h;
            m[(dn, k)] += diff + (-va).max(0.0) / h;
            diag -= 2.0 * diff + va.abs() / h;
        }
        m[(k, k)] += diag;
    }
    let volume = grid.cell_volume();
    for k in 0..n {
        m[(n, k)] = volume;
    }
    let mut rhs = DVector::<f64>::zeros(n + 1);
    rhs[n] = 1.0;

    // thin QR least squares; R's diagonal exposes rank deficiency beyond the
    // kernel the normalization row absorbs
    let qr = m.clone().qr();
    let r = qr.r();
    let mut min_diag = f64::INFINITY;
    let mut max_diag = 0.0f64;
    for k in 0..n {
        let d = r[(k, k)].abs();
        min_diag = min_diag.min(d);
        max_diag = max_diag.max(d);
    }
    if min_diag <= tol_rank * max_diag {
        return Err(DensityError::SingularBeyondNullity { min_diag });
    }
    let qtb = qr.q().transpose() * &rhs;
    let theta_vec = r
        .solve_upper_triangular(&qtb)
        .ok_or(DensityError::SingularBeyondNullity { min_diag })?;

    // clamp rounding-level negativity, reject anything real
    let sup = theta_vec.amax().max(1.0);
    let floor = -1e-12 * sup;
    let mut values = Vec::with_capacity(n);
    let mut min_seen = f64::INFINITY;
    for k in 0..n {
        let v = theta_vec[k];
        min_seen = min_seen.min(v);
        if v < floor {
            return Err(DensityError::NegativeDensity { min: min_seen });
        }
        values.push(v.max(0.0));
    }
    let mass: f64 = values.iter().sum::<f64>() * volume;
    for v in &mut values {
        *v /= mass;
    }
    let theta = ScalarField::from_values(grid, values).expect("length matches grid");

    // report the adjoint defect of the clamped, renormalized density
    let theta_d = DVector::from_vec(theta.values().to_vec());
    let residual = (m.rows(0, n) * theta_d).amax();
    Ok(StationaryDensity { theta, residual })
}

/// The occupation measure sitting on the graph of the optimal control of a
/// solved cell problem.
pub fn mather_measure(sol: &CellSolution) -> Result<GraphMeasure, DensityError> {
    let density = invariant_density(&sol.drift, sol.sigma, 1e-12)?;
    let grid = sol.drift.grid();
    let mean_velocity = (0..grid.dim())
        .map(|a| {
            let comp = ScalarField::from_values(grid, sol.drift.component(a).to_vec())
                .expect("component length matches grid");
            comp.integrate(Some(&density.theta))
        })
        .collect();
    Ok(GraphMeasure { density, drift: sol.drift.clone(), mean_velocity })
}

/// Check the three stationarity identities for a solved cell problem.
///
/// * id1 uses the same discrete generator as the solver, applied to the
///   Fourier test functions sin(2πk·x_a), cos(2πk·x_a) for k = 1..=5 on each
///   axis — by construction of θ this is zero to rounding;
/// * id2 integrates the centered gradient of the potential against θ
///   (mechanical models; tabulated models report 0 — their x-force is not
///   sampled);
/// * id3 compares −∫v*θ (= ∫D_pH θ) with the central difference of H̄ at
///   P ± dp·e_a, each from a warm-started solve.
pub fn check_identities(
    model: &HamiltonianModel,
    sol: &CellSolution,
    measure: &GraphMeasure,
    cfg: CellConfig,
    dp: f64,
) -> Result<IdentityReport, DensityError> {
    let grid = model.grid();
    let theta = &measure.density.theta;

    let mut id1_err = 0.0f64;
    for axis in 0..grid.dim() {
        for k in 1..=5u32 {
            for phase in [0.0, 0.25] {
                let phi = ScalarField::from_fn(grid, |x| {
                    (2.0 * std::f64::consts::PI * (k as f64 * x[axis] + phase)).cos()
                });
                let aphi = generator_apply(&sol.drift, sol.sigma, &phi);
                id1_err = id1_err.max(aphi.integrate(Some(theta)).abs());
            }
        }
    }

    let id2_err = match model.potential() {
        Some(potential) => {
            let grad_v = potential.gradient(Scheme::Centered);
            (0..grid.dim())
                .map(|a| {
                    let comp = ScalarField::from_values(grid, grad_v.component(a).to_vec())
                        .expect("component length matches grid");
                    comp.integrate(Some(theta)).abs()
                })
                .fold(0.0f64, f64::max)
        }
        None => 0.0,
    };

    let grad_hbar = hbar_gradient(model, &sol.p, sol.sigma, cfg, dp)?;
    let id3_gap = (0..grid.dim())
        .map(|a| (-measure.mean_velocity[a] - grad_hbar[a]).abs())
        .fold(0.0f64, f64::max);

    Ok(IdentityReport { id1_err, id2_err, id3_gap })
}

/// Relative L¹ distance ∫|a − b| / ∫|b| between two densities on one grid.
pub fn rel_l1_distance(a: &ScalarField, b: &ScalarField) -> f64 {
    assert_eq!(a.grid(), b.grid(), "densities live on different grids");
    let num: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    let den: f64 = b.values().iter().map(|y| y.abs()).sum();
    num / den
}

/// The reversible-case density e^{−2u/σ²} (normalized), which coincides with
/// the stationary density exactly when the optimal drift is gradient
/// (P = 0 for mechanical models) and up to discretization error otherwise.
pub fn gibbs_density(u: &ScalarField, sigma: f64) -> ScalarField {
    let s2 = sigma * sigma;
    let unnorm = u.map(|v| (-2.0 * v / s2).exp());
    let mass = unnorm.integrate(None);
    unnorm.map(|v| v / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell;
    use crate::grid::TorusGrid;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cos_model(n: usize) -> HamiltonianModel {
        let g = TorusGrid::new(1, n).unwrap();
        HamiltonianModel::mechanical(ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos()))
    }

    #[test]
    fn zero_drift_gives_uniform_density() {
        for (dim, n) in [(1usize, 64usize), (2, 12)] {
            let g = TorusGrid::new(dim, n).unwrap();
            let v = VectorField::zeros(g);
            let d = invariant_density(&v, 0.9, 1e-12).unwrap();
            for k in g.nodes() {
                assert_abs_diff_eq!(d.theta.get(k), 1.0, epsilon = 1e-10);
            }
            assert!(d.residual <= 1e-10);
        }
    }

    #[test]
    fn constant_drift_keeps_uniform_density() {
        // on the torus a constant drift just translates; uniform stays stationary
        let g = TorusGrid::new(1, 48).unwrap();
        let v = VectorField::constant(g, &[1.7]);
        let d = invariant_density(&v, 0.8, 1e-12).unwrap();
        for k in g.nodes() {
            assert_abs_diff_eq!(d.theta.get(k), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn density_has_unit_mass_and_machine_adjoint_residual() {
        let sol = solve_cell(&cos_model(256), &[0.0], 1.0, CellConfig::default()).unwrap();
        let d = invariant_density(&sol.drift, sol.sigma, 1e-12).unwrap();
        assert_abs_diff_eq!(d.theta.integrate(None), 1.0, epsilon = 1e-12);
        assert!(d.theta.min() >= 0.0);
        assert!(d.residual <= 1e-8, "adjoint residual {}", d.residual);
        // minimizing L = v²/2 − V favors time where V is LARGE, so the
        // density peaks at the potential maximum x = 0, not the minimum
        let at_half = d.theta.get(128);
        let at_zero = d.theta.get(0);
        assert!(at_zero > at_half, "theta(0) = {at_zero} should exceed theta(1/2) = {at_half}");
    }

    #[test]
    fn matches_gibbs_density_at_zero_momentum() {
        // at P = 0 the optimal drift is −∇u, so the diffusion is reversible
        // and θ ∝ e^{−2u/σ²} up to discretization error
        let sol = solve_cell(&cos_model(256), &[0.0], 1.0, CellConfig::default()).unwrap();
        let measure = mather_measure(&sol).unwrap();
        let gibbs = gibbs_density(&sol.u, sol.sigma);
        let dist = rel_l1_distance(&measure.density.theta, &gibbs);
        assert!(dist <= 1e-2, "relative L1 distance {dist}");
    }

    #[test]
    fn identities_at_zero_momentum() {
        let model = cos_model(256);
        let sol = solve_cell(&model, &[0.0], 1.0, CellConfig::default()).unwrap();
        let measure = mather_measure(&sol).unwrap();
        let report =
            check_identities(&model, &sol, &measure, CellConfig::default(), 1e-2).unwrap();
        assert!(report.id1_err <= 1e-8, "id1 {}", report.id1_err);
        assert!(report.id2_err <= 1e-3, "id2 {}", report.id2_err);
        assert!(report.id3_gap <= 1e-2, "id3 {}", report.id3_gap);
        // mean velocity vanishes at P = 0 by symmetry
        assert!(measure.mean_velocity[0].abs() <= 1e-3);
    }

    #[test]
    fn identities_at_nonzero_momentum() {
        let model = cos_model(256);
        let sol = solve_cell(&model, &[1.0], 0.8, CellConfig::default()).unwrap();
        let measure = mather_measure(&sol).unwrap();
        let report =
            check_identities(&model, &sol, &measure, CellConfig::default(), 1e-2).unwrap();
        assert!(report.id1_err <= 1e-8, "id1 {}", report.id1_err);
        assert!(report.id2_err <= 1e-3, "id2 {}", report.id2_err);
        assert!(report.id3_gap <= 1e-2, "id3 {}", report.id3_gap);
        // moving momentum: mean velocity is near −∂H̄/∂P ≈ −0.98
        assert!((measure.mean_velocity[0] + 0.9805140677896951).abs() <= 1e-2);
    }

    #[test]
    fn two_d_density_integrates_and_balances() {
        let g = TorusGrid::new(2, 16).unwrap();
        let model = HamiltonianModel::mechanical(ScalarField::from_fn(g, |x| {
            (2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos()
        }));
        let sol = solve_cell(&model, &[0.0, 0.0], 1.0, CellConfig::default()).unwrap();
        let measure = mather_measure(&sol).unwrap();
        let theta = &measure.density.theta;
        assert_abs_diff_eq!(theta.integrate(None), 1.0, epsilon = 1e-12);
        assert!(measure.density.residual <= 1e-8);
        // mean velocity vanishes at P = 0 up to the first-order upwind bias
        // near the ridge where the optimal drift changes sign (O(h) at n=16)
        assert!(
            measure.mean_velocity[0].abs() <= 1e-2 && measure.mean_velocity[1].abs() <= 1e-2,
            "mean velocity should vanish at P = 0, got {:?}",
            measure.mean_velocity
        );
    }

    #[test]
    fn rank_tolerance_is_honored() {
        // an absurd rank tolerance must flag the system as deficient
        let g = TorusGrid::new(1, 32).unwrap();
        let v = VectorField::zeros(g);
        assert!(matches!(
            invariant_density(&v, 1.0, 1.0),
            Err(DensityError::SingularBeyondNullity { .. })
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            // duality against the generator is machine-exact for ANY drift
            // field, not just optimal ones: ∫(A^v φ)θ_v = 0
            #[test]
            fn adjoint_duality_is_exact(
                amp in -2.0f64..2.0,
                freq in 1u32..4,
                sigma in 0.4f64..1.5,
                test_freq in 1u32..6,
            ) {
                let g = TorusGrid::new(1, 32).unwrap();
                let drift = VectorField::from_components(
                    g,
                    (0..32)
                        .map(|k| amp * (2.0 * std::f64::consts::PI * freq as f64 * k as f64 / 32.0).sin())
                        .collect(),
                )
                .unwrap();
                let d = invariant_density(&drift, sigma, 1e-12).unwrap();
                let phi = ScalarField::from_fn(g, |x| {
                    (2.0 * std::f64::consts::PI * test_freq as f64 * x[0]).sin()
                });
                let aphi = generator_apply(&drift, sigma, &phi);
                prop_assert!(aphi.integrate(Some(&d.theta)).abs() <= 1e-9);
            }

            // mass is always exactly one and density nonnegative
            #[test]
            fn mass_and_positivity(amp in -3.0f64..3.0, sigma in 0.5f64..1.5) {
                let g = TorusGrid::new(1, 24).unwrap();
                let drift = VectorField::from_components(
                    g,
                    (0..24)
                        .map(|k| amp * (2.0 * std::f64::consts::PI * k as f64 / 24.0).cos())
                        .collect(),
                )
                .unwrap();
                let d = invariant_density(&drift, sigma, 1e-12).unwrap();
                prop_assert!((d.theta.integrate(None) - 1.0).abs() <= 1e-12);
                prop_assert!(d.theta.min() >= 0.0);
            }
        }
    }
}
