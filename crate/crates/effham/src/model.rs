//! Lagrangian/Hamiltonian pairs and the controlled-diffusion generator.
//!
//! Sign conventions are fixed here once and used everywhere else:
//!
//! * Legendre transform  H(p,x) = sup_v (−p·v − L(x,v)),
//! * optimal drift       v*(p,x) = −D_pH(p,x)  (the argmax of the sup),
//! * generator           A^v φ = σ²/2 Δφ + v·∇φ.
//!
//! Lagrangians are normalized to L ≥ 0 by adding a recorded constant shift at
//! construction; `lagrangian`/`hamiltonian` work in that shifted (effective)
//! convention so the duality L + H ≥ −p·v holds exactly, while `*_raw`
//! accessors and all externally reported effective-Hamiltonian values use the
//! unshifted convention (H̄_raw = H̄_eff + shift).
//!
//! Two model kinds exist: `mechanical` with L(x,v) = |v|²/2 − V(x) (so
//! H(p,x) = |p|²/2 + V(x)), and `tabulated` with L sampled on a velocity box
//! [−v_max, v_max]ⁿ; tabulated Legendre transforms are exhaustive maxima over
//! the velocity grid, no interpolation.

use crate::grid::{ScalarField, Scheme, TorusGrid, VectorField};
use serde::{Deserialize, Serialize};

/// Errors from model construction and Legendre-transform evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("Legendre argmax fell on the velocity-box boundary (p too large for v_max = {v_max}); enlarge the box")]
    ArgmaxOnBoundary { v_max: f64 },
    #[error("tabulated Lagrangian is not convex enough at x-node {x_node}, axis {axis}: second difference {found} < declared modulus {gamma_l}")]
    NotConvex { x_node: usize, axis: usize, found: f64, gamma_l: f64 },
    #[error("convexity modulus must be positive, got {0}")]
    NonPositiveModulus(f64),
    #[error("velocity box needs at least 2 nodes per axis, got {0}")]
    DegenerateVelocityBox(usize),
    #[error("Lagrangian table has {got} entries, expected {expected} (x-nodes x velocity-nodes)")]
    TableSize { expected: usize, got: usize },
    #[error("tabulated models cannot be resampled (velocity tables are nodal); requested n = {0}")]
    ResampleUnsupported(usize),
    #[error("grid error: {0}")]
    Grid(#[from] crate::grid::GridError),
}

/// Uniform velocity grid on [−v_max, v_max] per axis with m nodes
/// (Δv = 2·v_max/(m−1); endpoints included, v = 0 is a node for odd m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityBox {
    pub v_max: f64,
    pub m: usize,
}

impl VelocityBox {
    pub fn new(v_max: f64, m: usize) -> Result<Self, ModelError> {
        if m < 2 {
            return Err(ModelError::DegenerateVelocityBox(m));
        }
        Ok(VelocityBox { v_max, m })
    }

    pub fn delta(&self) -> f64 {
        2.0 * self.v_max / (self.m - 1) as f64
    }

    /// The j-th per-axis node, −v_max + j·Δv.
    pub fn axis_node(&self, j: usize) -> f64 {
        -self.v_max + j as f64 * self.delta()
    }

    /// Number of velocity nodes in the full box, mⁿ.
    pub fn node_count(&self, dim: usize) -> usize {
        self.m.pow(dim as u32)
    }

    /// Per-axis indices of flat velocity index `j` (jx fastest).
    pub fn unindex(&self, j: usize, dim: usize) -> [usize; 2] {
        match dim {
            1 => [j, 0],
            _ => [j % self.m, j / self.m],
        }
    }

    /// The velocity vector of flat node `j`.
    pub fn velocity(&self, j: usize, dim: usize) -> Vec<f64> {
        let idx = self.unindex(j, dim);
        (0..dim).map(|a| self.axis_node(idx[a])).collect()
    }

    /// Whether flat node `j` touches the box boundary on any axis.
    pub fn on_boundary(&self, j: usize, dim: usize) -> bool {
        let idx = self.unindex(j, dim);
        (0..dim).any(|a| idx[a] == 0 || idx[a] == self.m - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// L(x,v) = |v|²/2 − V(x), H(p,x) = |p|²/2 + V(x).
    Mechanical { potential: ScalarField },
    /// L sampled at every (x-node, velocity-node); row-major, x outer,
    /// velocity inner (flat velocity index jx + m·jy).
    Tabulated { vbox: VelocityBox, l_raw: Vec<f64> },
}

/// A Lagrangian with its Legendre-transformed Hamiltonian on a torus grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct HamiltonianModel {
    grid: TorusGrid,
    kind: ModelKind,
    /// Constant added to L so L ≥ 0 (recorded; raw = effective − shift).
    shift: f64,
    /// Declared lower bound on D²_vv L (= 1 for mechanical).
    gamma_l: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    grid: TorusGrid,
    kind: ModelKind,
    gamma_l: f64,
}

impl From<HamiltonianModel> for ModelRepr {
    fn from(m: HamiltonianModel) -> Self {
        ModelRepr { grid: m.grid, kind: m.kind, gamma_l: m.gamma_l }
    }
}

impl TryFrom<ModelRepr> for HamiltonianModel {
    type Error = ModelError;
    fn try_from(r: ModelRepr) -> Result<Self, ModelError> {
        match r.kind {
            ModelKind::Mechanical { potential } => Ok(HamiltonianModel::mechanical(potential)),
            ModelKind::Tabulated { vbox, l_raw } => {
                HamiltonianModel::tabulated(r.grid, vbox, l_raw, r.gamma_l)
            }
        }
    }
}

impl HamiltonianModel {
    /// Mechanical model from a sampled potential; the normalizing shift is
    /// max(0, max V) so that L = |v|²/2 − V + shift ≥ 0.
    pub fn mechanical(potential: ScalarField) -> Self {
        let shift = potential.max().max(0.0);
        HamiltonianModel {
            grid: potential.grid(),
            kind: ModelKind::Mechanical { potential },
            shift,
            gamma_l: 1.0,
        }
    }

    /// Tabulated model from raw L samples (x outer, velocity inner). The
    /// declared convexity modulus is spot-checked against per-axis second
    /// differences at load; the normalizing shift is max(0, −min L).
    pub fn tabulated(
        grid: TorusGrid,
        vbox: VelocityBox,
        l_raw: Vec<f64>,
        gamma_l: f64,
    ) -> Result<Self, ModelError> {
        if gamma_l <= 0.0 {
            return Err(ModelError::NonPositiveModulus(gamma_l));
        }
        let nx = grid.node_count();
        let nv = vbox.node_count(grid.dim());
        if l_raw.len() != nx * nv {
            return Err(ModelError::TableSize { expected: nx * nv, got: l_raw.len() });
        }
        // strict convexity in v: interior second differences per axis >= gamma_l
        let dv2 = vbox.delta() * vbox.delta();
        let m = vbox.m;
        for x_node in 0..nx {
            let row = &l_raw[x_node * nv..(x_node + 1) * nv];
            for j in 0..nv {
                let idx = vbox.unindex(j, grid.dim());
                for axis in 0..grid.dim() {
                    if idx[axis] == 0 || idx[axis] == m - 1 {
                        continue;
                    }
                    let stride = if axis == 0 { 1 } else { m };
                    let second = (row[j + stride] - 2.0 * row[j] + row[j - stride]) / dv2;
                    if second < gamma_l - 1e-9 {
                        return Err(ModelError::NotConvex { x_node, axis, found: second, gamma_l });
                    }
                }
            }
        }
        let min_l = l_raw.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = (-min_l).max(0.0);
        Ok(HamiltonianModel { grid, kind: ModelKind::Tabulated { vbox, l_raw }, shift, gamma_l })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn is_mechanical(&self) -> bool {
        matches!(self.kind, ModelKind::Mechanical { .. })
    }

    /// The recorded normalizing constant with L_eff = L_raw + shift.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Declared lower bound on D²_vv L.
    pub fn gamma_l(&self) -> f64 {
        self.gamma_l
    }

    /// Upper convexity bound on D²_pp H (mechanical: exactly 1; tabulated:
    /// 1/γ_L, the standard dual bound).
    pub fn gamma_upper(&self) -> f64 {
        match self.kind {
            ModelKind::Mechanical { .. } => 1.0,
            ModelKind::Tabulated { .. } => 1.0 / self.gamma_l,
        }
    }

    /// Raw potential samples for mechanical models.
    pub fn potential(&self) -> Option<&ScalarField> {
        match &self.kind {
            ModelKind::Mechanical { potential } => Some(potential),
            ModelKind::Tabulated { .. } => None,
        }
    }

    pub fn velocity_box(&self) -> Option<VelocityBox> {
        match &self.kind {
            ModelKind::Mechanical { .. } => None,
            ModelKind::Tabulated { vbox, .. } => Some(*vbox),
        }
    }

    /// Effective Lagrangian L_eff = L_raw + shift ≥ 0 at an x-node. Tabulated
    /// samples are nodal in v; the nearest velocity node is used (callers pass
    /// node velocities).
    pub fn lagrangian(&self, x_node: usize, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.grid.dim());
        match &self.kind {
            ModelKind::Mechanical { potential } => {
                let kin: f64 = v.iter().map(|vi| vi * vi).sum::<f64>() / 2.0;
                kin - potential.get(x_node) + self.shift
            }
            ModelKind::Tabulated { vbox, l_raw } => {
                let nv = vbox.node_count(self.grid.dim());
                let mut flat = 0;
                let mut stride = 1;
                for a in 0..self.grid.dim() {
                    let pos = (v[a] + vbox.v_max) / vbox.delta();
                    let j = pos.round().max(0.0).min((vbox.m - 1) as f64) as usize;
                    debug_assert!(
                        (v[a] - vbox.axis_node(j)).abs() <= 1e-9 * vbox.v_max.max(1.0),
                        "tabulated Lagrangian queried off the velocity grid"
                    );
                    flat += j * stride;
                    stride *= vbox.m;
                }
                l_raw[x_node * nv + flat] + self.shift
            }
        }
    }

    /// Raw (unshifted) Lagrangian.
    pub fn lagrangian_raw(&self, x_node: usize, v: &[f64]) -> f64 {
        self.lagrangian(x_node, v) - self.shift
    }

    /// Effective Hamiltonian value H_eff(p,x) = sup_v(−p·v − L_eff(x,v)).
    /// Mechanical: |p|²/2 + V(x) − shift exactly. Tabulated: exhaustive max
    /// over velocity nodes, erroring when the argmax touches the box boundary
    /// (the box truncates the transform; the caller must enlarge v_max).
    pub fn hamiltonian(&self, p: &[f64], x_node: usize) -> Result<f64, ModelError> {
        debug_assert_eq!(p.len(), self.grid.dim());
        match &self.kind {
            ModelKind::Mechanical { potential } => {
                let kin: f64 = p.iter().map(|pi| pi * pi).sum::<f64>() / 2.0;
                Ok(kin + potential.get(x_node) - self.shift)
            }
            ModelKind::Tabulated { vbox, .. } => {
                let (_, value) = self.tabulated_argmax(vbox, p, x_node)?;
                Ok(value)
            }
        }
    }

    /// Raw (unshifted) Hamiltonian, H_raw = H_eff + shift.
    pub fn hamiltonian_raw(&self, p: &[f64], x_node: usize) -> Result<f64, ModelError> {
        Ok(self.hamiltonian(p, x_node)? + self.shift)
    }

    /// The optimal drift v*(p,x) = −D_pH(p,x): mechanical −p exactly;
    /// tabulated the argmax velocity node of −p·v − L(x,v), ties broken
    /// toward smaller lexicographic v.
    pub fn optimal_velocity(&self, p: &[f64], x_node: usize) -> Result<Vec<f64>, ModelError> {
        debug_assert_eq!(p.len(), self.grid.dim());
        match &self.kind {
            ModelKind::Mechanical { .. } => Ok(p.iter().map(|pi| -pi).collect()),
            ModelKind::Tabulated { vbox, .. } => {
                let (j, _) = self.tabulated_argmax(vbox, p, x_node)?;
                Ok(vbox.velocity(j, self.grid.dim()))
            }
        }
    }

    /// Exhaustive Legendre argmax over the velocity grid. Iterating in flat
    /// order with strict improvement keeps the first (lexicographically
    /// smallest) maximizer on exact ties.
    fn tabulated_argmax(
        &self,
        vbox: &VelocityBox,
        p: &[f64],
        x_node: usize,
    ) -> Result<(usize, f64), ModelError> {
        let ModelKind::Tabulated { l_raw, .. } = &self.kind else { unreachable!() };
        let dim = self.grid.dim();
        let nv = vbox.node_count(dim);
        let row = &l_raw[x_node * nv..(x_node + 1) * nv];
        let mut best_j = 0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..nv {
            let v = vbox.velocity(j, dim);
            let cand = -p.iter().zip(&v).map(|(pi, vi)| pi * vi).sum::<f64>() - (row[j] + self.shift);
            if cand > best {
                best = cand;
                best_j = j;
            }
        }
        if vbox.on_boundary(best_j, dim) {
            return Err(ModelError::ArgmaxOnBoundary { v_max: vbox.v_max });
        }
        Ok((best_j, best))
    }

    /// Resample a mechanical model's potential onto an n-node grid by
    /// periodic (bi)linear interpolation. Tabulated models are nodal in both
    /// variables and refuse to resample.
    pub fn resample(&self, n: usize) -> Result<Self, ModelError> {
        match &self.kind {
            ModelKind::Tabulated { .. } => Err(ModelError::ResampleUnsupported(n)),
            ModelKind::Mechanical { potential } => {
                if n == self.grid.nodes_per_axis() {
                    return Ok(self.clone());
                }
                let new_grid = TorusGrid::new(self.grid.dim(), n)?;
                let resampled = ScalarField::from_fn(new_grid, |x| interp_periodic(potential, x));
                Ok(HamiltonianModel::mechanical(resampled))
            }
        }
    }
}

/// Periodic multilinear interpolation of a nodal field at a point of [0,1)ⁿ.
pub(crate) fn interp_periodic(f: &ScalarField, x: &[f64]) -> f64 {
    interp_values(f.grid(), f.values(), x)
}

/// Periodic multilinear interpolation over raw nodal values on a grid.
pub(crate) fn interp_values(g: TorusGrid, values: &[f64], x: &[f64]) -> f64 {
    let n = g.nodes_per_axis() as f64;
    match g.dim() {
        1 => {
            let s = (x[0].rem_euclid(1.0)) * n;
            let i0 = s.floor() as usize % g.nodes_per_axis();
            let t = s - s.floor();
            let i1 = (i0 + 1) % g.nodes_per_axis();
            (1.0 - t) * values[i0] + t * values[i1]
        }
        _ => {
            let sx = (x[0].rem_euclid(1.0)) * n;
            let sy = (x[1].rem_euclid(1.0)) * n;
            let ix = sx.floor() as usize % g.nodes_per_axis();
            let iy = sy.floor() as usize % g.nodes_per_axis();
            let (tx, ty) = (sx - sx.floor(), sy - sy.floor());
            let (jx, jy) = ((ix + 1) % g.nodes_per_axis(), (iy + 1) % g.nodes_per_axis());
            let f00 = values[g.index(&[ix, iy])];
            let f10 = values[g.index(&[jx, iy])];
            let f01 = values[g.index(&[ix, jy])];
            let f11 = values[g.index(&[jx, jy])];
            (1.0 - tx) * (1.0 - ty) * f00 + tx * (1.0 - ty) * f10
                + (1.0 - tx) * ty * f01 + tx * ty * f11
        }
    }
}

/// The controlled-diffusion generator A^v φ = σ²/2 Δφ + v·∇φ, with the drift
/// term upwinded by the sign of v (the discretization every solver shares).
pub fn generator_apply(v: &VectorField, sigma: f64, phi: &ScalarField) -> ScalarField {
    assert_eq!(v.grid(), phi.grid(), "drift and field live on different grids");
    let lap = phi.laplacian();
    let advect = v.dot(&phi.gradient(Scheme::UpwindWithDrift(v)));
    let half_s2 = 0.5 * sigma * sigma;
    ScalarField::from_values(
        phi.grid(),
        lap.values()
            .iter()
            .zip(advect.values())
            .map(|(l, a)| half_s2 * l + a)
            .collect(),
    )
    .expect("same grid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cos_potential(n: usize) -> ScalarField {
        let g = TorusGrid::new(1, n).unwrap();
        ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos())
    }

    fn quadratic_table(grid: TorusGrid, vbox: VelocityBox) -> Vec<f64> {
        let nv = vbox.node_count(grid.dim());
        let mut l = Vec::with_capacity(grid.node_count() * nv);
        for _x in grid.nodes() {
            for j in 0..nv {
                let v = vbox.velocity(j, grid.dim());
                l.push(v.iter().map(|vi| vi * vi).sum::<f64>() / 2.0);
            }
        }
        l
    }

    #[test]
    fn mechanical_free_hamiltonian() {
        let g = TorusGrid::new(1, 16).unwrap();
        let m = HamiltonianModel::mechanical(ScalarField::constant(g, 0.0));
        assert_eq!(m.shift(), 0.0);
        assert_abs_diff_eq!(m.hamiltonian(&[1.0], 0).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mechanical_cosine_shift_and_values() {
        let m = HamiltonianModel::mechanical(cos_potential(256));
        // V max = 1 at x = 0, so the normalizing shift is 1
        assert_abs_diff_eq!(m.shift(), 1.0, epsilon = 1e-15);
        // effective value at p = 0, x = 0 is V(0) − shift = 0; raw is 1
        assert_abs_diff_eq!(m.hamiltonian(&[0.0], 0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.hamiltonian_raw(&[0.0], 0).unwrap(), 1.0, epsilon = 1e-15);
        // L_eff ≥ 0 at sampled velocities
        for x in (0..256).step_by(17) {
            for k in -8..=8 {
                let v = k as f64 / 2.0;
                assert!(m.lagrangian(x, &[v]) >= -1e-15);
            }
        }
    }

    #[test]
    fn optimal_velocity_is_minus_p_for_mechanical() {
        let g = TorusGrid::new(2, 8).unwrap();
        let m = HamiltonianModel::mechanical(ScalarField::constant(g, 0.0));
        assert_eq!(m.optimal_velocity(&[2.0, -1.0], 3).unwrap(), vec![-2.0, 1.0]);
        assert_eq!(m.optimal_velocity(&[0.0, 0.0], 0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn tabulated_legendre_matches_closed_form() {
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(4.0, 81).unwrap();
        let m = HamiltonianModel::tabulated(g, vbox, quadratic_table(g, vbox), 0.9).unwrap();
        let dv = vbox.delta();
        // closed-form H(p) = p²/2 at p = 1; v = −1 is exactly a node here
        let h = m.hamiltonian(&[1.0], 0).unwrap();
        assert!((h - 0.5).abs() <= 2.0 * dv * dv);
        let v = m.optimal_velocity(&[1.0], 0).unwrap();
        assert!((v[0] + 1.0).abs() <= dv);
        // off-node momentum still lands within the advertised error
        let h2 = m.hamiltonian(&[0.93], 0).unwrap();
        assert!((h2 - 0.93f64.powi(2) / 2.0).abs() <= 2.0 * dv * dv);
    }

    #[test]
    fn tabulated_argmax_on_boundary_is_an_error() {
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(2.0, 21).unwrap();
        let m = HamiltonianModel::tabulated(g, vbox, quadratic_table(g, vbox), 0.9).unwrap();
        assert!(matches!(
            m.hamiltonian(&[10.0], 0),
            Err(ModelError::ArgmaxOnBoundary { .. })
        ));
    }

    #[test]
    fn tabulated_convexity_checked_at_load() {
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(1.0, 11).unwrap();
        let mut table = quadratic_table(g, vbox);
        table[5] += 1.0; // concave dent at one sample
        assert!(matches!(
            HamiltonianModel::tabulated(g, vbox, table, 0.9),
            Err(ModelError::NotConvex { .. })
        ));
        assert!(matches!(
            HamiltonianModel::tabulated(g, vbox, quadratic_table(g, vbox), -1.0),
            Err(ModelError::NonPositiveModulus(_))
        ));
    }

    #[test]
    fn tabulated_shift_normalizes_l() {
        // L = v²/2 − 1 has min −1, so shift = 1 and effective L ≥ 0
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(2.0, 21).unwrap();
        let table: Vec<f64> = quadratic_table(g, vbox).iter().map(|l| l - 1.0).collect();
        let m = HamiltonianModel::tabulated(g, vbox, table, 0.9).unwrap();
        assert_abs_diff_eq!(m.shift(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.lagrangian(0, &[0.0]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.lagrangian_raw(0, &[0.0]), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn hamiltonian_midpoint_convex_in_p() {
        let m = HamiltonianModel::mechanical(cos_potential(32));
        for k in -4..=4 {
            let p0 = k as f64 * 0.5;
            let p1 = p0 + 1.0;
            let mid = 0.5 * (p0 + p1);
            let lhs = m.hamiltonian(&[mid], 7).unwrap();
            let rhs = 0.5 * (m.hamiltonian(&[p0], 7).unwrap() + m.hamiltonian(&[p1], 7).unwrap());
            assert!(lhs <= rhs + 1e-12);
        }
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(4.0, 41).unwrap();
        let t = HamiltonianModel::tabulated(g, vbox, quadratic_table(g, vbox), 0.9).unwrap();
        let dv = vbox.delta();
        for k in -2..=2 {
            let p0 = k as f64 * 0.5;
            let p1 = p0 + 0.5;
            let mid = 0.5 * (p0 + p1);
            let lhs = t.hamiltonian(&[mid], 0).unwrap();
            let rhs = 0.5 * (t.hamiltonian(&[p0], 0).unwrap() + t.hamiltonian(&[p1], 0).unwrap());
            assert!(lhs <= rhs + 2.0 * dv * dv);
        }
    }

    #[test]
    fn legendre_duality_with_equality_at_optimum() {
        let m = HamiltonianModel::mechanical(cos_potential(32));
        for k in -6..=6 {
            let p = [k as f64 / 3.0];
            let h = m.hamiltonian(&p, 11).unwrap();
            for j in -6..=6 {
                let v = [j as f64 / 2.0];
                assert!(m.lagrangian(11, &v) + h >= -p[0] * v[0] - 1e-12);
            }
            let vstar = m.optimal_velocity(&p, 11).unwrap();
            let slack = m.lagrangian(11, &vstar) + h + p[0] * vstar[0];
            assert_abs_diff_eq!(slack, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn shift_covariance_of_raw_hamiltonian() {
        let base = cos_potential(32);
        let shifted = base.map(|v| v + 2.5);
        let m0 = HamiltonianModel::mechanical(base);
        let m1 = HamiltonianModel::mechanical(shifted);
        for x in [0, 5, 19] {
            let a = m0.hamiltonian_raw(&[0.7], x).unwrap();
            let b = m1.hamiltonian_raw(&[0.7], x).unwrap();
            assert_abs_diff_eq!(b - a, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn generator_kills_constants_exactly() {
        let g = TorusGrid::new(2, 8).unwrap();
        let phi = ScalarField::constant(g, 9.9);
        let v = VectorField::constant(g, &[1.3, -0.4]);
        assert_eq!(generator_apply(&v, 0.7, &phi).sup_norm(), 0.0);
    }

    #[test]
    fn generator_with_zero_drift_is_half_laplacian() {
        let g = TorusGrid::new(1, 64).unwrap();
        let phi = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let v = VectorField::zeros(g);
        let a = generator_apply(&v, 1.0, &phi);
        let lap = phi.laplacian();
        for k in g.nodes() {
            assert_abs_diff_eq!(a.get(k), 0.5 * lap.get(k), epsilon = 1e-12);
        }
    }

    #[test]
    fn generator_pure_advection_first_order() {
        let n = 256;
        let g = TorusGrid::new(1, n).unwrap();
        let phi = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let v = VectorField::constant(g, &[1.0]);
        let a = generator_apply(&v, 0.0, &phi);
        let mut sup = 0.0f64;
        for k in g.nodes() {
            let exact = 2.0 * PI * (2.0 * PI * g.coord(k)[0]).cos();
            sup = sup.max((a.get(k) - exact).abs());
        }
        assert!(sup < 1e-1, "upwind advection sup-error {sup}");
    }

    #[test]
    fn generator_is_linear_in_phi() {
        let g = TorusGrid::new(1, 32).unwrap();
        let f1 = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let f2 = ScalarField::from_fn(g, |x| (4.0 * PI * x[0]).cos());
        let v = VectorField::constant(g, &[0.8]);
        let combo = ScalarField::from_values(
            g,
            f1.values().iter().zip(f2.values()).map(|(a, b)| 2.0 * a - 3.0 * b).collect(),
        )
        .unwrap();
        let lhs = generator_apply(&v, 0.9, &combo);
        let (a1, a2) = (generator_apply(&v, 0.9, &f1), generator_apply(&v, 0.9, &f2));
        for k in g.nodes() {
            assert_abs_diff_eq!(lhs.get(k), 2.0 * a1.get(k) - 3.0 * a2.get(k), epsilon = 1e-10);
        }
    }

    #[test]
    fn resample_mechanical_interpolates_periodically() {
        let m = HamiltonianModel::mechanical(cos_potential(256));
        let down = m.resample(128).unwrap();
        let vd = down.potential().unwrap();
        // common nodes coincide with fresh samples
        for k in 0..128 {
            let x = k as f64 / 128.0;
            assert_abs_diff_eq!(vd.get(k), (2.0 * PI * x).cos(), epsilon = 1e-12);
        }
        // non-divisor target stays within the interpolation error budget
        let odd = m.resample(100).unwrap();
        let vo = odd.potential().unwrap();
        let h = 1.0 / 256.0;
        for k in 0..100 {
            let x = k as f64 / 100.0;
            let err = (vo.get(k) - (2.0 * PI * x).cos()).abs();
            assert!(err <= (2.0 * PI) * (2.0 * PI) * h * h, "interp error {err} at node {k}");
        }
        // tabulated models refuse
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(2.0, 21).unwrap();
        let t = HamiltonianModel::tabulated(g, vbox, quadratic_table(g, vbox), 0.9).unwrap();
        assert!(matches!(t.resample(16), Err(ModelError::ResampleUnsupported(16))));
    }

    #[test]
    fn model_serde_round_trip() {
        let m = HamiltonianModel::mechanical(cos_potential(32));
        let s = serde_json::to_string(&m).unwrap();
        let back: HamiltonianModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let g = TorusGrid::new(1, 8).unwrap();
        let vbox = VelocityBox::new(4.0, 41).unwrap();
        let t = HamiltonianModel::tabulated(g, vbox, quadratic_table(g, vbox), 0.9).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: HamiltonianModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            // Legendre duality L(x,v) + H(p,x) ≥ −p·v on sampled pairs
            #[test]
            fn duality_inequality(p in -3.0f64..3.0, v in -3.0f64..3.0, amp in 0.1f64..2.0) {
                let g = TorusGrid::new(1, 16).unwrap();
                let pot = ScalarField::from_fn(g, |x| amp * (2.0 * std::f64::consts::PI * x[0]).cos());
                let m = HamiltonianModel::mechanical(pot);
                let h = m.hamiltonian(&[p], 5).unwrap();
                prop_assert!(m.lagrangian(5, &[v]) + h + p * v >= -1e-12);
            }

            // the optimal velocity attains the sup for mechanical models
            #[test]
            fn optimum_attains(p in -3.0f64..3.0) {
                let g = TorusGrid::new(1, 16).unwrap();
                let m = HamiltonianModel::mechanical(ScalarField::constant(g, 0.0));
                let h = m.hamiltonian(&[p], 0).unwrap();
                let v = m.optimal_velocity(&[p], 0).unwrap();
                let attained = -p * v[0] - m.lagrangian(0, &v);
                prop_assert!((attained - h).abs() < 1e-12);
            }
        }
    }
}
