//! Uniform periodic grids on the flat torus 𝕋ⁿ = ℝⁿ/ℤⁿ (n = 1 or 2) and the
//! discrete calculus every solver builds on: centered and upwind differences,
//! the centered Laplacian, circular shifts, and rectangle-rule quadrature.
//!
//! All fields are nodal samples of periodic functions; indexing wraps modulo
//! the per-axis node count, so periodicity is structural rather than enforced.
//! In 2D, node k represents (ix, iy) with k = ix + n·iy (x fastest).

use serde::{Deserialize, Serialize};
use std::fmt;

/// Errors from grid and field construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    InvalidDim(usize),
    #[error("grids need at least 8 nodes per axis, got {0}")]
    TooFewNodes(usize),
    #[error("value count {got} does not match grid node count {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A uniform periodic grid on [0,1)ⁿ with spacing h = 1/nodes_per_axis.
///
/// Node coordinates are computed as i/n directly (never accumulated as i·h),
/// so the torus identification with [0,1)ⁿ is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TorusGrid {
    dim: usize,
    nodes_per_axis: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    dim: usize,
    nodes_per_axis: usize,
}

impl From<TorusGrid> for GridRepr {
    fn from(g: TorusGrid) -> Self {
        GridRepr { dim: g.dim, nodes_per_axis: g.nodes_per_axis }
    }
}

impl TryFrom<GridRepr> for TorusGrid {
    type Error = GridError;
    fn try_from(r: GridRepr) -> Result<Self, GridError> {
        TorusGrid::new(r.dim, r.nodes_per_axis)
    }
}

impl TorusGrid {
    pub fn new(dim: usize, nodes_per_axis: usize) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::InvalidDim(dim));
        }
        if nodes_per_axis < 8 {
            return Err(GridError::TooFewNodes(nodes_per_axis));
        }
        Ok(TorusGrid { dim, nodes_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    /// Mesh width h = 1/n.
    pub fn spacing(&self) -> f64 {
        1.0 / self.nodes_per_axis as f64
    }

    /// Total number of nodes, nⁿ.
    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.pow(self.dim as u32)
    }

    /// Quadrature weight of one node, hⁿ.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Flat index of per-axis indices (wrapping is the caller's concern here;
    /// `idx` entries must be < nodes_per_axis).
    pub fn index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        match self.dim {
            1 => idx[0],
            _ => idx[0] + self.nodes_per_axis * idx[1],
        }
    }

    /// Per-axis indices of a flat node index.
    pub fn unindex(&self, node: usize) -> [usize; 2] {
        match self.dim {
            1 => [node, 0],
            _ => [node % self.nodes_per_axis, node / self.nodes_per_axis],
        }
    }

    /// Coordinates of a node, exact rationals i/n rounded once.
    pub fn coord(&self, node: usize) -> Vec<f64> {
        let ij = self.unindex(node);
        let n = self.nodes_per_axis as f64;
        (0..self.dim).map(|a| ij[a] as f64 / n).collect()
    }

    /// Neighbor of `node` along `axis`, `step` cells away, wrapping.
    pub fn neighbor(&self, node: usize, axis: usize, step: isize) -> usize {
        let n = self.nodes_per_axis as isize;
        let mut ij = self.unindex(node);
        let moved = (ij[axis] as isize + step).rem_euclid(n) as usize;
        ij[axis] = moved;
        self.index(&ij[..self.dim])
    }

    /// Iterate all nodes.
    pub fn nodes(&self) -> std::ops::Range<usize> {
        0..self.node_count()
    }
}

impl fmt::Display for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T^{} grid, {} nodes/axis", self.dim, self.nodes_per_axis)
    }
}

/// Grid samples of a periodic scalar function (u, V, θ, ψ, …).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalarRepr", into = "ScalarRepr")]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScalarRepr {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl From<ScalarField> for ScalarRepr {
    fn from(f: ScalarField) -> Self {
        ScalarRepr { grid: f.grid, values: f.values }
    }
}

impl TryFrom<ScalarRepr> for ScalarField {
    type Error = GridError;
    fn try_from(r: ScalarRepr) -> Result<Self, GridError> {
        ScalarField::from_values(r.grid, r.values)
    }
}

impl ScalarField {
    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::LengthMismatch { expected: grid.node_count(), got: values.len() });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.node_count()] }
    }

    /// Sample a function of the node coordinates.
    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = grid.nodes().map(|k| f(&grid.coord(k))).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise map, same grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// self − other, nodewise.
    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        ScalarField { grid: self.grid, values }
    }

    /// Centered second difference summed over axes: (Δ_h f)_k.
    pub fn laplacian(&self) -> ScalarField {
        let g = self.grid;
        let h2 = g.spacing() * g.spacing();
        let mut out = vec![0.0; g.node_count()];
        for k in g.nodes() {
            let mut acc = 0.0;
            for a in 0..g.dim() {
                let fp = self.values[g.neighbor(k, a, 1)];
                let fm = self.values[g.neighbor(k, a, -1)];
                acc += (fp - 2.0 * self.values[k] + fm) / h2;
            }
            out[k] = acc;
        }
        ScalarField { grid: g, values: out }
    }

    /// Discrete gradient. `Centered` uses symmetric differences; upwinding
    /// differences forward where the drift component is > 0, backward where
    /// < 0, and centered at exact zeros (the monotone-scheme convention).
    pub fn gradient(&self, scheme: Scheme<'_>) -> VectorField {
        let g = self.grid;
        if let Scheme::UpwindWithDrift(w) = scheme {
            assert_eq!(w.grid(), g, "drift lives on a different grid");
        }
        let h = g.spacing();
        let n = g.node_count();
        let mut comps = vec![0.0; g.dim() * n];
        for k in g.nodes() {
            for a in 0..g.dim() {
                let fp = self.values[g.neighbor(k, a, 1)];
                let fm = self.values[g.neighbor(k, a, -1)];
                let f0 = self.values[k];
                comps[a * n + k] = match scheme {
                    Scheme::Centered => (fp - fm) / (2.0 * h),
                    Scheme::UpwindWithDrift(w) => {
                        let wa = w.component(a)[k];
                        if wa > 0.0 {
                            (fp - f0) / h
                        } else if wa < 0.0 {
                            (f0 - fm) / h
                        } else {
                            (fp - fm) / (2.0 * h)
                        }
                    }
                };
            }
        }
        VectorField { grid: g, comps }
    }

    /// Circular shift by whole cells: result(x) = f(x + offset·h), one offset
    /// entry per axis. Shifting by a full period is the identity.
    pub fn shift(&self, offset: &[i64]) -> ScalarField {
        let g = self.grid;
        assert_eq!(offset.len(), g.dim(), "one offset entry per axis");
        let mut out = vec![0.0; g.node_count()];
        for k in g.nodes() {
            let mut src = k;
            for a in 0..g.dim() {
                src = g.neighbor(src, a, offset[a] as isize);
            }
            out[k] = self.values[src];
        }
        ScalarField { grid: g, values: out }
    }

    /// Rectangle-rule quadrature hⁿ Σ f·w (w ≡ 1 when no weight is given);
    /// spectrally accurate for smooth periodic integrands.
    pub fn integrate(&self, weight: Option<&ScalarField>) -> f64 {
        let vol = self.grid.cell_volume();
        match weight {
            None => vol * self.values.iter().sum::<f64>(),
            Some(w) => {
                assert_eq!(w.grid, self.grid, "weight lives on a different grid");
                vol * self.values.iter().zip(&w.values).map(|(a, b)| a * b).sum::<f64>()
            }
        }
    }
}

/// Difference scheme selector for [`ScalarField::gradient`].
#[derive(Clone, Copy)]
pub enum Scheme<'a> {
    Centered,
    UpwindWithDrift(&'a VectorField),
}

/// Grid samples of a periodic vector field (drifts, momenta gradients).
/// Components are stored axis-major: component a of node k at comps[a·N + k].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VectorRepr", into = "VectorRepr")]
pub struct VectorField {
    grid: TorusGrid,
    comps: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct VectorRepr {
    grid: TorusGrid,
    comps: Vec<f64>,
}

impl From<VectorField> for VectorRepr {
    fn from(f: VectorField) -> Self {
        VectorRepr { grid: f.grid, comps: f.comps }
    }
}

impl TryFrom<VectorRepr> for VectorField {
    type Error = GridError;
    fn try_from(r: VectorRepr) -> Result<Self, GridError> {
        VectorField::from_components(r.grid, r.comps)
    }
}

impl VectorField {
    pub fn from_components(grid: TorusGrid, comps: Vec<f64>) -> Result<Self, GridError> {
        let expected = grid.dim() * grid.node_count();
        if comps.len() != expected {
            return Err(GridError::LengthMismatch { expected, got: comps.len() });
        }
        Ok(VectorField { grid, comps })
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        VectorField { grid, comps: vec![0.0; grid.dim() * grid.node_count()] }
    }

    /// Constant field with the given per-axis components.
    pub fn constant(grid: TorusGrid, v: &[f64]) -> Self {
        assert_eq!(v.len(), grid.dim(), "one component per axis");
        let n = grid.node_count();
        let mut comps = vec![0.0; grid.dim() * n];
        for a in 0..grid.dim() {
            comps[a * n..(a + 1) * n].fill(v[a]);
        }
        VectorField { grid, comps }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// All components of axis `a`, one entry per node.
    pub fn component(&self, a: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.comps[a * n..(a + 1) * n]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut [f64] {
        let n = self.grid.node_count();
        &mut self.comps[a * n..(a + 1) * n]
    }

    /// The vector at one node (dim entries).
    pub fn at(&self, node: usize) -> Vec<f64> {
        (0..self.grid.dim()).map(|a| self.component(a)[node]).collect()
    }

    /// Largest |component| over all nodes and axes.
    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise dot product with another vector field.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let n = self.grid.node_count();
        let mut values = vec![0.0; n];
        for a in 0..self.grid.dim() {
            let (sa, oa) = (self.component(a), other.component(a));
            for k in 0..n {
                values[k] += sa[k] * oa[k];
            }
        }
        ScalarField { grid: self.grid, values }
    }
}
